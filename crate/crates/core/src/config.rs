//! Pipeline-wide configuration: one TOML file, `STARTLE_*` environment
//! overrides, then command-line flags on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{Architecture, Hyperparameters, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::eval::ApVariant;
use crate::features::{build_lmcm_kernel, LmcmKernel, FEATURE_COUNT};
use crate::ingest::{MotionGateConfig, DEFAULT_CLIP_LEN, DEFAULT_FPS};
use crate::synth::ScenarioConfig;
use crate::tracker::TrackerConfig;

pub const ENV_PREFIX: &str = "STARTLE_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelChoice {
    /// Binomial spatial profile with a (-1, 2, -1) temporal weighting.
    #[default]
    Binomial,
}

impl KernelChoice {
    pub fn build(self) -> LmcmKernel {
        match self {
            KernelChoice::Binomial => build_lmcm_kernel(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub kernel: KernelChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub hidden: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        let h = Hyperparameters::default();
        let a = Architecture::default();
        Self {
            epochs: h.epochs,
            batch_size: h.batch_size,
            learning_rate: h.learning_rate,
            conv1_channels: a.conv1_channels,
            conv2_channels: a.conv2_channels,
            hidden: a.hidden,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathConfig {
    pub dataset: Option<PathBuf>,
    pub work: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub fps: f64,
    pub clip_len: usize,
    pub frame_width: usize,
    pub frame_height: usize,
    /// Training seed.
    pub seed: u64,
    pub threshold: f64,
    pub ap_variant: String,
    pub motion_gate: MotionGateConfig,
    pub tracker: TrackerConfig,
    pub features: FeatureConfig,
    pub classifier: ClassifierConfig,
    pub synth: ScenarioConfig,
    pub paths: PathConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fps: DEFAULT_FPS,
            clip_len: DEFAULT_CLIP_LEN,
            frame_width: 640,
            frame_height: 480,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            ap_variant: ApVariant::Step.name().to_string(),
            motion_gate: MotionGateConfig::default(),
            tracker: TrackerConfig::default(),
            features: FeatureConfig::default(),
            classifier: ClassifierConfig::default(),
            synth: ScenarioConfig::default(),
            paths: PathConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Defaults, then the file at `path` if given, then `STARTLE_*` variables
    /// from the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let base = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        let cfg = base.with_env(std::env::vars())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies overrides named `STARTLE_<KEY>` for top-level keys and
    /// `STARTLE_<SECTION>_<KEY>` for keys inside a section. Values are parsed
    /// as TOML literals, falling back to plain strings.
    pub fn with_env(&self, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(&self.to_toml()).map_err(|e| Error::Config(e.to_string()))?;
        let mut touched = false;
        for (name, raw) in vars {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let key = key.to_ascii_lowercase();
            let value = parse_env_value(&raw);
            if let Some(slot) = find_env_slot(&mut table, &key) {
                *slot = value;
                touched = true;
            } else if let Some((section, field)) = split_section(&key) {
                if let Some(toml::Value::Table(t)) = table.get_mut(section) {
                    t.insert(field.to_string(), value);
                    touched = true;
                }
            }
        }
        if !touched {
            return Ok(self.clone());
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("environment override: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) || self.clip_len == 0 {
            return Err(Error::Config("fps and clip_len must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        ApVariant::parse(&self.ap_variant)?;
        self.motion_gate.validate()?;
        self.tracker.validate()?;
        self.synth.validate()?;
        self.architecture().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.hyperparameters().validate()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            seq_len: self.clip_len,
            conv1_channels: self.classifier.conv1_channels,
            conv2_channels: self.classifier.conv2_channels,
            hidden: self.classifier.hidden,
        }
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        Hyperparameters {
            epochs: self.classifier.epochs,
            batch_size: self.classifier.batch_size,
            learning_rate: self.classifier.learning_rate,
            seed: self.seed,
        }
    }

    pub fn ap_variant(&self) -> Result<ApVariant> {
        ApVariant::parse(&self.ap_variant)
    }

    /// Shape of the classifier input tensor.
    pub fn tensor_shape(&self) -> (usize, usize) {
        (self.clip_len, FEATURE_COUNT)
    }
}

fn parse_env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn find_env_slot<'a>(table: &'a mut toml::Table, key: &str) -> Option<&'a mut toml::Value> {
    if matches!(table.get(key), Some(v) if !v.is_table()) {
        return table.get_mut(key);
    }
    let (section, field) = split_section(key)?;
    match table.get_mut(section)? {
        toml::Value::Table(t) => t.get_mut(field),
        _ => None,
    }
}

const SECTIONS: [&str; 6] = ["motion_gate", "tracker", "features", "classifier", "synth", "paths"];

fn split_section(key: &str) -> Option<(&'static str, &str)> {
    SECTIONS.iter().find_map(|s| {
        key.strip_prefix(s)
            .and_then(|rest| rest.strip_prefix('_'))
            .map(|field| (*s, field))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::SEQ_LEN;

    #[test]
    fn defaults_match_reference_constants() {
        let c = PipelineConfig::default();
        assert_eq!(c.fps, 10.0);
        assert_eq!(c.clip_len, 40);
        assert_eq!(c.tracker.gate_fraction, 0.15);
        assert_eq!(c.tracker.max_missed_frames, 5);
        assert_eq!(c.tracker.min_track_seconds, 2.0);
        assert_eq!(c.tensor_shape(), (40, 4));
        assert_eq!(c.threshold, 0.5);
        assert_eq!(SEQ_LEN, 40);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
        let partial = PipelineConfig::from_toml("threshold = 0.7\n[tracker]\ngate_fraction = 0.2\n").unwrap();
        assert_eq!(partial.threshold, 0.7);
        assert_eq!(partial.tracker.gate_fraction, 0.2);
        assert_eq!(partial.tracker.max_missed_frames, 5);
        assert!(PipelineConfig::from_toml("threshold = \"x\"").is_err());
    }

    #[test]
    fn environment_overrides() {
        let vars = [
            ("STARTLE_THRESHOLD", "0.8"),
            ("STARTLE_TRACKER_MAX_MISSED_FRAMES", "7"),
            ("STARTLE_SYNTH_N_CLIPS", "12"),
            ("STARTLE_AP_VARIANT", "interpolated"),
            ("STARTLE_PATHS_WORK", "/tmp/w"),
            ("OTHER_THRESHOLD", "0.1"),
        ]
        .map(|(k, v)| (k.to_string(), v.to_string()));
        let c = PipelineConfig::default().with_env(vars).unwrap();
        assert_eq!(c.threshold, 0.8);
        assert_eq!(c.tracker.max_missed_frames, 7);
        assert_eq!(c.synth.n_clips, 12);
        assert_eq!(c.ap_variant, "interpolated");
        assert_eq!(c.paths.work, Some(PathBuf::from("/tmp/w")));
    }

    #[test]
    fn bad_values_rejected() {
        let c = PipelineConfig {
            threshold: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let bad = PipelineConfig::default()
            .with_env([("STARTLE_CLIP_LEN".to_string(), "abc".to_string())]);
        assert!(bad.is_err());
    }
}

//! Adaptive per-pixel Gaussian-mixture background model used to discard
//! clips without motion.

use serde::{Deserialize, Serialize};

use super::{Clip, GrayFrame};
use crate::error::{Error, Result};

const INITIAL_VARIANCE: f64 = 0.05 * 0.05;
const MIN_VARIANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionGateConfig {
    pub num_gaussians: usize,
    pub learning_rate: f64,
    pub background_weight_threshold: f64,
    pub match_sigmas: f64,
    /// A frame counts as moving when its foreground fraction exceeds this.
    pub foreground_fraction: f64,
    pub min_motion_frames: usize,
}

impl Default for MotionGateConfig {
    fn default() -> Self {
        Self {
            num_gaussians: 3,
            learning_rate: 0.01,
            background_weight_threshold: 0.7,
            match_sigmas: 2.5,
            foreground_fraction: 0.001,
            min_motion_frames: 1,
        }
    }
}

impl MotionGateConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.num_gaussians > 0
            && self.learning_rate > 0.0
            && self.match_sigmas > 0.0
            && self.min_motion_frames > 0;
        if !positive {
            return Err(Error::Config("motion gate parameters must be strictly positive".into()));
        }
        if !(self.learning_rate <= 1.0) {
            return Err(Error::Config("motion gate learning_rate must be in (0, 1]".into()));
        }
        if !(self.background_weight_threshold > 0.0 && self.background_weight_threshold <= 1.0) {
            return Err(Error::Config(
                "background_weight_threshold must be in (0, 1]".into(),
            ));
        }
        // 1.0 is accepted: it is a valid way to reject every clip.
        if !(self.foreground_fraction > 0.0 && self.foreground_fraction <= 1.0) {
            return Err(Error::Config("foreground_fraction must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Component {
    weight: f64,
    mean: f64,
    variance: f64,
}

/// Per-pixel mixture of `num_gaussians` components. Components of each pixel
/// are kept sorted by decreasing weight.
#[derive(Debug, Clone)]
pub struct BackgroundModel {
    cfg: MotionGateConfig,
    width: usize,
    height: usize,
    components: Vec<Component>,
}

impl BackgroundModel {
    /// Seeds the model from `first`: one full-weight component per pixel at
    /// the observed intensity.
    pub fn new(first: &GrayFrame, cfg: MotionGateConfig) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.num_gaussians;
        let mut components = Vec::with_capacity(first.data.len() * k);
        for &x in &first.data {
            components.push(Component {
                weight: 1.0,
                mean: x,
                variance: INITIAL_VARIANCE,
            });
            for _ in 1..k {
                components.push(Component {
                    weight: 0.0,
                    mean: x,
                    variance: INITIAL_VARIANCE,
                });
            }
        }
        Ok(Self {
            cfg,
            width: first.width,
            height: first.height,
            components,
        })
    }

    /// Classifies every pixel of `frame` against the current model, then
    /// updates the model with it. Returns the number of foreground pixels.
    pub fn apply(&mut self, frame: &GrayFrame) -> Result<usize> {
        if frame.width != self.width || frame.height != self.height {
            return Err(Error::Shape(format!(
                "frame {}x{} does not match model {}x{}",
                frame.width, frame.height, self.width, self.height
            )));
        }
        let k = self.cfg.num_gaussians;
        let mut foreground = 0;
        for (px, &x) in frame.data.iter().enumerate() {
            let comps = &mut self.components[px * k..(px + 1) * k];
            if update_pixel(comps, x, &self.cfg) {
                foreground += 1;
            }
        }
        Ok(foreground)
    }

    /// Sum of component weights at every pixel.
    pub fn weight_sums(&self) -> Vec<f64> {
        self.components
            .chunks(self.cfg.num_gaussians)
            .map(|c| c.iter().map(|g| g.weight).sum())
            .collect()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Returns true when `x` is foreground under the pre-update model.
fn update_pixel(comps: &mut [Component], x: f64, cfg: &MotionGateConfig) -> bool {
    let alpha = cfg.learning_rate;

    let mut cumulative = 0.0;
    let mut background_len = comps.len();
    for (i, c) in comps.iter().enumerate() {
        cumulative += c.weight;
        if cumulative >= cfg.background_weight_threshold {
            background_len = i + 1;
            break;
        }
    }

    let matched = comps.iter().position(|c| {
        let d = x - c.mean;
        d * d <= cfg.match_sigmas * cfg.match_sigmas * c.variance
    });
    let is_foreground = !matches!(matched, Some(i) if i < background_len);

    match matched {
        Some(m) => {
            for (i, c) in comps.iter_mut().enumerate() {
                let hit = if i == m { 1.0 } else { 0.0 };
                c.weight = (1.0 - alpha) * c.weight + alpha * hit;
            }
            let c = &mut comps[m];
            c.mean = (1.0 - alpha) * c.mean + alpha * x;
            let d = x - c.mean;
            c.variance = ((1.0 - alpha) * c.variance + alpha * d * d).max(MIN_VARIANCE);
        }
        None => {
            for c in comps.iter_mut() {
                c.weight *= 1.0 - alpha;
            }
            let last = comps.len() - 1;
            comps[last] = Component {
                weight: alpha,
                mean: x,
                variance: INITIAL_VARIANCE,
            };
        }
    }

    let total: f64 = comps.iter().map(|c| c.weight).sum();
    for c in comps.iter_mut() {
        c.weight /= total;
    }
    comps.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    is_foreground
}

/// Runs the mixture model over the clip's frames in order and keeps the clip
/// when at least `min_motion_frames` frames have a foreground fraction above
/// `foreground_fraction`.
pub fn motion_gate(clip: &Clip, cfg: &MotionGateConfig) -> Result<bool> {
    cfg.validate()?;
    let pixels = clip.pixels.as_ref().ok_or_else(|| {
        Error::validation(format!(
            "clip {} has no pixel frames; skip motion gating for detection-only input",
            clip.clip_id
        ))
    })?;
    let Some(first) = pixels.first() else {
        return Ok(false);
    };
    let mut model = BackgroundModel::new(first, *cfg)?;
    let n = model.pixel_count() as f64;
    let mut moving = 0;
    for frame in &pixels[1..] {
        let fg = model.apply(frame)?;
        if fg as f64 / n > cfg.foreground_fraction {
            moving += 1;
        }
    }
    Ok(moving >= cfg.min_motion_frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Clip;

    fn textured(width: usize, height: usize) -> GrayFrame {
        let data = (0..width * height)
            .map(|i| {
                let (x, y) = ((i % width) as f64, (i / width) as f64);
                0.3 + 0.1 * ((x * 0.37).sin() * (y * 0.23).cos())
            })
            .collect();
        GrayFrame::new(width, height, data).unwrap()
    }

    fn clip_of(pixels: Vec<GrayFrame>) -> Clip {
        let (w, h) = (pixels[0].width, pixels[0].height);
        let n = pixels.len();
        Clip::new("c", 10.0, w, h, vec![Vec::new(); n], Some(pixels)).unwrap()
    }

    fn moving_blob_clip() -> Clip {
        let (w, h) = (96, 64);
        let bg = textured(w, h);
        // 18x17 box covers 5% of the frame
        let (bw, bh) = (18, 17);
        let frames = (0..40)
            .map(|t| {
                let mut f = bg.clone();
                let x0 = (t * 10) % (w - bw);
                for y in 20..20 + bh {
                    for x in x0..x0 + bw {
                        f.set(x, y, 0.95);
                    }
                }
                f
            })
            .collect();
        clip_of(frames)
    }

    #[test]
    fn identical_frames_discarded() {
        let clip = clip_of(vec![textured(32, 24); 40]);
        assert!(!motion_gate(&clip, &MotionGateConfig::default()).unwrap());
    }

    #[test]
    fn translating_blob_kept() {
        assert!(motion_gate(&moving_blob_clip(), &MotionGateConfig::default()).unwrap());
    }

    #[test]
    fn full_fraction_threshold_discards_everything() {
        let cfg = MotionGateConfig {
            foreground_fraction: 1.0,
            ..Default::default()
        };
        assert!(!motion_gate(&moving_blob_clip(), &cfg).unwrap());
    }

    #[test]
    fn missing_pixels_is_an_error() {
        let clip = Clip::new("c", 10.0, 8, 8, vec![Vec::new(); 40], None).unwrap();
        let err = motion_gate(&clip, &MotionGateConfig::default()).unwrap_err();
        assert!(err.to_string().contains("skip motion gating"));
    }

    #[test]
    fn gate_is_deterministic() {
        let clip = moving_blob_clip();
        let cfg = MotionGateConfig::default();
        assert_eq!(motion_gate(&clip, &cfg).unwrap(), motion_gate(&clip, &cfg).unwrap());
    }

    #[test]
    fn weights_stay_normalized() {
        let clip = moving_blob_clip();
        let px = clip.pixels.as_ref().unwrap();
        let mut model = BackgroundModel::new(&px[0], MotionGateConfig::default()).unwrap();
        for f in &px[1..] {
            model.apply(f).unwrap();
            for s in model.weight_sums() {
                assert!((s - 1.0).abs() <= 1e-6, "weight sum {s}");
            }
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = MotionGateConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = MotionGateConfig {
            background_weight_threshold: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}

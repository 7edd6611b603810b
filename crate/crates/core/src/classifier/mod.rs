//! Fixed-shape track tensors and the 1D-conv + LSTM startle classifier.

mod bundle;
mod network;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSeries, FEATURE_COUNT};

pub use bundle::{decode_bundle, encode_bundle, load_bundle, save_bundle, FORMAT_VERSION, MAGIC};
pub use network::{loss_and_gradients, total_loss, Architecture, ForwardCache, Params, PARAM_NAMES};
pub use train::{train, Hyperparameters, TrainingReport};

/// Default tensor length in frames.
pub const SEQ_LEN: usize = 40;
/// Clamp applied to confidences before taking logs.
pub const BCE_EPSILON: f64 = 1e-7;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Per-column min-max coefficients mapping `[lo, hi]` onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationCoefficients {
    pub lo: [f64; FEATURE_COUNT],
    pub hi: [f64; FEATURE_COUNT],
}

impl Default for NormalizationCoefficients {
    fn default() -> Self {
        Self {
            lo: [0.0; FEATURE_COUNT],
            hi: [1.0; FEATURE_COUNT],
        }
    }
}

impl NormalizationCoefficients {
    pub fn validate(&self) -> Result<()> {
        for c in 0..FEATURE_COUNT {
            if !(self.lo[c].is_finite() && self.hi[c].is_finite() && self.lo[c] < self.hi[c]) {
                return Err(Error::validation(format!(
                    "normalization column {c} has lo={} hi={}",
                    self.lo[c], self.hi[c]
                )));
            }
        }
        Ok(())
    }

    /// `2 (x - lo) / (hi - lo) - 1`, clipped to `[-1, 1]`.
    #[inline]
    pub fn normalize(&self, column: usize, x: f64) -> f64 {
        let (lo, hi) = (self.lo[column], self.hi[column]);
        (2.0 * (x - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
    }
}

/// Column-wise min and max over every training row. A constant column gets
/// `hi = lo + 1`.
pub fn fit_normalization(training: &[FeatureSeries]) -> Result<NormalizationCoefficients> {
    let mut lo = [f64::INFINITY; FEATURE_COUNT];
    let mut hi = [f64::NEG_INFINITY; FEATURE_COUNT];
    let mut rows = 0usize;
    for row in training.iter().flat_map(|s| &s.rows) {
        for (c, v) in row.values().into_iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::validation(format!(
                    "non-finite feature value in track frame {}",
                    row.frame_index
                )));
            }
            lo[c] = lo[c].min(v);
            hi[c] = hi[c].max(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::validation("normalization needs at least one feature row"));
    }
    for c in 0..FEATURE_COUNT {
        if lo[c] == hi[c] {
            hi[c] = lo[c] + 1.0;
        }
    }
    Ok(NormalizationCoefficients { lo, hi })
}

/// A `len x 4` row-major tensor; rows at and after `valid_len` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackTensor {
    pub values: Vec<[f64; FEATURE_COUNT]>,
    pub valid_len: usize,
}

impl TrackTensor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Normalizes the first `min(len, seq_len)` rows and zero-pads the rest.
/// Longer series are truncated.
pub fn to_tensor(
    series: &FeatureSeries,
    norm: &NormalizationCoefficients,
    seq_len: usize,
) -> Result<TrackTensor> {
    if series.is_empty() {
        return Err(Error::validation(format!(
            "track {} has an empty feature series",
            series.track_id
        )));
    }
    let valid_len = series.len().min(seq_len);
    let mut values = vec![[0.0; FEATURE_COUNT]; seq_len];
    for (dst, row) in values.iter_mut().zip(&series.rows) {
        for (c, v) in row.values().into_iter().enumerate() {
            dst[c] = norm.normalize(c, v);
        }
    }
    Ok(TrackTensor { values, valid_len })
}

/// Binary cross entropy with the confidence clamped to `[eps, 1 - eps]`.
pub fn loss_bce(confidence: f64, label: bool) -> f64 {
    let p = confidence.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Behavior {
    Startle,
    NonStartle,
}

impl Behavior {
    /// Inclusive threshold: `confidence >= threshold` is a startle.
    pub fn from_confidence(confidence: f64, threshold: f64) -> Self {
        if confidence >= threshold {
            Behavior::Startle
        } else {
            Behavior::NonStartle
        }
    }

    pub fn is_startle(self) -> bool {
        self == Behavior::Startle
    }
}

/// Network weights plus everything needed to apply them to raw features.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub arch: Architecture,
    pub params: Params,
    pub norm: NormalizationCoefficients,
    pub decision_threshold: f64,
    pub hyper: Hyperparameters,
    pub format_version: u32,
}

impl ModelBundle {
    /// Weights drawn uniformly from `+-1/sqrt(fan_in)` with a seeded generator.
    pub fn initialize(
        arch: Architecture,
        norm: NormalizationCoefficients,
        hyper: Hyperparameters,
    ) -> Result<Self> {
        arch.validate()?;
        norm.validate()?;
        Ok(Self {
            params: Params::init_uniform(&arch, hyper.seed),
            arch,
            norm,
            decision_threshold: DEFAULT_THRESHOLD,
            hyper,
            format_version: FORMAT_VERSION,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.params.check_shapes(&self.arch)?;
        self.norm.validate()?;
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return Err(Error::validation(format!(
                "decision threshold {} outside (0, 1)",
                self.decision_threshold
            )));
        }
        Ok(())
    }

    /// Startle confidences for a batch of tensors, in input order.
    pub fn forward_batch(&self, tensors: &[&TrackTensor]) -> Result<Vec<f64>> {
        for t in tensors {
            if t.len() != self.arch.seq_len {
                return Err(Error::Shape(format!(
                    "tensor has {} rows, model expects {}",
                    t.len(),
                    self.arch.seq_len
                )));
            }
        }
        if tensors.is_empty() {
            return Ok(Vec::new());
        }
        Ok(network::forward(&self.arch, &self.params, tensors).probs)
    }

    pub fn forward(&self, tensor: &TrackTensor) -> Result<f64> {
        Ok(self.forward_batch(&[tensor])?[0])
    }

    /// Labels one feature series at `threshold` (the bundle's own threshold
    /// when `None`).
    pub fn classify_track(
        &self,
        series: &FeatureSeries,
        threshold: Option<f64>,
    ) -> Result<(Behavior, f64)> {
        let tensor = to_tensor(series, &self.norm, self.arch.seq_len)?;
        let confidence = self.forward(&tensor)?;
        let t = threshold.unwrap_or(self.decision_threshold);
        Ok((Behavior::from_confidence(confidence, t), confidence))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureRow;

    fn series(values: &[[f64; 4]]) -> FeatureSeries {
        FeatureSeries {
            track_id: 0,
            rows: values
                .iter()
                .enumerate()
                .map(|(i, v)| FeatureRow {
                    frame_index: i,
                    speed: v[0],
                    direction: v[1],
                    aspect_ratio: v[2],
                    lmcm: v[3],
                })
                .collect(),
        }
    }

    #[test]
    fn min_max_fit() {
        let s = series(&[[0.0, -1.0, 2.0, 0.0], [50.0, 1.0, 3.0, 0.0]]);
        let n = fit_normalization(&[s]).unwrap();
        assert_eq!((n.lo[0], n.hi[0]), (0.0, 50.0));
        assert_eq!((n.lo[3], n.hi[3]), (0.0, 1.0));
        assert_eq!(n.normalize(0, 50.0), 1.0);
        assert_eq!(n.normalize(0, 0.0), -1.0);
        assert_eq!(n.normalize(0, 75.0), 1.0);
        assert_eq!(n.normalize(0, -10.0), -1.0);
    }

    #[test]
    fn empty_fit_rejected() {
        assert!(fit_normalization(&[]).is_err());
        assert!(fit_normalization(&[series(&[])]).is_err());
    }

    #[test]
    fn tensor_padding_and_truncation() {
        let norm = NormalizationCoefficients {
            lo: [0.0; 4],
            hi: [10.0; 4],
        };
        let full = to_tensor(&series(&vec![[5.0; 4]; 40]), &norm, SEQ_LEN).unwrap();
        assert_eq!(full.valid_len, 40);
        assert!(full.values.iter().all(|r| *r == [0.0; 4]));

        let short = to_tensor(&series(&vec![[10.0; 4]; 25]), &norm, SEQ_LEN).unwrap();
        assert_eq!(short.valid_len, 25);
        assert!(short.values[..25].iter().all(|r| *r == [1.0; 4]));
        assert!(short.values[25..].iter().all(|r| *r == [0.0; 4]));

        let mut long: Vec<[f64; 4]> = vec![[10.0; 4]; 40];
        long.extend(vec![[0.0; 4]; 15]);
        let t = to_tensor(&series(&long), &norm, SEQ_LEN).unwrap();
        assert_eq!((t.len(), t.valid_len), (40, 40));
        assert!(t.values.iter().all(|r| *r == [1.0; 4]));

        assert!(to_tensor(&series(&[]), &norm, SEQ_LEN).is_err());
    }

    #[test]
    fn bce_values() {
        assert!((loss_bce(0.5, true) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(loss_bce(1.0 - BCE_EPSILON, true) < 1e-6);
        assert!((loss_bce(0.9, false) - std::f64::consts::LN_10).abs() < 1e-6);
        assert!(loss_bce(0.0, true).is_finite());
    }

    #[test]
    fn threshold_is_inclusive() {
        assert_eq!(Behavior::from_confidence(0.5, 0.5), Behavior::Startle);
        assert_eq!(Behavior::from_confidence(0.49, 0.5), Behavior::NonStartle);
        assert_eq!(Behavior::from_confidence(0.6, 0.9), Behavior::NonStartle);
    }

    #[test]
    fn zero_weights_give_half() {
        let arch = Architecture::default();
        let mut model = ModelBundle::initialize(
            arch,
            NormalizationCoefficients::default(),
            Hyperparameters::default(),
        )
        .unwrap();
        model.params = Params::zeros(&arch);
        let t = to_tensor(&series(&[[0.3, 0.2, 0.9, 0.1]; 12]), &model.norm, SEQ_LEN).unwrap();
        assert_eq!(model.forward(&t).unwrap(), 0.5);
        let (label, _) = model.classify_track(&series(&[[0.0; 4]]), None).unwrap();
        assert_eq!(label, Behavior::Startle);
    }

    #[test]
    fn wrong_tensor_length_rejected() {
        let model = ModelBundle::initialize(
            Architecture::default(),
            NormalizationCoefficients::default(),
            Hyperparameters::default(),
        )
        .unwrap();
        let t = TrackTensor {
            values: vec![[0.0; 4]; 10],
            valid_len: 10,
        };
        assert!(model.forward(&t).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tensors_within_unit_range(rows in prop::collection::vec(prop::array::uniform4(-1e3..1e3f64), 1..60)) {
                let s = series(&rows);
                let norm = fit_normalization(std::slice::from_ref(&s)).unwrap();
                let t = to_tensor(&s, &norm, SEQ_LEN).unwrap();
                prop_assert!(t.values.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
                prop_assert!(t.values[t.valid_len..].iter().all(|r| *r == [0.0; 4]));
            }

            #[test]
            fn raising_threshold_never_creates_startle(c in 0.0..1.0f64, t1 in 0.01..0.99f64, dt in 0.0..0.5f64) {
                let t2 = (t1 + dt).min(0.99);
                if !Behavior::from_confidence(c, t1).is_startle() {
                    prop_assert!(!Behavior::from_confidence(c, t2).is_startle());
                }
            }
        }
    }
}

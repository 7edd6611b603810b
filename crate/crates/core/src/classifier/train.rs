//! Mini-batch training with backpropagation through time and Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{self, Params};
use super::{ModelBundle, TrackTensor};
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    /// Mean BCE over the samples of each epoch, measured on the pre-update
    /// weights of every mini-batch.
    pub epoch_losses: Vec<f64>,
}

struct Adam {
    m: Params,
    v: Params,
    step: i32,
}

impl Adam {
    fn new(template: &Params) -> Self {
        let mut m = template.clone();
        for s in m.slices_mut() {
            s.fill(0.0);
        }
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }

    fn update(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        let tensors = params
            .slices_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(self.m.slices_mut())
            .zip(self.v.slices_mut());
        for (((p, g), m), v) in tensors {
            for k in 0..p.len() {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            }
        }
    }
}

/// Minimizes mean BCE over `(tensors, labels)`. The returned bundle carries
/// `hyper` as its training record. Zero epochs returns the input weights.
pub fn train(
    model: &ModelBundle,
    tensors: &[TrackTensor],
    labels: &[bool],
    hyper: &Hyperparameters,
) -> Result<(ModelBundle, TrainingReport)> {
    hyper.validate()?;
    model.validate()?;
    if tensors.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} tensors but {} labels",
            tensors.len(),
            labels.len()
        )));
    }
    if !(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l)) {
        return Err(Error::validation(
            "training set must contain both startle and non-startle tracks",
        ));
    }
    if let Some(t) = tensors.iter().find(|t| t.len() != model.arch.seq_len) {
        return Err(Error::Shape(format!(
            "tensor has {} rows, model expects {}",
            t.len(),
            model.arch.seq_len
        )));
    }

    let mut out = model.clone();
    out.hyper = *hyper;
    let arch = out.arch;
    let mut adam = Adam::new(&out.params);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..tensors.len()).collect();
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);

    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let batch: Vec<&TrackTensor> = chunk.iter().map(|&i| &tensors[i]).collect();
            let batch_labels: Vec<bool> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, mut grads) =
                network::loss_and_gradients(&arch, &out.params, &batch, &batch_labels);
            epoch_loss += loss;
            let scale = 1.0 / chunk.len() as f64;
            for s in grads.slices_mut() {
                s.iter_mut().for_each(|g| *g *= scale);
            }
            adam.update(&mut out.params, &grads, hyper.learning_rate);
        }
        epoch_losses.push(epoch_loss / tensors.len() as f64);
    }
    Ok((out, TrainingReport { epoch_losses }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{Architecture, NormalizationCoefficients};

    fn toy_set() -> (Vec<TrackTensor>, Vec<bool>) {
        let mut tensors = Vec::new();
        let mut labels = Vec::new();
        for i in 0..16 {
            let pos = i % 2 == 0;
            let level = if pos { 0.8 } else { -0.8 };
            let jitter = (i as f64 * 0.1).sin() * 0.1;
            tensors.push(TrackTensor {
                values: vec![[level + jitter, 0.0, -level, 0.1]; 10],
                valid_len: 10,
            });
            labels.push(pos);
        }
        (tensors, labels)
    }

    fn small_model(seed: u64) -> ModelBundle {
        let arch = Architecture {
            seq_len: 10,
            conv1_channels: 4,
            conv2_channels: 4,
            hidden: 6,
        };
        let hyper = Hyperparameters {
            seed,
            ..Default::default()
        };
        ModelBundle::initialize(arch, NormalizationCoefficients::default(), hyper).unwrap()
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (x, y) = toy_set();
        let model = small_model(1);
        let hyper = Hyperparameters {
            epochs: 0,
            ..model.hyper
        };
        let (trained, report) = train(&model, &x, &y, &hyper).unwrap();
        assert_eq!(trained.params, model.params);
        assert!(report.epoch_losses.is_empty());
    }

    #[test]
    fn single_class_rejected() {
        let (x, _) = toy_set();
        let y = vec![true; x.len()];
        assert!(train(&small_model(1), &x, &y, &Hyperparameters::default()).is_err());
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let (x, y) = toy_set();
        let hyper = Hyperparameters {
            epochs: 60,
            batch_size: 4,
            learning_rate: 1e-2,
            seed: 5,
        };
        let (a, ra) = train(&small_model(5), &x, &y, &hyper).unwrap();
        let (b, rb) = train(&small_model(5), &x, &y, &hyper).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(ra, rb);
        assert!(ra.epoch_losses.last().unwrap() < &0.1, "{:?}", ra.epoch_losses);
    }
}

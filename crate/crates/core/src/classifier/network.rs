//! Batched forward and backward passes of conv(3) -> ReLU -> conv(3) -> ReLU
//! -> LSTM -> dense -> sigmoid.
//!
//! Activations are laid out time-major: row `t * batch + b` holds sample `b`
//! at step `t`. Convolution weights are stored `[out][tap][in]`, LSTM gate
//! blocks are ordered input, forget, output, candidate.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrackTensor;
use crate::error::{Error, Result};
use crate::features::FEATURE_COUNT;

const TAPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub seq_len: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub hidden: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            seq_len: super::SEQ_LEN,
            conv1_channels: 16,
            conv2_channels: 32,
            hidden: 64,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.conv1_channels == 0 || self.conv2_channels == 0 || self.hidden == 0 {
            return Err(Error::validation(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }

    /// Expected `(rows, cols)` of each parameter tensor, in storage order.
    pub fn shapes(&self) -> [(usize, usize); 9] {
        let (c1, c2, h) = (self.conv1_channels, self.conv2_channels, self.hidden);
        [
            (c1, TAPS * FEATURE_COUNT),
            (1, c1),
            (c2, TAPS * c1),
            (1, c2),
            (4 * h, c2),
            (4 * h, h),
            (1, 4 * h),
            (1, h),
            (1, 1),
        ]
    }
}

pub const PARAM_NAMES: [&str; 9] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "lstm.weight_ih",
    "lstm.weight_hh",
    "lstm.bias",
    "dense.weight",
    "dense.bias",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub conv1_w: Array2<f64>,
    pub conv1_b: Array1<f64>,
    pub conv2_w: Array2<f64>,
    pub conv2_b: Array1<f64>,
    pub lstm_w_ih: Array2<f64>,
    pub lstm_w_hh: Array2<f64>,
    pub lstm_b: Array1<f64>,
    pub dense_w: Array1<f64>,
    pub dense_b: Array1<f64>,
}

impl Params {
    pub fn zeros(arch: &Architecture) -> Self {
        let sh = arch.shapes();
        Self {
            conv1_w: Array2::zeros(sh[0]),
            conv1_b: Array1::zeros(sh[1].1),
            conv2_w: Array2::zeros(sh[2]),
            conv2_b: Array1::zeros(sh[3].1),
            lstm_w_ih: Array2::zeros(sh[4]),
            lstm_w_hh: Array2::zeros(sh[5]),
            lstm_b: Array1::zeros(sh[6].1),
            dense_w: Array1::zeros(sh[7].1),
            dense_b: Array1::zeros(1),
        }
    }

    /// Uniform `+-1/sqrt(fan_in)` per tensor, drawn in storage order.
    pub fn init_uniform(arch: &Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(arch);
        let fan_in = [
            TAPS * FEATURE_COUNT,
            TAPS * FEATURE_COUNT,
            TAPS * arch.conv1_channels,
            TAPS * arch.conv1_channels,
            arch.conv2_channels,
            arch.hidden,
            arch.hidden,
            arch.hidden,
            arch.hidden,
        ];
        for (slice, fan) in p.slices_mut().into_iter().zip(fan_in) {
            let bound = 1.0 / (fan as f64).sqrt();
            for v in slice.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        p
    }

    pub fn slices(&self) -> [&[f64]; 9] {
        [
            self.conv1_w.as_slice().expect("standard layout"),
            self.conv1_b.as_slice().expect("standard layout"),
            self.conv2_w.as_slice().expect("standard layout"),
            self.conv2_b.as_slice().expect("standard layout"),
            self.lstm_w_ih.as_slice().expect("standard layout"),
            self.lstm_w_hh.as_slice().expect("standard layout"),
            self.lstm_b.as_slice().expect("standard layout"),
            self.dense_w.as_slice().expect("standard layout"),
            self.dense_b.as_slice().expect("standard layout"),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 9] {
        [
            self.conv1_w.as_slice_mut().expect("standard layout"),
            self.conv1_b.as_slice_mut().expect("standard layout"),
            self.conv2_w.as_slice_mut().expect("standard layout"),
            self.conv2_b.as_slice_mut().expect("standard layout"),
            self.lstm_w_ih.as_slice_mut().expect("standard layout"),
            self.lstm_w_hh.as_slice_mut().expect("standard layout"),
            self.lstm_b.as_slice_mut().expect("standard layout"),
            self.dense_w.as_slice_mut().expect("standard layout"),
            self.dense_b.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Builds parameters from flat arrays in storage order.
    pub fn from_flat(arch: &Architecture, arrays: Vec<Vec<f64>>) -> Result<Self> {
        if arrays.len() != 9 {
            return Err(Error::Shape(format!("expected 9 parameter arrays, got {}", arrays.len())));
        }
        let mut p = Self::zeros(arch);
        for ((dst, src), name) in p.slices_mut().into_iter().zip(arrays).zip(PARAM_NAMES) {
            if dst.len() != src.len() {
                return Err(Error::Shape(format!(
                    "{name}: expected {} values, got {}",
                    dst.len(),
                    src.len()
                )));
            }
            dst.copy_from_slice(&src);
        }
        Ok(p)
    }

    pub fn check_shapes(&self, arch: &Architecture) -> Result<()> {
        let expected = arch.shapes();
        let actual = [
            self.conv1_w.dim(),
            (1, self.conv1_b.len()),
            self.conv2_w.dim(),
            (1, self.conv2_b.len()),
            self.lstm_w_ih.dim(),
            self.lstm_w_hh.dim(),
            (1, self.lstm_b.len()),
            (1, self.dense_w.len()),
            (1, self.dense_b.len()),
        ];
        for ((e, a), name) in expected.iter().zip(&actual).zip(PARAM_NAMES) {
            if e != a {
                return Err(Error::Shape(format!("{name}: expected {e:?}, found {a:?}")));
            }
        }
        Ok(())
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    steps: usize,
    col1: Array2<f64>,
    z1: Array2<f64>,
    col2: Array2<f64>,
    z2: Array2<f64>,
    /// Post-activation gates.
    gates: Array2<f64>,
    cells: Array2<f64>,
    tanh_cells: Array2<f64>,
    hidden: Array2<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

fn im2col(x: ArrayView2<f64>, steps: usize, batch: usize) -> Array2<f64> {
    let c = x.ncols();
    let mut col = Array2::zeros((steps * batch, TAPS * c));
    for t in 0..steps {
        for k in 0..TAPS {
            let Some(src) = (t + k).checked_sub(1).filter(|&s| s < steps) else {
                continue;
            };
            col.slice_mut(s![t * batch..(t + 1) * batch, k * c..(k + 1) * c])
                .assign(&x.slice(s![src * batch..(src + 1) * batch, ..]));
        }
    }
    col
}

fn col2im(dcol: &Array2<f64>, steps: usize, batch: usize) -> Array2<f64> {
    let c = dcol.ncols() / TAPS;
    let mut dx = Array2::zeros((steps * batch, c));
    for t in 0..steps {
        for k in 0..TAPS {
            let Some(src) = (t + k).checked_sub(1).filter(|&s| s < steps) else {
                continue;
            };
            let mut dst = dx.slice_mut(s![src * batch..(src + 1) * batch, ..]);
            dst += &dcol.slice(s![t * batch..(t + 1) * batch, k * c..(k + 1) * c]);
        }
    }
    dx
}

/// `relu(x . w^T + b)`.
fn dense_relu(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), w.nrows()));
    out += b;
    general_mat_mul(1.0, x, &w.t(), 1.0, &mut out);
    out.mapv_inplace(|v| v.max(0.0));
    out
}

pub fn forward(arch: &Architecture, p: &Params, tensors: &[&TrackTensor]) -> ForwardCache {
    let batch = tensors.len();
    let steps = arch.seq_len;
    let h = arch.hidden;

    let mut x = Array2::zeros((steps * batch, FEATURE_COUNT));
    for (b, tensor) in tensors.iter().enumerate() {
        for (t, row) in tensor.values.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                x[[t * batch + b, c]] = *v;
            }
        }
    }

    let col1 = im2col(x.view(), steps, batch);
    let z1 = dense_relu(&col1, &p.conv1_w, &p.conv1_b);
    let col2 = im2col(z1.view(), steps, batch);
    let z2 = dense_relu(&col2, &p.conv2_w, &p.conv2_b);

    let mut gates = Array2::zeros((steps * batch, 4 * h));
    gates += &p.lstm_b;
    general_mat_mul(1.0, &z2, &p.lstm_w_ih.t(), 1.0, &mut gates);

    let mut cells = Array2::zeros((steps * batch, h));
    let mut tanh_cells = Array2::zeros((steps * batch, h));
    let mut hidden = Array2::<f64>::zeros((steps * batch, h));
    let w_hh_t = p.lstm_w_hh.t();

    for t in 0..steps {
        let rows = t * batch..(t + 1) * batch;
        if t > 0 {
            let prev_h = hidden.slice(s![(t - 1) * batch..t * batch, ..]).to_owned();
            let mut g = gates.slice_mut(s![rows.clone(), ..]);
            general_mat_mul(1.0, &prev_h, &w_hh_t, 1.0, &mut g);
        }
        for b in 0..batch {
            let r = t * batch + b;
            let mut g = gates.row_mut(r);
            let gs = g.as_slice_mut().expect("contiguous row");
            for j in 0..h {
                let i_g = sigmoid(gs[j]);
                let f_g = sigmoid(gs[h + j]);
                let o_g = sigmoid(gs[2 * h + j]);
                let c_g = gs[3 * h + j].tanh();
                gs[j] = i_g;
                gs[h + j] = f_g;
                gs[2 * h + j] = o_g;
                gs[3 * h + j] = c_g;
                let c_prev = if t > 0 { cells[[r - batch, j]] } else { 0.0 };
                let c = f_g * c_prev + i_g * c_g;
                let tc = c.tanh();
                cells[[r, j]] = c;
                tanh_cells[[r, j]] = tc;
                hidden[[r, j]] = o_g * tc;
            }
        }
    }

    let last = hidden.slice(s![(steps - 1) * batch.., ..]);
    let logits: Vec<f64> = last
        .rows()
        .into_iter()
        .map(|row| row.dot(&p.dense_w) + p.dense_b[0])
        .collect();
    let probs = logits.iter().map(|&z| sigmoid(z)).collect();

    ForwardCache {
        batch,
        steps,
        col1,
        z1,
        col2,
        z2,
        gates,
        cells,
        tanh_cells,
        hidden,
        logits,
        probs,
    }
}

/// Gradients of `sum_b L_b` given `dL_b / dlogit_b`.
pub fn backward(arch: &Architecture, p: &Params, cache: &ForwardCache, dlogits: &[f64]) -> Params {
    let (batch, steps, h) = (cache.batch, cache.steps, arch.hidden);
    let mut g = Params::zeros(arch);

    let dl = Array1::from(dlogits.to_vec());
    let last = cache.hidden.slice(s![(steps - 1) * batch.., ..]);
    g.dense_w = last.t().dot(&dl);
    g.dense_b[0] = dl.sum();

    let mut dh = Array2::zeros((batch, h));
    for b in 0..batch {
        dh.row_mut(b).scaled_add(dlogits[b], &p.dense_w);
    }
    let mut dc = Array2::<f64>::zeros((batch, h));
    let mut dgates = Array2::<f64>::zeros((steps * batch, 4 * h));

    for t in (0..steps).rev() {
        for b in 0..batch {
            let r = t * batch + b;
            let gs = cache.gates.row(r);
            for j in 0..h {
                let (i_g, f_g, o_g, c_g) = (gs[j], gs[h + j], gs[2 * h + j], gs[3 * h + j]);
                let tc = cache.tanh_cells[[r, j]];
                let c_prev = if t > 0 { cache.cells[[r - batch, j]] } else { 0.0 };
                let dh_v = dh[[b, j]];
                let d_o = dh_v * tc;
                let dc_v = dc[[b, j]] + dh_v * o_g * (1.0 - tc * tc);
                let d_i = dc_v * c_g;
                let d_c = dc_v * i_g;
                let d_f = dc_v * c_prev;
                dgates[[r, j]] = d_i * i_g * (1.0 - i_g);
                dgates[[r, h + j]] = d_f * f_g * (1.0 - f_g);
                dgates[[r, 2 * h + j]] = d_o * o_g * (1.0 - o_g);
                dgates[[r, 3 * h + j]] = d_c * (1.0 - c_g * c_g);
                dc[[b, j]] = dc_v * f_g;
            }
        }
        if t > 0 {
            let da = dgates.slice(s![t * batch..(t + 1) * batch, ..]);
            general_mat_mul(1.0, &da, &p.lstm_w_hh, 0.0, &mut dh);
        }
    }

    // h_{t-1} for every row; zero at t = 0.
    let mut h_prev = Array2::zeros((steps * batch, h));
    if steps > 1 {
        h_prev
            .slice_mut(s![batch.., ..])
            .assign(&cache.hidden.slice(s![..(steps - 1) * batch, ..]));
    }
    general_mat_mul(1.0, &dgates.t(), &h_prev, 0.0, &mut g.lstm_w_hh);
    general_mat_mul(1.0, &dgates.t(), &cache.z2, 0.0, &mut g.lstm_w_ih);
    g.lstm_b = dgates.sum_axis(Axis(0));

    let mut dz2 = dgates.dot(&p.lstm_w_ih);
    dz2.zip_mut_with(&cache.z2, |d, &z| {
        if z <= 0.0 {
            *d = 0.0
        }
    });
    general_mat_mul(1.0, &dz2.t(), &cache.col2, 0.0, &mut g.conv2_w);
    g.conv2_b = dz2.sum_axis(Axis(0));

    let dcol2 = dz2.dot(&p.conv2_w);
    let mut dz1 = col2im(&dcol2, steps, batch);
    dz1.zip_mut_with(&cache.z1, |d, &z| {
        if z <= 0.0 {
            *d = 0.0
        }
    });
    general_mat_mul(1.0, &dz1.t(), &cache.col1, 0.0, &mut g.conv1_w);
    g.conv1_b = dz1.sum_axis(Axis(0));
    g
}

/// Summed clamped BCE over the batch and its gradient.
pub fn loss_and_gradients(
    arch: &Architecture,
    p: &Params,
    tensors: &[&TrackTensor],
    labels: &[bool],
) -> (f64, Params) {
    let cache = forward(arch, p, tensors);
    let loss = cache
        .probs
        .iter()
        .zip(labels)
        .map(|(&q, &y)| super::loss_bce(q, y))
        .sum();
    let dlogits: Vec<f64> = cache
        .probs
        .iter()
        .zip(labels)
        .map(|(&q, &y)| q - if y { 1.0 } else { 0.0 })
        .collect();
    let grads = backward(arch, p, &cache, &dlogits);
    (loss, grads)
}

/// Summed clamped BCE over the batch.
pub fn total_loss(arch: &Architecture, p: &Params, tensors: &[&TrackTensor], labels: &[bool]) -> f64 {
    forward(arch, p, tensors)
        .probs
        .iter()
        .zip(labels)
        .map(|(&q, &y)| super::loss_bce(q, y))
        .sum()
}

//! Local momentary change kernel: a 3x3x3 zero-sum spatio-temporal filter
//! that fires on motion impulses and is null on static or constant-rate
//! intensity change.

use crate::error::{Error, Result};
use crate::ingest::GrayFrame;

const TEMPORAL: [f64; 3] = [-1.0, 2.0, -1.0];
const BINOMIAL: [f64; 3] = [1.0, 2.0, 1.0];

/// Coefficients indexed `[t][y][x]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmcmKernel {
    pub coefficients: [[[f64; 3]; 3]; 3],
}

impl Default for LmcmKernel {
    fn default() -> Self {
        build_lmcm_kernel()
    }
}

/// Each temporal slice is the binomial profile `([1,2,1] x [1,2,1]) / 16`
/// weighted by `-1, +2, -1`.
pub fn build_lmcm_kernel() -> LmcmKernel {
    let mut coefficients = [[[0.0; 3]; 3]; 3];
    for (t, slice) in coefficients.iter_mut().enumerate() {
        for (y, row) in slice.iter_mut().enumerate() {
            for (x, c) in row.iter_mut().enumerate() {
                *c = TEMPORAL[t] * BINOMIAL[y] * BINOMIAL[x] / 16.0;
            }
        }
    }
    LmcmKernel { coefficients }
}

impl LmcmKernel {
    pub fn sum(&self) -> f64 {
        self.coefficients.iter().flatten().flatten().sum()
    }

    pub fn slice_sums(&self) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (t, slice) in self.coefficients.iter().enumerate() {
            out[t] = slice.iter().flatten().sum();
        }
        out
    }

    /// Correlation value at interior pixel `(x, y)` of the middle frame.
    #[inline]
    pub(crate) fn apply_at(&self, frames: [&GrayFrame; 3], x: usize, y: usize) -> f64 {
        let mut acc = 0.0;
        for (slice, frame) in self.coefficients.iter().zip(frames) {
            for (dy, row) in slice.iter().enumerate() {
                let base = (y + dy - 1) * frame.width + x - 1;
                let px = &frame.data[base..base + 3];
                acc += row[0] * px[0] + row[1] * px[1] + row[2] * px[2];
            }
        }
        acc
    }
}

/// Signed per-pixel kernel output for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ResponseMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn check_shapes(frames: [&GrayFrame; 3]) -> Result<()> {
    if !(frames[0].same_shape(frames[1]) && frames[1].same_shape(frames[2])) {
        return Err(Error::Shape(format!(
            "LMCM frames differ in shape: {}x{}, {}x{}, {}x{}",
            frames[0].width,
            frames[0].height,
            frames[1].width,
            frames[1].height,
            frames[2].width,
            frames[2].height
        )));
    }
    Ok(())
}

/// Valid 3D cross-correlation of `kernel` centered on the middle of three
/// consecutive frames. The one-pixel border of the output is zero.
pub fn lmcm_response(frames: [&GrayFrame; 3], kernel: &LmcmKernel) -> Result<ResponseMap> {
    check_shapes(frames)?;
    let (width, height) = (frames[1].width, frames[1].height);
    let mut data = vec![0.0; width * height];
    if width >= 3 && height >= 3 {
        for y in 1..height - 1 {
            for x in 1..width - 1 {
                data[y * width + x] = kernel.apply_at(frames, x, y);
            }
        }
    }
    Ok(ResponseMap {
        width,
        height,
        data,
    })
}

/// Mean absolute response over pixels `x0..x1, y0..y1` (exclusive ends),
/// border pixels contributing zero. Empty regions give 0.
pub(crate) fn mean_abs_response(
    frames: [&GrayFrame; 3],
    kernel: &LmcmKernel,
    (x0, x1): (usize, usize),
    (y0, y1): (usize, usize),
) -> f64 {
    if x1 <= x0 || y1 <= y0 {
        return 0.0;
    }
    let (width, height) = (frames[1].width, frames[1].height);
    let mut acc = 0.0;
    for y in y0..y1 {
        if y == 0 || y + 1 >= height {
            continue;
        }
        for x in x0..x1 {
            if x == 0 || x + 1 >= width {
                continue;
            }
            acc += kernel.apply_at(frames, x, y).abs();
        }
    }
    acc / ((x1 - x0) * (y1 - y0)) as f64
}

//! Binary model file.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "STARTLM1"                      8-byte magic
//! format_version                  u32
//! 11 x (count: u64, count x f64)  conv1 W, conv1 b, conv2 W, conv2 b,
//!                                 LSTM W_ih, W_hh, b, dense W, dense b,
//!                                 normalization [lo0, hi0, .., lo3, hi3],
//!                                 [decision_threshold]
//! record_len: u64, record         UTF-8 `key=value` lines: architecture
//!                                 and training hyperparameters
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::{Architecture, Hyperparameters, ModelBundle, NormalizationCoefficients, Params};
use crate::csvio;
use crate::error::{Error, Result};
use crate::features::FEATURE_COUNT;

pub const MAGIC: &[u8; 8] = b"STARTLM1";
pub const FORMAT_VERSION: u32 = 1;
const ARRAY_COUNT: usize = 11;

fn put_array(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn record(model: &ModelBundle) -> String {
    let (a, h) = (&model.arch, &model.hyper);
    let mut s = String::new();
    let _ = writeln!(s, "seq_len={}", a.seq_len);
    let _ = writeln!(s, "conv1_channels={}", a.conv1_channels);
    let _ = writeln!(s, "conv2_channels={}", a.conv2_channels);
    let _ = writeln!(s, "hidden={}", a.hidden);
    let _ = writeln!(s, "epochs={}", h.epochs);
    let _ = writeln!(s, "batch_size={}", h.batch_size);
    let _ = writeln!(s, "learning_rate={:?}", h.learning_rate);
    let _ = writeln!(s, "seed={}", h.seed);
    s
}

pub fn encode_bundle(model: &ModelBundle) -> Result<Vec<u8>> {
    model.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&model.format_version.to_le_bytes());
    for s in model.params.slices() {
        put_array(&mut out, s);
    }
    let norm: Vec<f64> = (0..FEATURE_COUNT)
        .flat_map(|c| [model.norm.lo[c], model.norm.hi[c]])
        .collect();
    put_array(&mut out, &norm);
    put_array(&mut out, &[model.decision_threshold]);
    let rec = record(model);
    out.extend_from_slice(&(rec.len() as u64).to_le_bytes());
    out.extend_from_slice(rec.as_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::ModelFormat(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn array(&mut self) -> Result<Vec<f64>> {
        let n = usize::try_from(self.u64()?).map_err(|_| Error::ModelFormat("array too long".into()))?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::ModelFormat("array too long".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn parse_record(text: &str) -> Result<(Architecture, Hyperparameters)> {
    let mut arch = Architecture::default();
    let mut hyper = Hyperparameters::default();
    let bad = |k: &str, v: &str| Error::ModelFormat(format!("bad value for {k}: {v:?}"));
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::ModelFormat(format!("record line without '=': {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        let as_usize = || v.parse::<usize>().map_err(|_| bad(k, v));
        match k {
            "seq_len" => arch.seq_len = as_usize()?,
            "conv1_channels" => arch.conv1_channels = as_usize()?,
            "conv2_channels" => arch.conv2_channels = as_usize()?,
            "hidden" => arch.hidden = as_usize()?,
            "epochs" => hyper.epochs = as_usize()?,
            "batch_size" => hyper.batch_size = as_usize()?,
            "learning_rate" => hyper.learning_rate = v.parse().map_err(|_| bad(k, v))?,
            "seed" => hyper.seed = v.parse().map_err(|_| bad(k, v))?,
            _ => {}
        }
    }
    Ok((arch, hyper))
}

pub fn decode_bundle(bytes: &[u8]) -> Result<ModelBundle> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::ModelFormat("bad magic".into()));
    }
    let format_version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if format_version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported format version {format_version}"
        )));
    }
    let mut arrays = Vec::with_capacity(ARRAY_COUNT);
    for _ in 0..ARRAY_COUNT {
        arrays.push(r.array()?);
    }
    let rec_len = usize::try_from(r.u64()?).map_err(|_| Error::ModelFormat("record too long".into()))?;
    let rec = std::str::from_utf8(r.take(rec_len)?)
        .map_err(|_| Error::ModelFormat("record is not UTF-8".into()))?;
    if r.pos != bytes.len() {
        return Err(Error::ModelFormat("trailing bytes after record".into()));
    }
    let (arch, hyper) = parse_record(rec)?;

    let threshold = arrays.pop().expect("11 arrays");
    let norm_flat = arrays.pop().expect("11 arrays");
    if threshold.len() != 1 || norm_flat.len() != 2 * FEATURE_COUNT {
        return Err(Error::ModelFormat("bad normalization or threshold block".into()));
    }
    let mut norm = NormalizationCoefficients::default();
    for c in 0..FEATURE_COUNT {
        norm.lo[c] = norm_flat[2 * c];
        norm.hi[c] = norm_flat[2 * c + 1];
    }
    let model = ModelBundle {
        params: Params::from_flat(&arch, arrays)?,
        arch,
        norm,
        decision_threshold: threshold[0],
        hyper,
        format_version,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_bundle(path: &Path, model: &ModelBundle) -> Result<()> {
    csvio::write_atomic(path, &encode_bundle(model)?)
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    csvio::require(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bundle(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelBundle {
        let norm = NormalizationCoefficients {
            lo: [0.0, -3.0, 0.2, 0.0],
            hi: [250.0, 3.0, 4.0, 0.7],
        };
        let hyper = Hyperparameters {
            seed: 17,
            learning_rate: 0.0007,
            ..Default::default()
        };
        ModelBundle::initialize(Architecture::default(), norm, hyper).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let bytes = encode_bundle(&m).unwrap();
        assert_eq!(&bytes[..8], b"STARTLM1");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let back = decode_bundle(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_bundle(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = encode_bundle(&model()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_bundle(&bad).is_err());
        assert!(decode_bundle(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_bundle(&extra).is_err());
    }
}

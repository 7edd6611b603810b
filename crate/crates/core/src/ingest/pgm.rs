//! Binary portable graymap (P5) frames, normalized to `[0, 1]`.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};

use super::GrayFrame;
use crate::error::{Error, Result};

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.pgm")
}

pub fn read_pgm(path: &Path) -> Result<GrayFrame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
        other => other
            .to_luma8()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect(),
    };
    GrayFrame::new(width, height, data)
}

/// Encodes `frame` as an 8-bit binary graymap.
pub fn encode_pgm(frame: &GrayFrame) -> Result<Vec<u8>> {
    let raw: Vec<u8> = frame
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(
            &raw,
            frame.width as u32,
            frame.height as u32,
            ExtendedColorType::L8,
        )
        .map_err(|e| Error::validation(format!("pgm encoding failed: {e}")))?;
    Ok(out)
}

pub fn write_pgm(path: &Path, frame: &GrayFrame) -> Result<()> {
    crate::csvio::write_atomic(path, &encode_pgm(frame)?)
}

/// Loads `frame_%06d.pgm` files from `dir` in index order, starting at 0 and
/// stopping at the first missing index.
pub fn load_frames(dir: &Path) -> Result<Vec<GrayFrame>> {
    let mut frames: Vec<GrayFrame> = Vec::new();
    loop {
        let path: PathBuf = dir.join(frame_file_name(frames.len()));
        if !path.exists() {
            break;
        }
        let frame = read_pgm(&path)?;
        if let Some(first) = frames.first() {
            if !first.same_shape(&frame) {
                return Err(Error::Shape(format!(
                    "{} is {}x{}, expected {}x{}",
                    path.display(),
                    frame.width,
                    frame.height,
                    first.width,
                    first.height
                )));
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

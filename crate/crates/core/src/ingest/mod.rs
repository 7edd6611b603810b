//! Detection and frame ingestion, clip segmentation and the motion gate.

mod gmm;
mod pgm;

use std::fmt::Write as _;
use std::path::Path;

use crate::csvio;
use crate::error::{Error, Result};

pub use gmm::{motion_gate, BackgroundModel, MotionGateConfig};
pub use pgm::{frame_file_name, load_frames, read_pgm, write_pgm};

/// Default clip length in frames (4 s at 10 fps).
pub const DEFAULT_CLIP_LEN: usize = 40;
/// Default processing frame rate.
pub const DEFAULT_FPS: f64 = 10.0;

/// One bounding box on one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub frame_index: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

impl Detection {
    pub fn validate(&self, frame_width: usize, frame_height: usize) -> Result<()> {
        let finite = [self.cx, self.cy, self.w, self.h, self.confidence]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::validation("detection has non-finite values"));
        }
        if !(self.w > 0.0 && self.h > 0.0) {
            return Err(Error::validation(format!(
                "box extent must be positive, got {}x{}",
                self.w, self.h
            )));
        }
        if !(0.0..=frame_width as f64).contains(&self.cx)
            || !(0.0..=frame_height as f64).contains(&self.cy)
        {
            return Err(Error::validation(format!(
                "center ({}, {}) outside {frame_width}x{frame_height} frame",
                self.cx, self.cy
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::validation(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }
}

/// A grayscale frame with intensities in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayFrame {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} samples for a {width}x{height} frame",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &GrayFrame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// A fixed-length window of the input stream.
#[derive(Debug, Clone)]
pub struct Clip {
    pub clip_id: String,
    pub fps: f64,
    pub frame_width: usize,
    pub frame_height: usize,
    /// Detections per frame; indices are relative to the clip start.
    pub frames: Vec<Vec<Detection>>,
    pub pixels: Option<Vec<GrayFrame>>,
}

impl Clip {
    pub fn new(
        clip_id: impl Into<String>,
        fps: f64,
        frame_width: usize,
        frame_height: usize,
        frames: Vec<Vec<Detection>>,
        pixels: Option<Vec<GrayFrame>>,
    ) -> Result<Self> {
        let clip = Clip {
            clip_id: clip_id.into(),
            fps,
            frame_width,
            frame_height,
            frames,
            pixels,
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::validation(format!("fps must be positive, got {}", self.fps)));
        }
        for (i, dets) in self.frames.iter().enumerate() {
            for d in dets {
                if d.frame_index != i {
                    return Err(Error::validation(format!(
                        "clip {}: detection on frame {} stored in slot {i}",
                        self.clip_id, d.frame_index
                    )));
                }
                d.validate(self.frame_width, self.frame_height)?;
            }
        }
        if let Some(pixels) = &self.pixels {
            if pixels.len() != self.frames.len() {
                return Err(Error::Shape(format!(
                    "clip {}: {} pixel frames for {} detection frames",
                    self.clip_id,
                    pixels.len(),
                    self.frames.len()
                )));
            }
            if let Some(first) = pixels.first() {
                if pixels.iter().any(|p| !p.same_shape(first)) {
                    return Err(Error::Shape(format!(
                        "clip {}: pixel frames differ in shape",
                        self.clip_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Parses the detections text format; see [`load_detections`].
pub fn parse_detections(
    text: &str,
    source: &str,
    frame_width: usize,
    frame_height: usize,
) -> Result<Vec<Vec<Detection>>> {
    let path = Path::new(source);
    let mut frames: Vec<Vec<Detection>> = Vec::new();
    for rec in csvio::parse_records(text) {
        rec.expect_len(path, 6)?;
        let det = Detection {
            frame_index: rec.usize(path, 0)?,
            cx: rec.f64(path, 1)?,
            cy: rec.f64(path, 2)?,
            w: rec.f64(path, 3)?,
            h: rec.f64(path, 4)?,
            confidence: rec.f64(path, 5)?,
        };
        det.validate(frame_width, frame_height)
            .map_err(|e| rec.error(path, e.to_string()))?;
        if frames.len() <= det.frame_index {
            frames.resize_with(det.frame_index + 1, Vec::new);
        }
        frames[det.frame_index].push(det);
    }
    Ok(frames)
}

/// Reads a detections file (`frame_index,cx,cy,w,h,confidence` per line) and
/// groups the records by frame. The result has one slot per frame up to the
/// highest frame index seen.
pub fn load_detections(
    path: &Path,
    frame_width: usize,
    frame_height: usize,
) -> Result<Vec<Vec<Detection>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text, &path.display().to_string(), frame_width, frame_height)
}

/// Renders per-frame detections in the detections file format.
pub fn format_detections(frames: &[Vec<Detection>]) -> String {
    let mut out = String::from("frame_index,cx,cy,w,h,confidence\n");
    for d in frames.iter().flatten() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            d.frame_index, d.cx, d.cy, d.w, d.h, d.confidence
        );
    }
    out
}

/// Cuts a stream into consecutive, non-overlapping clips of `clip_len`
/// frames. A trailing remainder shorter than `clip_len` is dropped.
///
/// When `pixels` is given it defines the stream length; detections must not
/// reference frames past it.
pub fn segment_clips(
    frames: &[Vec<Detection>],
    pixels: Option<&[GrayFrame]>,
    fps: f64,
    clip_len: usize,
    frame_width: usize,
    frame_height: usize,
) -> Result<Vec<Clip>> {
    if clip_len == 0 {
        return Err(Error::validation("clip_len must be at least 1"));
    }
    let total = match pixels {
        Some(px) => {
            if frames.len() > px.len() {
                return Err(Error::Shape(format!(
                    "detections reference frame {} but only {} frames were supplied",
                    frames.len() - 1,
                    px.len()
                )));
            }
            px.len()
        }
        None => frames.len(),
    };
    let n_clips = total / clip_len;
    let mut clips = Vec::with_capacity(n_clips);
    for c in 0..n_clips {
        let start = c * clip_len;
        let clip_frames = (start..start + clip_len)
            .map(|f| {
                frames
                    .get(f)
                    .map(|dets| {
                        dets.iter()
                            .map(|d| Detection {
                                frame_index: f - start,
                                ..*d
                            })
                            .collect()
                    })
                    .unwrap_or_default()
            })
            .collect();
        let clip_pixels = pixels.map(|px| px[start..start + clip_len].to_vec());
        clips.push(Clip::new(
            c.to_string(),
            fps,
            frame_width,
            frame_height,
            clip_frames,
            clip_pixels,
        )?);
    }
    Ok(clips)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(frame: usize, cx: f64, cy: f64) -> Detection {
        Detection {
            frame_index: frame,
            cx,
            cy,
            w: 10.0,
            h: 5.0,
            confidence: 0.9,
        }
    }

    #[test]
    fn empty_file_gives_no_frames() {
        let frames = parse_detections("", "mem", 640, 480).unwrap();
        assert!(frames.is_empty());
    }

    #[test]
    fn records_grouped_by_frame() {
        let text = "frame_index,cx,cy,w,h,confidence\n0,1,1,2,2,0.5\n0,5,5,2,2,0.6\n3,9,9,2,2,0.7\n";
        let frames = parse_detections(text, "mem", 640, 480).unwrap();
        let sizes: Vec<usize> = frames.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![2, 0, 0, 1]);
    }

    #[test]
    fn confidence_out_of_range_rejected() {
        let err = parse_detections("0,1,1,2,2,1.3\n", "mem", 640, 480).unwrap_err();
        assert!(err.to_string().contains("confidence"), "{err}");
    }

    #[test]
    fn malformed_record_names_line() {
        let err = parse_detections("0,1,1,2,2,0.5\n\n1,abc,1,2,2,0.5\n", "d.csv", 640, 480)
            .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn center_outside_frame_rejected() {
        let err = parse_detections("0,700,1,2,2,0.5\n", "mem", 640, 480).unwrap_err();
        assert!(err.to_string().contains("outside"));
    }

    #[test]
    fn segmentation_window_counts() {
        let frames = vec![Vec::new(); 120];
        assert_eq!(segment_clips(&frames, None, 10.0, 40, 64, 48).unwrap().len(), 3);
        let frames = vec![Vec::new(); 39];
        assert!(segment_clips(&frames, None, 10.0, 40, 64, 48).unwrap().is_empty());
    }

    #[test]
    fn segmentation_rebases_and_drops_remainder() {
        let frames: Vec<Vec<Detection>> = (0..41).map(|f| vec![det(f, 5.0, 5.0)]).collect();
        let clips = segment_clips(&frames, None, 10.0, 40, 64, 48).unwrap();
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0].clip_id, "0");
        assert_eq!(clips[0].frames.len(), 40);
        assert_eq!(clips[0].frames[39][0].frame_index, 39);
    }

    #[test]
    fn zero_clip_len_rejected() {
        assert!(segment_clips(&[], None, 10.0, 0, 64, 48).is_err());
    }

    #[test]
    fn pixels_define_stream_length() {
        let px = vec![GrayFrame::filled(4, 4, 0.0); 80];
        let frames = vec![vec![det(0, 1.0, 1.0)]];
        let clips = segment_clips(&frames, Some(&px), 10.0, 40, 4, 4).unwrap();
        assert_eq!(clips.len(), 2);
        assert!(clips[1].frames.iter().all(Vec::is_empty));
        assert_eq!(clips[1].pixels.as_ref().unwrap().len(), 40);
    }
}

//! Per-frame behavior features of a track: speed, heading, box aspect ratio
//! and mean absolute LMCM response inside the box.

mod lmcm;

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::csvio;
use crate::error::{Error, Result};
use crate::ingest::{Clip, Detection};
use crate::tracker::Track;

pub use lmcm::{build_lmcm_kernel, lmcm_response, LmcmKernel, ResponseMap};

/// Number of feature columns.
pub const FEATURE_COUNT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRow {
    pub frame_index: usize,
    /// Pixels per second.
    pub speed: f64,
    /// Heading in radians, `(-pi, pi]`.
    pub direction: f64,
    pub aspect_ratio: f64,
    pub lmcm: f64,
}

impl FeatureRow {
    pub fn values(&self) -> [f64; FEATURE_COUNT] {
        [self.speed, self.direction, self.aspect_ratio, self.lmcm]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    pub track_id: u64,
    pub rows: Vec<FeatureRow>,
}

impl FeatureSeries {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn heading(dx: f64, dy: f64) -> f64 {
    let a = dy.atan2(dx);
    if a <= -PI {
        PI
    } else {
        a
    }
}

/// Integer pixel range covered by the box, clipped to the frame; exclusive
/// upper bounds.
pub fn clipped_box(det: &Detection, width: usize, height: usize) -> ((usize, usize), (usize, usize)) {
    let clip = |lo: f64, hi: f64, limit: usize| {
        let a = lo.floor().max(0.0).min(limit as f64) as usize;
        let b = hi.ceil().max(0.0).min(limit as f64) as usize;
        (a, b.max(a))
    };
    (
        clip(det.cx - det.w / 2.0, det.cx + det.w / 2.0, width),
        clip(det.cy - det.h / 2.0, det.cy + det.h / 2.0, height),
    )
}

/// Computes one feature row per track entry.
///
/// Speed and heading use the displacement from the previous entry divided by
/// the actual frame gap; the first entry gets zeros for both. LMCM is zero
/// when the clip has no pixels or the entry sits on the first or last frame.
pub fn extract_features(track: &Track, clip: &Clip, kernel: &LmcmKernel) -> Result<FeatureSeries> {
    if let Some(d) = track.entries.iter().find(|d| d.frame_index >= clip.len()) {
        return Err(Error::validation(format!(
            "track {} has an entry on frame {} but clip {} has {} frames",
            track.track_id,
            d.frame_index,
            clip.clip_id,
            clip.len()
        )));
    }
    if let Some(px) = clip.pixels.as_ref().and_then(|p| p.first()) {
        if px.width != clip.frame_width || px.height != clip.frame_height {
            return Err(Error::Shape(format!(
                "clip {} pixels are {}x{} but frame size is {}x{}",
                clip.clip_id, px.width, px.height, clip.frame_width, clip.frame_height
            )));
        }
    }

    let mut rows = Vec::with_capacity(track.entries.len());
    let mut prev: Option<&Detection> = None;
    for det in &track.entries {
        let (speed, direction) = match prev {
            Some(p) => {
                let gap = (det.frame_index - p.frame_index) as f64;
                let (dx, dy) = (det.cx - p.cx, det.cy - p.cy);
                (clip.fps * dx.hypot(dy) / gap, heading(dx, dy))
            }
            None => (0.0, 0.0),
        };
        rows.push(FeatureRow {
            frame_index: det.frame_index,
            speed,
            direction,
            aspect_ratio: det.w / det.h,
            lmcm: entry_lmcm(det, clip, kernel),
        });
        prev = Some(det);
    }
    Ok(FeatureSeries {
        track_id: track.track_id,
        rows,
    })
}

fn entry_lmcm(det: &Detection, clip: &Clip, kernel: &LmcmKernel) -> f64 {
    let Some(pixels) = &clip.pixels else {
        return 0.0;
    };
    let f = det.frame_index;
    if f == 0 || f + 1 >= pixels.len() {
        return 0.0;
    }
    let frames = [&pixels[f - 1], &pixels[f], &pixels[f + 1]];
    let (xr, yr) = clipped_box(det, pixels[f].width, pixels[f].height);
    lmcm::mean_abs_response(frames, kernel, xr, yr)
}

/// Feature dump: `track_id,frame_index,speed,direction,aspect_ratio,lmcm`.
pub fn format_features(series: &[FeatureSeries]) -> String {
    let mut out = String::from("track_id,frame_index,speed,direction,aspect_ratio,lmcm\n");
    for s in series {
        for r in &s.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.track_id, r.frame_index, r.speed, r.direction, r.aspect_ratio, r.lmcm
            );
        }
    }
    out
}

pub fn load_features(path: &Path) -> Result<Vec<FeatureSeries>> {
    let mut out: Vec<FeatureSeries> = Vec::new();
    for rec in csvio::read_records(path)? {
        rec.expect_len(path, 6)?;
        let id = rec.u64(path, 0)?;
        let row = FeatureRow {
            frame_index: rec.usize(path, 1)?,
            speed: rec.f64(path, 2)?,
            direction: rec.f64(path, 3)?,
            aspect_ratio: rec.f64(path, 4)?,
            lmcm: rec.f64(path, 5)?,
        };
        match out.last_mut() {
            Some(s) if s.track_id == id => s.rows.push(row),
            _ => out.push(FeatureSeries {
                track_id: id,
                rows: vec![row],
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::GrayFrame;

    fn det(frame: usize, cx: f64, cy: f64, w: f64, h: f64) -> Detection {
        Detection {
            frame_index: frame,
            cx,
            cy,
            w,
            h,
            confidence: 1.0,
        }
    }

    fn track(entries: Vec<Detection>) -> Track {
        Track {
            track_id: 7,
            last_update_frame: entries.last().unwrap().frame_index,
            entries,
            alive: false,
        }
    }

    fn clip(n: usize, pixels: Option<Vec<GrayFrame>>) -> Clip {
        Clip::new("0", 10.0, 64, 48, vec![Vec::new(); n], pixels).unwrap()
    }

    #[test]
    fn stationary_track_on_blank_frames() {
        let t = track((0..10).map(|f| det(f, 20.0, 20.0, 8.0, 8.0)).collect());
        let c = clip(10, Some(vec![GrayFrame::filled(64, 48, 0.0); 10]));
        let s = extract_features(&t, &c, &build_lmcm_kernel()).unwrap();
        assert_eq!(s.len(), 10);
        for r in &s.rows[1..] {
            assert_eq!(r.values(), [0.0, 0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn speed_and_heading() {
        let t = track(vec![det(0, 0.0, 0.0, 4.0, 4.0), det(1, 3.0, 4.0, 4.0, 4.0)]);
        let s = extract_features(&t, &clip(2, None), &build_lmcm_kernel()).unwrap();
        assert_eq!(s.rows[0].speed, 0.0);
        assert!((s.rows[1].speed - 50.0).abs() < 1e-12);
        assert!((s.rows[1].direction - 0.9273).abs() < 1e-4);
    }

    #[test]
    fn frame_gap_divides_speed() {
        let t = track(vec![det(0, 0.0, 0.0, 4.0, 4.0), det(2, 3.0, 4.0, 4.0, 4.0)]);
        let s = extract_features(&t, &clip(3, None), &build_lmcm_kernel()).unwrap();
        assert!((s.rows[1].speed - 25.0).abs() < 1e-12);
    }

    #[test]
    fn aspect_ratio_is_width_over_height() {
        let t = track(vec![det(0, 30.0, 20.0, 20.0, 40.0)]);
        let s = extract_features(&t, &clip(1, None), &build_lmcm_kernel()).unwrap();
        assert_eq!(s.rows[0].aspect_ratio, 0.5);
    }

    #[test]
    fn westward_heading_is_plus_pi() {
        let t = track(vec![det(0, 10.0, 0.0, 4.0, 4.0), det(1, 5.0, -0.0, 4.0, 4.0)]);
        let s = extract_features(&t, &clip(2, None), &build_lmcm_kernel()).unwrap();
        assert_eq!(s.rows[1].direction, PI);
    }

    #[test]
    fn entries_outside_clip_rejected() {
        let t = track(vec![det(12, 10.0, 10.0, 4.0, 4.0)]);
        assert!(extract_features(&t, &clip(10, None), &build_lmcm_kernel()).is_err());
    }

    #[test]
    fn lmcm_fires_on_impulse_inside_box() {
        let black = GrayFrame::filled(64, 48, 0.0);
        let mut flash = black.clone();
        for y in 18..22 {
            for x in 18..22 {
                flash.set(x, y, 1.0);
            }
        }
        let px = vec![black.clone(), flash, black];
        let t = track((0..3).map(|f| det(f, 20.0, 20.0, 10.0, 10.0)).collect());
        let s = extract_features(&t, &clip(3, Some(px)), &build_lmcm_kernel()).unwrap();
        assert_eq!(s.rows[0].lmcm, 0.0);
        assert!(s.rows[1].lmcm > 0.1);
        assert_eq!(s.rows[2].lmcm, 0.0);
    }

    #[test]
    fn box_clipped_to_frame() {
        let d = det(0, 2.0, 47.0, 10.0, 10.0);
        assert_eq!(clipped_box(&d, 64, 48), ((0, 7), (42, 48)));
        let edge = det(0, 64.0, 0.0, 0.5, 0.5);
        assert_eq!(clipped_box(&edge, 64, 48), ((63, 64), (0, 1)));
    }

    #[test]
    fn dump_round_trip() {
        let t = track(vec![det(0, 0.0, 0.0, 4.0, 4.0), det(1, 3.0, 4.0, 4.0, 2.0)]);
        let s = extract_features(&t, &clip(2, None), &build_lmcm_kernel()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        std::fs::write(&p, format_features(std::slice::from_ref(&s))).unwrap();
        assert_eq!(load_features(&p).unwrap(), vec![s]);
    }
}

//! Tracking-by-detection: frame-to-frame association of detection centers
//! with gated minimum-cost assignment.

mod assignment;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::csvio;
use crate::error::{Error, Result};
use crate::ingest::{Clip, Detection};

pub use assignment::{assignment_total, solve_assignment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Association gate as a fraction of the frame diagonal.
    pub gate_fraction: f64,
    /// A track dies once this many consecutive frames pass without a match.
    pub max_missed_frames: usize,
    /// Tracks shorter than this are dropped by [`finalize`].
    pub min_track_seconds: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gate_fraction: 0.15,
            max_missed_frames: 5,
            min_track_seconds: 2.0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gate_fraction > 0.0 && self.gate_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "gate_fraction must be in (0, 1], got {}",
                self.gate_fraction
            )));
        }
        if self.max_missed_frames < 1 {
            return Err(Error::Config("max_missed_frames must be at least 1".into()));
        }
        if !(self.min_track_seconds >= 0.0) {
            return Err(Error::Config("min_track_seconds must be non-negative".into()));
        }
        Ok(())
    }

    /// Gate distance in pixels for a frame of the given size.
    pub fn gate(&self, frame_width: usize, frame_height: usize) -> f64 {
        self.gate_fraction * (frame_width as f64).hypot(frame_height as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u64,
    /// Strictly ascending by `frame_index`, never empty.
    pub entries: Vec<Detection>,
    pub last_update_frame: usize,
    pub alive: bool,
}

impl Track {
    fn start(track_id: u64, det: Detection) -> Self {
        Self {
            track_id,
            last_update_frame: det.frame_index,
            entries: vec![det],
            alive: true,
        }
    }

    pub fn last(&self) -> &Detection {
        self.entries.last().expect("tracks are never empty")
    }

    pub fn first_frame(&self) -> usize {
        self.entries[0].frame_index
    }

    /// Number of frames from first to last entry, inclusive.
    pub fn span_frames(&self) -> usize {
        self.last().frame_index - self.first_frame() + 1
    }
}

/// Euclidean distance between box centers.
pub fn assignment_cost(a: &Detection, b: &Detection) -> f64 {
    (a.cx - b.cx).hypot(a.cy - b.cy)
}

/// Result of one [`Tracker::step`]: ids of tracks extended and created.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutcome {
    pub extended: Vec<u64>,
    pub created: Vec<u64>,
}

/// Single-clip association state machine.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    gate: f64,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<usize>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, frame_width: usize, frame_height: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            gate: cfg.gate(frame_width, frame_height),
            tracks: Vec::new(),
            next_id: 0,
            last_frame: None,
        })
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    fn retire_stale(&mut self, frame_index: usize) {
        let max_missed = self.cfg.max_missed_frames;
        for t in self.tracks.iter_mut().filter(|t| t.alive) {
            if frame_index - t.last_update_frame > max_missed {
                t.alive = false;
            }
        }
    }

    /// Associates `detections` (all on `frame_index`) with the live tracks.
    pub fn step(&mut self, detections: &[Detection], frame_index: usize) -> Result<StepOutcome> {
        if let Some(prev) = self.last_frame {
            if frame_index <= prev {
                return Err(Error::validation(format!(
                    "frame {frame_index} is not after previous frame {prev}"
                )));
            }
        }
        if let Some(d) = detections.iter().find(|d| d.frame_index != frame_index) {
            return Err(Error::validation(format!(
                "detection on frame {} passed to step for frame {frame_index}",
                d.frame_index
            )));
        }
        self.last_frame = Some(frame_index);
        self.retire_stale(frame_index);

        let live: Vec<usize> = (0..self.tracks.len()).filter(|&i| self.tracks[i].alive).collect();
        let cost: Vec<Vec<f64>> = live
            .iter()
            .map(|&ti| {
                let last = self.tracks[ti].last();
                detections.iter().map(|d| assignment_cost(last, d)).collect()
            })
            .collect();
        let pairs = solve_assignment(&cost)?;

        let mut outcome = StepOutcome::default();
        let mut claimed = vec![false; detections.len()];
        for (r, c) in pairs {
            if cost[r][c] > self.gate {
                continue;
            }
            let track = &mut self.tracks[live[r]];
            track.entries.push(detections[c]);
            track.last_update_frame = frame_index;
            claimed[c] = true;
            outcome.extended.push(track.track_id);
        }
        for (det, _) in detections.iter().zip(&claimed).filter(|(_, &c)| !c) {
            let id = self.next_id;
            self.next_id += 1;
            self.tracks.push(Track::start(id, *det));
            outcome.created.push(id);
        }
        self.retire_stale(frame_index);
        Ok(outcome)
    }

    /// All tracks seen so far, dead and alive, in creation order.
    pub fn into_tracks(self) -> Vec<Track> {
        self.tracks
    }
}

/// Keeps tracks whose span `(last - first + 1) / fps` reaches
/// `min_track_seconds`, sorted by id.
pub fn finalize(tracks: Vec<Track>, fps: f64, cfg: &TrackerConfig) -> Vec<Track> {
    let mut kept: Vec<Track> = tracks
        .into_iter()
        .filter(|t| t.span_frames() as f64 / fps >= cfg.min_track_seconds)
        .collect();
    kept.sort_by_key(|t| t.track_id);
    kept
}

/// Runs the tracker over every frame of `clip` and applies [`finalize`].
pub fn track_clip(clip: &Clip, cfg: &TrackerConfig) -> Result<Vec<Track>> {
    let mut tracker = Tracker::new(*cfg, clip.frame_width, clip.frame_height)?;
    for (f, dets) in clip.frames.iter().enumerate() {
        tracker.step(dets, f)?;
    }
    Ok(finalize(tracker.into_tracks(), clip.fps, cfg))
}

/// Track dump: `track_id,frame_index,cx,cy,w,h,confidence`, grouped by track.
pub fn format_tracks(tracks: &[Track]) -> String {
    let mut out = String::from("track_id,frame_index,cx,cy,w,h,confidence\n");
    for t in tracks {
        for d in &t.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                t.track_id, d.frame_index, d.cx, d.cy, d.w, d.h, d.confidence
            );
        }
    }
    out
}

/// Reads a track dump. Records of one track must be contiguous and ordered
/// by frame.
pub fn load_tracks(path: &Path) -> Result<Vec<Track>> {
    let mut tracks: Vec<Track> = Vec::new();
    for rec in csvio::read_records(path)? {
        rec.expect_len(path, 7)?;
        let id = rec.u64(path, 0)?;
        let det = Detection {
            frame_index: rec.usize(path, 1)?,
            cx: rec.f64(path, 2)?,
            cy: rec.f64(path, 3)?,
            w: rec.f64(path, 4)?,
            h: rec.f64(path, 5)?,
            confidence: rec.f64(path, 6)?,
        };
        match tracks.last_mut() {
            Some(t) if t.track_id == id => {
                if det.frame_index <= t.last_update_frame {
                    return Err(rec.error(path, "track entries must ascend by frame".into()));
                }
                t.last_update_frame = det.frame_index;
                t.entries.push(det);
            }
            _ => {
                if tracks.iter().any(|t| t.track_id == id) {
                    return Err(rec.error(path, format!("track {id} is not contiguous")));
                }
                let mut t = Track::start(id, det);
                t.alive = false;
                tracks.push(t);
            }
        }
    }
    Ok(tracks)
}

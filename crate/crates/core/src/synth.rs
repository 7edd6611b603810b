//! Labeled synthetic clips: fish cruising on smooth random walks, some of
//! which startle (speed burst, sharp turn, squashed box) for one second.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Clip, Detection, GrayFrame};
use crate::tracker::Track;

const HEADING_JITTER: f64 = 0.08;
const WALL_STEER: f64 = 0.15;
const MARGIN: f64 = 10.0;
const FISH_INTENSITY: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_clips: usize,
    pub fps: f64,
    pub clip_len: usize,
    pub frame_width: usize,
    pub frame_height: usize,
    /// Inclusive range of fish per clip.
    pub fish_per_clip: (usize, usize),
    /// Pixels per second.
    pub cruise_speed: (f64, f64),
    /// Probability that a clip contains a startling fish.
    pub startle_probability: f64,
    pub startle_speed_multiplier: f64,
    /// Magnitude range of the heading jump at startle onset, radians.
    pub startle_turn: (f64, f64),
    /// Factor applied to the box aspect ratio while startling.
    pub startle_aspect_drop: f64,
    /// Fish body length range, pixels.
    pub fish_length: (f64, f64),
    /// Body length over body height at rest.
    pub body_aspect: (f64, f64),
    pub detection_noise_sigma: f64,
    pub miss_rate: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_clips: 500,
            fps: 10.0,
            clip_len: 40,
            frame_width: 640,
            frame_height: 480,
            fish_per_clip: (1, 2),
            cruise_speed: (20.0, 60.0),
            startle_probability: 0.5,
            startle_speed_multiplier: 4.0,
            startle_turn: (FRAC_PI_2, PI),
            startle_aspect_drop: 0.5,
            fish_length: (40.0, 80.0),
            body_aspect: (2.0, 3.0),
            detection_noise_sigma: 1.0,
            miss_rate: 0.05,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.fps > 0.0) || self.clip_len < 2 {
            return bad("fps must be positive and clip_len at least 2");
        }
        if self.frame_width < 4 * MARGIN as usize || self.frame_height < 4 * MARGIN as usize {
            return bad("frame is too small");
        }
        if self.fish_per_clip.0 > self.fish_per_clip.1 {
            return bad("fish_per_clip range is inverted");
        }
        for (name, (lo, hi)) in [
            ("cruise_speed", self.cruise_speed),
            ("startle_turn", self.startle_turn),
            ("fish_length", self.fish_length),
            ("body_aspect", self.body_aspect),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= 0.0) {
                return Err(Error::Config(format!("{name} range must satisfy 0 <= lo <= hi")));
            }
        }
        if self.startle_turn.1 > PI {
            return bad("startle_turn cannot exceed pi");
        }
        if self.fish_length.0 <= 0.0 || self.body_aspect.0 <= 0.0 {
            return bad("fish size must be positive");
        }
        if !(0.0..=1.0).contains(&self.startle_probability) {
            return bad("startle_probability must be in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.miss_rate) {
            return bad("miss_rate must be in [0, 1)");
        }
        if !(self.startle_speed_multiplier > 0.0 && self.startle_aspect_drop > 0.0) {
            return bad("startle multipliers must be positive");
        }
        if !(self.detection_noise_sigma >= 0.0) {
            return bad("detection_noise_sigma must be non-negative");
        }
        Ok(())
    }

    /// Frames covered by one startle event (one second).
    pub fn startle_frames(&self) -> usize {
        (self.fps.round() as usize).clamp(1, self.clip_len - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartleEvent {
    pub onset: usize,
    pub duration: usize,
    /// Signed heading jump applied at onset.
    pub turn: f64,
}

impl StartleEvent {
    pub fn active(&self, frame: usize) -> bool {
        frame >= self.onset && frame < self.onset + self.duration
    }
}

/// Noise-free trajectory of one fish.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrack {
    pub fish_id: u64,
    pub label: bool,
    pub cruise_speed: f64,
    pub startle: Option<StartleEvent>,
    /// One entry per frame of the clip.
    pub entries: Vec<Detection>,
    /// Heading of the step arriving at each frame, before any wall
    /// reflection; entry 0 is the initial heading.
    pub headings: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticClip {
    /// Noisy detections; `pixels` is left empty, see [`render_frames`].
    pub clip: Clip,
    pub truth: Vec<TruthTrack>,
    pub background_seed: u64,
}

impl SyntheticClip {
    /// Positive iff any fish in the clip startles.
    pub fn label(&self) -> bool {
        self.truth.iter().any(|t| t.label)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: ScenarioConfig,
    pub clips: Vec<SyntheticClip>,
}

pub fn clip_name(index: usize) -> String {
    format!("clip_{index:06}")
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn wrap(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Generates `cfg.n_clips` clips. Clip `i` draws from stream `i` of a
/// generator seeded with `cfg.seed`, so output is independent of scheduling.
pub fn generate(cfg: &ScenarioConfig) -> Result<Dataset> {
    cfg.validate()?;
    let clips = (0..cfg.n_clips)
        .into_par_iter()
        .map(|i| generate_clip(cfg, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: cfg.clone(),
        clips,
    })
}

pub fn generate_clip(cfg: &ScenarioConfig, index: usize) -> Result<SyntheticClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let (w, h) = (cfg.frame_width as f64, cfg.frame_height as f64);
    let len = cfg.clip_len;

    let n_fish = rng.random_range(cfg.fish_per_clip.0..=cfg.fish_per_clip.1);
    let startle_clip = n_fish > 0 && rng.random_bool(cfg.startle_probability);
    let startler = if n_fish > 0 { rng.random_range(0..n_fish) } else { 0 };
    let heading_noise = Normal::new(0.0, HEADING_JITTER).expect("valid sigma");

    let mut truth = Vec::with_capacity(n_fish);
    for fish in 0..n_fish {
        let length = uniform(&mut rng, cfg.fish_length);
        let aspect = uniform(&mut rng, cfg.body_aspect);
        let (bw, bh) = (length, length / aspect);
        let cruise = uniform(&mut rng, cfg.cruise_speed);
        let mut x = uniform(&mut rng, (w / 4.0, 3.0 * w / 4.0));
        let mut y = uniform(&mut rng, (h / 4.0, 3.0 * h / 4.0));
        let mut heading = wrap(rng.random_range(-PI..PI));

        let duration = cfg.startle_frames();
        let onset_lo = (len / 8).max(1);
        let onset_hi = len.saturating_sub(duration + len / 8).max(onset_lo);
        let onset = rng.random_range(onset_lo..=onset_hi).min(len - duration);
        let turn_mag = uniform(&mut rng, cfg.startle_turn);
        let startle = (startle_clip && fish == startler).then_some(StartleEvent {
            onset,
            duration,
            turn: turn_mag,
        });

        let squash = cfg.startle_aspect_drop.sqrt();
        let mut entries = Vec::with_capacity(len);
        let mut headings = Vec::with_capacity(len);
        for t in 0..len {
            let jitter = heading_noise.sample(&mut rng);
            let mut step_heading = heading;
            if t > 0 {
                match startle {
                    Some(ev) if ev.onset == t => {
                        // turn toward the side facing the frame center
                        let to_center = (h / 2.0 - y).atan2(w / 2.0 - x);
                        let left = wrap(heading + turn_mag);
                        let right = wrap(heading - turn_mag);
                        heading = if wrap(left - to_center).abs() <= wrap(right - to_center).abs() {
                            left
                        } else {
                            right
                        };
                    }
                    Some(ev) if ev.active(t) => {}
                    _ => {
                        heading = wrap(heading + jitter);
                        let near_wall = x < 0.15 * w || x > 0.85 * w || y < 0.15 * h || y > 0.85 * h;
                        if near_wall {
                            let to_center = (h / 2.0 - y).atan2(w / 2.0 - x);
                            let diff = wrap(to_center - heading);
                            heading = wrap(heading + diff.clamp(-WALL_STEER, WALL_STEER));
                        }
                    }
                }
                step_heading = heading;
                let active = startle.is_some_and(|ev| ev.active(t));
                let speed = if active { cruise * cfg.startle_speed_multiplier } else { cruise };
                x += speed / cfg.fps * heading.cos();
                y += speed / cfg.fps * heading.sin();
                if x < MARGIN || x > w - MARGIN {
                    x = if x < MARGIN { 2.0 * MARGIN - x } else { 2.0 * (w - MARGIN) - x };
                    heading = wrap(PI - heading);
                }
                if y < MARGIN || y > h - MARGIN {
                    y = if y < MARGIN { 2.0 * MARGIN - y } else { 2.0 * (h - MARGIN) - y };
                    heading = wrap(-heading);
                }
                x = x.clamp(MARGIN, w - MARGIN);
                y = y.clamp(MARGIN, h - MARGIN);
            }
            let active = startle.is_some_and(|ev| ev.active(t));
            let (ew, eh) = if active { (bw * squash, bh / squash) } else { (bw, bh) };
            entries.push(Detection {
                frame_index: t,
                cx: x,
                cy: y,
                w: ew,
                h: eh,
                confidence: 1.0,
            });
            headings.push(step_heading);
        }
        // record the realized jump, including its sign
        let startle = startle.map(|ev| StartleEvent {
            turn: wrap(headings[ev.onset] - headings[ev.onset - 1]),
            ..ev
        });
        truth.push(TruthTrack {
            fish_id: fish as u64,
            label: startle.is_some(),
            cruise_speed: cruise,
            startle,
            entries,
            headings,
        });
    }

    let noise = Normal::new(0.0, cfg.detection_noise_sigma.max(f64::MIN_POSITIVE))
        .expect("valid sigma");
    let mut frames: Vec<Vec<Detection>> = vec![Vec::new(); len];
    for t in 0..len {
        for fish in &truth {
            let missed = rng.random_bool(cfg.miss_rate);
            let (nx, ny) = (noise.sample(&mut rng), noise.sample(&mut rng));
            let confidence = rng.random_range(0.6..1.0);
            if missed {
                continue;
            }
            let e = fish.entries[t];
            let (dx, dy) = if cfg.detection_noise_sigma > 0.0 { (nx, ny) } else { (0.0, 0.0) };
            frames[t].push(Detection {
                cx: (e.cx + dx).clamp(0.0, w),
                cy: (e.cy + dy).clamp(0.0, h),
                confidence,
                ..e
            });
        }
    }
    let background_seed = rng.random();
    let clip = Clip::new(
        clip_name(index),
        cfg.fps,
        cfg.frame_width,
        cfg.frame_height,
        frames,
        None,
    )?;
    Ok(SyntheticClip {
        clip,
        truth,
        background_seed,
    })
}

/// Renders each frame as a static textured background with every fish drawn
/// as a bright axis-aligned ellipse filling its true box.
pub fn render_frames(sc: &SyntheticClip) -> Vec<GrayFrame> {
    let (w, h) = (sc.clip.frame_width, sc.clip.frame_height);
    let mut rng = ChaCha8Rng::seed_from_u64(sc.background_seed);
    let (fx, fy) = (rng.random_range(0.02..0.08), rng.random_range(0.02..0.08));
    let (px, py) = (rng.random_range(0.0..PI), rng.random_range(0.0..PI));
    let data: Vec<f64> = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            0.25 + 0.1 * (x * fx + px).sin() * (y * fy + py).cos() + rng.random_range(-0.03..0.03)
        })
        .collect();
    let background = GrayFrame { width: w, height: h, data };

    (0..sc.clip.len())
        .map(|t| {
            let mut frame = background.clone();
            for fish in &sc.truth {
                let e = fish.entries[t];
                let (ax, ay) = (e.w / 2.0, e.h / 2.0);
                let x0 = (e.cx - ax).floor().max(0.0) as usize;
                let x1 = ((e.cx + ax).ceil() as usize).min(w);
                let y0 = (e.cy - ay).floor().max(0.0) as usize;
                let y1 = ((e.cy + ay).ceil() as usize).min(h);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let (u, v) = ((x as f64 + 0.5 - e.cx) / ax, (y as f64 + 0.5 - e.cy) / ay);
                        if u * u + v * v <= 1.0 {
                            frame.set(x, y, FISH_INTENSITY);
                        }
                    }
                }
            }
            frame
        })
        .collect()
}

/// Label assignment for one predicted track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackMatch {
    pub track_id: u64,
    pub fish_id: Option<u64>,
    /// Frames shared with the matched fish.
    pub shared_frames: usize,
    pub label: bool,
}

/// Gives each predicted track the label of the fish it follows on the most
/// frames (center distance below `max_distance`); ties go to the lower fish
/// id. Tracks that follow no fish are negative.
pub fn match_tracks_to_truth(pred: &[Track], truth: &[TruthTrack], max_distance: f64) -> Vec<TrackMatch> {
    pred.iter()
        .map(|track| {
            let mut best: Option<(usize, &TruthTrack)> = None;
            for fish in truth {
                let shared = track
                    .entries
                    .iter()
                    .filter(|d| {
                        fish.entries.get(d.frame_index).is_some_and(|e| {
                            (e.cx - d.cx).hypot(e.cy - d.cy) < max_distance
                        })
                    })
                    .count();
                if shared > 0 && best.is_none_or(|(n, _)| shared > n) {
                    best = Some((shared, fish));
                }
            }
            match best {
                Some((n, fish)) => TrackMatch {
                    track_id: track.track_id,
                    fish_id: Some(fish.fish_id),
                    shared_frames: n,
                    label: fish.label,
                },
                None => TrackMatch {
                    track_id: track.track_id,
                    fish_id: None,
                    shared_frames: 0,
                    label: false,
                },
            }
        })
        .collect()
}

/// Number of fish followed by a single predicted track on at least
/// `min_coverage` of their frames.
pub fn recovered_fish(pred: &[Track], truth: &[TruthTrack], max_distance: f64, min_coverage: f64) -> usize {
    truth
        .iter()
        .filter(|fish| {
            pred.iter().any(|track| {
                let shared = track
                    .entries
                    .iter()
                    .filter(|d| {
                        fish.entries
                            .get(d.frame_index)
                            .is_some_and(|e| (e.cx - d.cx).hypot(e.cy - d.cy) < max_distance)
                    })
                    .count();
                shared as f64 >= min_coverage * fish.entries.len() as f64
            })
        })
        .count()
}

//! File-based stages. Each stage reads the artifacts of the previous one and
//! writes its own, so any stage can be rerun on its own.
//!
//! Dataset directory:
//!
//! ```text
//! dataset.toml                      frame geometry, fps, clip list
//! labels.csv                        clip_id,track_id,label (ground truth, optional)
//! clips/<clip>/detections.csv
//! clips/<clip>/truth.csv            true fish positions (optional)
//! clips/<clip>/frames/frame_*.pgm   (optional)
//! ```
//!
//! Work directory: `tracks/<clip>.csv`, `track_labels.csv`,
//! `features/<clip>.csv`, `track_scores.csv`, `clip_scores.csv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    fit_normalization, load_bundle, save_bundle, to_tensor, train, Behavior, ModelBundle,
    TrainingReport,
};
use crate::config::PipelineConfig;
use crate::csvio::{self, write_atomic};
use crate::error::{Error, Result};
use crate::eval::{evaluate, ApVariant, ClipLabel, EvalReport, TrackScore};
use crate::features::{extract_features, format_features, load_features, FeatureSeries};
use crate::ingest::{
    format_detections, load_detections, load_frames, motion_gate, segment_clips, write_pgm, Clip,
};
use crate::synth::{self, match_tracks_to_truth, SyntheticClip, TruthTrack};
use crate::tracker::{format_tracks, load_tracks, track_clip, Track};

pub const DATASET_FILE: &str = "dataset.toml";
pub const LABELS_FILE: &str = "labels.csv";
pub const TRACK_LABELS_FILE: &str = "track_labels.csv";
pub const TRACK_SCORES_FILE: &str = "track_scores.csv";
pub const CLIP_SCORES_FILE: &str = "clip_scores.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub fps: f64,
    pub clip_len: usize,
    pub frame_width: usize,
    pub frame_height: usize,
    pub has_frames: bool,
    pub clips: Vec<String>,
}

impl DatasetInfo {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(DATASET_FILE);
        csvio::require(&path)?;
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let info: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        if !(info.fps > 0.0) || info.clip_len == 0 || info.frame_width == 0 || info.frame_height == 0 {
            return Err(Error::validation(format!("{}: invalid geometry", path.display())));
        }
        Ok(info)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).expect("dataset info serializes");
        write_atomic(&dir.join(DATASET_FILE), text.as_bytes())
    }
}

fn clip_dir(dataset: &Path, clip_id: &str) -> PathBuf {
    dataset.join("clips").join(clip_id)
}

/// Runs `f` on a pool of `jobs` threads (0 = one per core).
fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn bool_field(rec: &csvio::Record, path: &Path, idx: usize) -> Result<bool> {
    match rec.fields[idx].as_str() {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(rec.error(path, format!("label must be 0 or 1, got {other:?}"))),
    }
}

fn flag(b: bool) -> u8 {
    b as u8
}

// ---------------------------------------------------------------- synth

pub fn write_synthetic(dataset: &synth::Dataset, out: &Path, frames: bool, jobs: usize) -> Result<()> {
    let cfg = &dataset.config;
    with_pool(jobs, || {
        dataset
            .clips
            .par_iter()
            .try_for_each(|sc| write_synthetic_clip(sc, out, frames))
    })??;
    let mut labels = String::from("clip_id,track_id,label\n");
    for sc in &dataset.clips {
        for fish in &sc.truth {
            let _ = writeln!(labels, "{},{},{}", sc.clip.clip_id, fish.fish_id, flag(fish.label));
        }
    }
    write_atomic(&out.join(LABELS_FILE), labels.as_bytes())?;
    DatasetInfo {
        fps: cfg.fps,
        clip_len: cfg.clip_len,
        frame_width: cfg.frame_width,
        frame_height: cfg.frame_height,
        has_frames: frames,
        clips: dataset.clips.iter().map(|c| c.clip.clip_id.clone()).collect(),
    }
    .save(out)
}

fn write_synthetic_clip(sc: &SyntheticClip, out: &Path, frames: bool) -> Result<()> {
    let dir = clip_dir(out, &sc.clip.clip_id);
    write_atomic(&dir.join("detections.csv"), format_detections(&sc.clip.frames).as_bytes())?;
    let truth: Vec<Track> = sc
        .truth
        .iter()
        .map(|f| Track {
            track_id: f.fish_id,
            entries: f.entries.clone(),
            last_update_frame: f.entries.last().map_or(0, |d| d.frame_index),
            alive: false,
        })
        .collect();
    write_atomic(&dir.join("truth.csv"), format_tracks(&truth).as_bytes())?;
    if frames {
        for (i, frame) in synth::render_frames(sc).iter().enumerate() {
            write_pgm(&dir.join("frames").join(crate::ingest::frame_file_name(i)), frame)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- gate

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateSummary {
    pub windows: usize,
    pub kept: usize,
    /// False when no frames were supplied and every window was kept.
    pub gated: bool,
}

/// Segments a raw detection stream into clips, drops windows without motion
/// and writes the survivors as a dataset. Without frames, gating is skipped.
pub fn gate_stream(
    detections: &Path,
    frames_dir: Option<&Path>,
    out: &Path,
    cfg: &PipelineConfig,
    jobs: usize,
) -> Result<GateSummary> {
    csvio::require(detections)?;
    let dets = load_detections(detections, cfg.frame_width, cfg.frame_height)?;
    let pixels = match frames_dir {
        Some(dir) => {
            csvio::require(dir)?;
            let px = load_frames(dir)?;
            if let Some(f) = px.first() {
                if f.width != cfg.frame_width || f.height != cfg.frame_height {
                    return Err(Error::Shape(format!(
                        "frames are {}x{} but the configured frame size is {}x{}",
                        f.width, f.height, cfg.frame_width, cfg.frame_height
                    )));
                }
            }
            Some(px)
        }
        None => None,
    };
    let clips = segment_clips(
        &dets,
        pixels.as_deref(),
        cfg.fps,
        cfg.clip_len,
        cfg.frame_width,
        cfg.frame_height,
    )?;
    let gated = pixels.is_some();
    let keep: Vec<bool> = with_pool(jobs, || {
        clips
            .par_iter()
            .map(|c| if gated { motion_gate(c, &cfg.motion_gate) } else { Ok(true) })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut report = String::from("clip_id,kept\n");
    let mut kept_ids = Vec::new();
    for (i, (clip, &k)) in clips.iter().zip(&keep).enumerate() {
        let id = synth::clip_name(i);
        let _ = writeln!(report, "{id},{}", flag(k));
        if !k {
            continue;
        }
        let dir = clip_dir(out, &id);
        write_atomic(&dir.join("detections.csv"), format_detections(&clip.frames).as_bytes())?;
        if let Some(px) = &clip.pixels {
            for (f, frame) in px.iter().enumerate() {
                write_pgm(&dir.join("frames").join(crate::ingest::frame_file_name(f)), frame)?;
            }
        }
        kept_ids.push(id);
    }
    write_atomic(&out.join("gate.csv"), report.as_bytes())?;
    let kept = kept_ids.len();
    DatasetInfo {
        fps: cfg.fps,
        clip_len: cfg.clip_len,
        frame_width: cfg.frame_width,
        frame_height: cfg.frame_height,
        has_frames: gated,
        clips: kept_ids,
    }
    .save(out)?;
    Ok(GateSummary {
        windows: clips.len(),
        kept,
        gated,
    })
}

// ---------------------------------------------------------------- loading

/// Loads one clip of a dataset, with pixels when `pixels` is set and the
/// dataset has frames.
pub fn load_clip(dataset: &Path, info: &DatasetInfo, clip_id: &str, pixels: bool) -> Result<Clip> {
    let dir = clip_dir(dataset, clip_id);
    let det_path = dir.join("detections.csv");
    csvio::require(&det_path)?;
    let mut frames = load_detections(&det_path, info.frame_width, info.frame_height)?;
    if frames.len() > info.clip_len {
        return Err(Error::validation(format!(
            "{} references frame {} but clips have {} frames",
            det_path.display(),
            frames.len() - 1,
            info.clip_len
        )));
    }
    frames.resize_with(info.clip_len, Vec::new);
    let px = if pixels && info.has_frames {
        let frame_dir = dir.join("frames");
        csvio::require(&frame_dir)?;
        let px = load_frames(&frame_dir)?;
        if px.len() != info.clip_len {
            return Err(Error::Shape(format!(
                "{} holds {} frames, expected {}",
                frame_dir.display(),
                px.len(),
                info.clip_len
            )));
        }
        Some(px)
    } else {
        None
    };
    Clip::new(
        clip_id.to_string(),
        info.fps,
        info.frame_width,
        info.frame_height,
        frames,
        px,
    )
}

/// Ground-truth labels keyed by clip, then fish id. `None` when the dataset
/// carries no labels.
pub fn load_labels(dataset: &Path) -> Result<Option<BTreeMap<String, BTreeMap<u64, bool>>>> {
    let path = dataset.join(LABELS_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let mut out: BTreeMap<String, BTreeMap<u64, bool>> = BTreeMap::new();
    for rec in csvio::read_records(&path)? {
        rec.expect_len(&path, 3)?;
        let fish = rec.u64(&path, 1)?;
        let label = bool_field(&rec, &path, 2)?;
        out.entry(rec.fields[0].clone()).or_default().insert(fish, label);
    }
    Ok(Some(out))
}

fn load_truth(dataset: &Path, clip_id: &str, labels: &BTreeMap<u64, bool>) -> Result<Vec<TruthTrack>> {
    let path = clip_dir(dataset, clip_id).join("truth.csv");
    csvio::require(&path)?;
    load_tracks(&path)?
        .into_iter()
        .map(|t| {
            let label = *labels.get(&t.track_id).ok_or_else(|| {
                Error::validation(format!("{}: fish {} has no label", path.display(), t.track_id))
            })?;
            Ok(TruthTrack {
                fish_id: t.track_id,
                label,
                cruise_speed: 0.0,
                startle: None,
                entries: t.entries,
                headings: Vec::new(),
            })
        })
        .collect()
}

// ---------------------------------------------------------------- track

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackSummary {
    pub clips: usize,
    pub tracks: usize,
    pub labelled: bool,
}

/// Tracks every clip. With ground truth present, each track takes the label
/// of the fish it follows most closely (within the association gate).
pub fn track_dataset(dataset: &Path, work: &Path, cfg: &PipelineConfig, jobs: usize) -> Result<TrackSummary> {
    let info = DatasetInfo::load(dataset)?;
    let labels = load_labels(dataset)?;
    let gate = cfg.tracker.gate(info.frame_width, info.frame_height);
    let empty = BTreeMap::new();
    let per_clip: Vec<(usize, String)> = with_pool(jobs, || {
        info.clips
            .par_iter()
            .map(|id| -> Result<(usize, String)> {
                let clip = load_clip(dataset, &info, id, false)?;
                let tracks = track_clip(&clip, &cfg.tracker)?;
                write_atomic(
                    &work.join("tracks").join(format!("{id}.csv")),
                    format_tracks(&tracks).as_bytes(),
                )?;
                let mut rows = String::new();
                if let Some(labels) = &labels {
                    let truth = load_truth(dataset, id, labels.get(id).unwrap_or(&empty))?;
                    for m in match_tracks_to_truth(&tracks, &truth, gate) {
                        let _ = writeln!(rows, "{id},{},{}", m.track_id, flag(m.label));
                    }
                }
                Ok((tracks.len(), rows))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let labelled = labels.is_some();
    let label_path = work.join(TRACK_LABELS_FILE);
    if labelled {
        let mut text = String::from("clip_id,track_id,label\n");
        per_clip.iter().for_each(|(_, r)| text.push_str(r));
        write_atomic(&label_path, text.as_bytes())?;
    } else if label_path.exists() {
        std::fs::remove_file(&label_path).map_err(|e| Error::io(&label_path, e))?;
    }
    Ok(TrackSummary {
        clips: info.clips.len(),
        tracks: per_clip.iter().map(|(n, _)| n).sum(),
        labelled,
    })
}

// ---------------------------------------------------------------- featurize

pub fn featurize_dataset(dataset: &Path, work: &Path, cfg: &PipelineConfig, jobs: usize) -> Result<usize> {
    let info = DatasetInfo::load(dataset)?;
    let kernel = cfg.features.kernel.build();
    let counts = with_pool(jobs, || {
        info.clips
            .par_iter()
            .map(|id| -> Result<usize> {
                let track_path = work.join("tracks").join(format!("{id}.csv"));
                csvio::require(&track_path)?;
                let tracks = load_tracks(&track_path)?;
                let clip = load_clip(dataset, &info, id, true)?;
                let series = tracks
                    .iter()
                    .map(|t| extract_features(t, &clip, &kernel))
                    .collect::<Result<Vec<_>>>()?;
                write_atomic(
                    &work.join("features").join(format!("{id}.csv")),
                    format_features(&series).as_bytes(),
                )?;
                Ok(series.len())
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(counts.iter().sum())
}

fn load_clip_features(work: &Path, clip_id: &str) -> Result<Vec<FeatureSeries>> {
    let path = work.join("features").join(format!("{clip_id}.csv"));
    csvio::require(&path)?;
    load_features(&path)
}

/// `(clip_id, track_id) -> label` in file order.
fn load_track_labels(work: &Path) -> Result<Vec<(String, u64, bool)>> {
    let path = work.join(TRACK_LABELS_FILE);
    csvio::require(&path)?;
    csvio::read_records(&path)?
        .iter()
        .map(|rec| {
            rec.expect_len(&path, 3)?;
            Ok((rec.fields[0].clone(), rec.u64(&path, 1)?, bool_field(rec, &path, 2)?))
        })
        .collect()
}

// ---------------------------------------------------------------- train

/// Fits normalization and the network on every labelled track in `work`,
/// saves the bundle to `model` and the per-epoch loss next to it.
pub fn train_model(work: &Path, model: &Path, cfg: &PipelineConfig) -> Result<TrainingReport> {
    let labels = load_track_labels(work)?;
    let mut by_clip: BTreeMap<&str, BTreeMap<u64, FeatureSeries>> = BTreeMap::new();
    for (clip, _, _) in &labels {
        if !by_clip.contains_key(clip.as_str()) {
            let series = load_clip_features(work, clip)?;
            by_clip.insert(clip, series.into_iter().map(|s| (s.track_id, s)).collect());
        }
    }
    let mut series = Vec::with_capacity(labels.len());
    let mut targets = Vec::with_capacity(labels.len());
    for (clip, track, label) in &labels {
        let s = by_clip[clip.as_str()].get(track).ok_or_else(|| {
            Error::validation(format!("track {clip}/{track} has a label but no features"))
        })?;
        series.push(s.clone());
        targets.push(*label);
    }
    if series.is_empty() {
        return Err(Error::validation("no labelled tracks to train on"));
    }
    let norm = fit_normalization(&series)?;
    let arch = cfg.architecture();
    let hyper = cfg.hyperparameters();
    let tensors = series
        .iter()
        .map(|s| to_tensor(s, &norm, arch.seq_len))
        .collect::<Result<Vec<_>>>()?;
    let mut init = ModelBundle::initialize(arch, norm, hyper)?;
    init.decision_threshold = cfg.threshold;
    let (trained, report) = train(&init, &tensors, &targets, &hyper)?;
    save_bundle(model, &trained)?;
    let mut loss = String::from("epoch,loss\n");
    for (i, l) in report.epoch_losses.iter().enumerate() {
        let _ = writeln!(loss, "{},{l}", i + 1);
    }
    write_atomic(&loss_path(model), loss.as_bytes())?;
    Ok(report)
}

pub fn loss_path(model: &Path) -> PathBuf {
    model.with_extension("loss.csv")
}

// ---------------------------------------------------------------- classify

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifySummary {
    pub threshold: f64,
    pub tracks: usize,
    pub startle_tracks: usize,
    pub clips: usize,
    pub startle_clips: usize,
}

fn label_text(label: Option<bool>) -> String {
    label.map(|l| flag(l).to_string()).unwrap_or_default()
}

/// Scores every track and clip of `dataset` with the bundle at `model`.
/// `threshold` replaces the bundle's decision threshold when given.
pub fn classify_dataset(
    dataset: &Path,
    work: &Path,
    model: &Path,
    threshold: Option<f64>,
    jobs: usize,
) -> Result<ClassifySummary> {
    let bundle = load_bundle(model)?;
    let t = threshold.unwrap_or(bundle.decision_threshold);
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Config(format!("threshold {t} outside (0, 1)")));
    }
    let info = DatasetInfo::load(dataset)?;
    let track_labels: Option<BTreeMap<(String, u64), bool>> = if work.join(TRACK_LABELS_FILE).exists() {
        Some(
            load_track_labels(work)?
                .into_iter()
                .map(|(c, id, l)| ((c, id), l))
                .collect(),
        )
    } else {
        None
    };
    let clip_labels = load_labels(dataset)?;

    let scored: Vec<Vec<(u64, f64)>> = with_pool(jobs, || {
        info.clips
            .par_iter()
            .map(|id| -> Result<Vec<(u64, f64)>> {
                load_clip_features(work, id)?
                    .iter()
                    .map(|s| Ok((s.track_id, bundle.classify_track(s, Some(t))?.1)))
                    .collect()
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut summary = ClassifySummary {
        threshold: t,
        tracks: 0,
        startle_tracks: 0,
        clips: info.clips.len(),
        startle_clips: 0,
    };
    let mut tracks_csv = String::from("clip_id,track_id,score,behavior,label\n");
    let mut clips_csv = String::from("clip_id,score,behavior,label\n");
    for (id, tracks) in info.clips.iter().zip(&scored) {
        let mut best = 0.0f64;
        for &(track_id, score) in tracks {
            let b = Behavior::from_confidence(score, t);
            summary.tracks += 1;
            summary.startle_tracks += b.is_startle() as usize;
            best = best.max(score);
            let label = track_labels.as_ref().map(|m| m.get(&(id.clone(), track_id)).copied().unwrap_or(false));
            let _ = writeln!(
                tracks_csv,
                "{id},{track_id},{score:?},{},{}",
                behavior_name(b),
                label_text(label)
            );
        }
        let b = Behavior::from_confidence(best, t);
        summary.startle_clips += b.is_startle() as usize;
        let label = clip_labels
            .as_ref()
            .map(|m| m.get(id).is_some_and(|fish| fish.values().any(|&l| l)));
        let _ = writeln!(clips_csv, "{id},{best:?},{},{}", behavior_name(b), label_text(label));
    }
    write_atomic(&work.join(TRACK_SCORES_FILE), tracks_csv.as_bytes())?;
    write_atomic(&work.join(CLIP_SCORES_FILE), clips_csv.as_bytes())?;
    Ok(summary)
}

pub fn behavior_name(b: Behavior) -> &'static str {
    match b {
        Behavior::Startle => "startle",
        Behavior::NonStartle => "non_startle",
    }
}

// ---------------------------------------------------------------- eval

fn required_label(rec: &csvio::Record, path: &Path, idx: usize) -> Result<bool> {
    if rec.fields[idx].is_empty() {
        return Err(rec.error(path, "no ground-truth label; evaluation needs a labelled dataset".into()));
    }
    bool_field(rec, path, idx)
}

pub fn load_scores(work: &Path) -> Result<(Vec<TrackScore>, Vec<ClipLabel>)> {
    let tpath = work.join(TRACK_SCORES_FILE);
    let cpath = work.join(CLIP_SCORES_FILE);
    csvio::require(&tpath)?;
    csvio::require(&cpath)?;
    let tracks = csvio::read_records(&tpath)?
        .iter()
        .map(|rec| {
            rec.expect_len(&tpath, 5)?;
            Ok(TrackScore {
                clip_id: rec.fields[0].clone(),
                track_id: rec.u64(&tpath, 1)?,
                score: rec.f64(&tpath, 2)?,
                label: required_label(rec, &tpath, 4)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let clips = csvio::read_records(&cpath)?
        .iter()
        .map(|rec| {
            rec.expect_len(&cpath, 4)?;
            Ok(ClipLabel {
                clip_id: rec.fields[0].clone(),
                label: required_label(rec, &cpath, 3)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((tracks, clips))
}

/// Evaluates the scores in `work` and writes `<report>` (key = value lines)
/// plus `<report stem>.items.csv` and, optionally, `<report stem>.pr.csv`.
pub fn evaluate_work(
    work: &Path,
    report: &Path,
    threshold: f64,
    variant: ApVariant,
    pr_curve: bool,
) -> Result<EvalReport> {
    let (tracks, clips) = load_scores(work)?;
    let result = evaluate(&tracks, &clips, threshold, variant)?;
    write_atomic(report, result.to_text().as_bytes())?;
    write_atomic(&report.with_extension("items.csv"), result.items_csv().as_bytes())?;
    if pr_curve {
        write_atomic(&report.with_extension("pr.csv"), result.pr_curve_csv()?.as_bytes())?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Detection;
    use crate::synth::ScenarioConfig;

    fn small_config() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.synth = ScenarioConfig {
            n_clips: 12,
            seed: 3,
            ..ScenarioConfig::default()
        };
        cfg.classifier.epochs = 3;
        cfg.classifier.conv1_channels = 4;
        cfg.classifier.conv2_channels = 4;
        cfg.classifier.hidden = 6;
        cfg
    }

    fn run_all(root: &Path, cfg: &PipelineConfig) -> EvalReport {
        let (ds, work) = (root.join("ds"), root.join("work"));
        let data = synth::generate(&cfg.synth).unwrap();
        write_synthetic(&data, &ds, false, 2).unwrap();
        let t = track_dataset(&ds, &work, cfg, 2).unwrap();
        assert!(t.labelled && t.tracks > 0);
        featurize_dataset(&ds, &work, cfg, 2).unwrap();
        train_model(&work, &root.join("model.bin"), cfg).unwrap();
        classify_dataset(&ds, &work, &root.join("model.bin"), None, 2).unwrap();
        evaluate_work(&work, &root.join("report.txt"), cfg.threshold, ApVariant::Step, true).unwrap()
    }

    #[test]
    fn stages_chain_and_repeat_identically() {
        let cfg = small_config();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run_all(a.path(), &cfg);
        let rb = run_all(b.path(), &cfg);
        assert_eq!(ra, rb);
        for f in ["model.bin", "model.loss.csv", "report.txt", "report.items.csv", "report.pr.csv"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
        assert_eq!(ra.clips.len(), 12);
    }

    #[test]
    fn threshold_override_changes_decisions_only() {
        let cfg = small_config();
        let d = tempfile::tempdir().unwrap();
        run_all(d.path(), &cfg);
        let ds = d.path().join("ds");
        let work = d.path().join("work");
        let model = d.path().join("model.bin");
        let low = classify_dataset(&ds, &work, &model, Some(1e-9), 1).unwrap();
        let scores_low = std::fs::read_to_string(work.join(TRACK_SCORES_FILE)).unwrap();
        let high = classify_dataset(&ds, &work, &model, Some(1.0 - 1e-9), 1).unwrap();
        let scores_high = std::fs::read_to_string(work.join(TRACK_SCORES_FILE)).unwrap();
        assert_eq!(low.startle_tracks, low.tracks);
        assert_eq!(high.startle_tracks, 0);
        let strip = |s: &str| -> Vec<String> {
            s.lines().map(|l| l.split(',').take(3).collect::<Vec<_>>().join(",")).collect()
        };
        assert_eq!(strip(&scores_low), strip(&scores_high));
    }

    #[test]
    fn missing_artifacts_are_reported() {
        let d = tempfile::tempdir().unwrap();
        let cfg = small_config();
        assert!(matches!(
            track_dataset(&d.path().join("nope"), d.path(), &cfg, 1),
            Err(Error::MissingArtifact(_))
        ));
        assert!(matches!(
            train_model(d.path(), &d.path().join("m.bin"), &cfg),
            Err(Error::MissingArtifact(_))
        ));
        assert!(matches!(
            classify_dataset(d.path(), d.path(), &d.path().join("m.bin"), None, 1),
            Err(Error::MissingArtifact(_))
        ));
    }

    #[test]
    fn gate_drops_static_windows() {
        let d = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.frame_width = 32;
        cfg.frame_height = 24;
        cfg.clip_len = 4;
        let frames_dir = d.path().join("frames");
        let mut det = String::from("frame_index,cx,cy,w,h,confidence\n");
        for f in 0..12 {
            let mut frame = crate::ingest::GrayFrame::filled(32, 24, 0.2);
            // second window has a moving bright square
            if (4..8).contains(&f) {
                for y in 8..16 {
                    for x in (2 + 4 * (f - 4))..(10 + 4 * (f - 4)) {
                        frame.set(x, y, 0.9);
                    }
                }
            }
            write_pgm(&frames_dir.join(crate::ingest::frame_file_name(f)), &frame).unwrap();
            let _ = writeln!(det, "{f},10,10,4,2,0.9");
        }
        let det_path = d.path().join("det.csv");
        std::fs::write(&det_path, det).unwrap();
        let out = d.path().join("ds");
        let s = gate_stream(&det_path, Some(&frames_dir), &out, &cfg, 1).unwrap();
        assert_eq!(s, GateSummary { windows: 3, kept: 1, gated: true });
        let info = DatasetInfo::load(&out).unwrap();
        assert_eq!(info.clips, vec![synth::clip_name(1)]);
        let clip = load_clip(&out, &info, &info.clips[0], true).unwrap();
        assert_eq!(clip.len(), 4);
        assert!(clip.frames.iter().all(|f| f.len() == 1));

        let out2 = d.path().join("ds2");
        let s = gate_stream(&det_path, None, &out2, &cfg, 1).unwrap();
        assert_eq!(s, GateSummary { windows: 3, kept: 3, gated: false });
    }

    #[test]
    fn frame_dump_feeds_lmcm() {
        let d = tempfile::tempdir().unwrap();
        let mut cfg = small_config();
        cfg.synth.n_clips = 1;
        cfg.synth.fish_per_clip = (1, 1);
        let (ds, work) = (d.path().join("ds"), d.path().join("work"));
        write_synthetic(&synth::generate(&cfg.synth).unwrap(), &ds, true, 1).unwrap();
        track_dataset(&ds, &work, &cfg, 1).unwrap();
        featurize_dataset(&ds, &work, &cfg, 1).unwrap();
        let series = load_clip_features(&work, &synth::clip_name(0)).unwrap();
        assert!(series.iter().flat_map(|s| &s.rows).any(|r| r.lmcm > 0.0));
    }

    #[test]
    fn detection_grid_outside_clip_is_rejected() {
        let d = tempfile::tempdir().unwrap();
        let info = DatasetInfo {
            fps: 10.0,
            clip_len: 2,
            frame_width: 20,
            frame_height: 20,
            has_frames: false,
            clips: vec!["c".into()],
        };
        info.save(d.path()).unwrap();
        let det = Detection { frame_index: 5, cx: 5.0, cy: 5.0, w: 2.0, h: 1.0, confidence: 1.0 };
        let mut frames = vec![Vec::new(); 6];
        frames[5].push(det);
        write_atomic(&clip_dir(d.path(), "c").join("detections.csv"), format_detections(&frames).as_bytes()).unwrap();
        assert!(matches!(load_clip(d.path(), &info, "c", false), Err(Error::Validation(_))));
    }
}

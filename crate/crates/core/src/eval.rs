//! Track-wise and clip-wise metrics: average precision, BCE and recall.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::classifier::loss_bce;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredItem {
    pub item_id: String,
    pub score: f64,
    pub label: bool,
}

impl ScoredItem {
    pub fn new(item_id: impl Into<String>, score: f64, label: bool) -> Self {
        Self {
            item_id: item_id.into(),
            score,
            label,
        }
    }
}

/// How precision is read off the ranked list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApVariant {
    /// Raw precision at each positive rank.
    #[default]
    Step,
    /// Precision replaced by its maximum over all deeper ranks.
    Interpolated,
}

impl ApVariant {
    pub fn name(self) -> &'static str {
        match self {
            ApVariant::Step => "step",
            ApVariant::Interpolated => "interpolated",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "step" => Ok(ApVariant::Step),
            "interpolated" => Ok(ApVariant::Interpolated),
            other => Err(Error::Config(format!("unknown AP variant {other:?}"))),
        }
    }
}

fn check_items(items: &[ScoredItem]) -> Result<usize> {
    if let Some(it) = items.iter().find(|it| !it.score.is_finite()) {
        return Err(Error::validation(format!("item {} has a non-finite score", it.item_id)));
    }
    let positives = items.iter().filter(|it| it.label).count();
    if positives == 0 {
        return Err(Error::validation("no positive labels"));
    }
    Ok(positives)
}

/// Items ordered by descending score, ties by ascending id.
pub fn rank(items: &[ScoredItem]) -> Vec<&ScoredItem> {
    let mut ranked: Vec<&ScoredItem> = items.iter().collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.item_id.cmp(&b.item_id))
    });
    ranked
}

/// Precision at every rank of the sorted list.
fn precisions(ranked: &[&ScoredItem]) -> Vec<f64> {
    let mut tp = 0usize;
    ranked
        .iter()
        .enumerate()
        .map(|(k, it)| {
            if it.label {
                tp += 1;
            }
            tp as f64 / (k + 1) as f64
        })
        .collect()
}

/// Mean of precision at the rank of each positive item.
pub fn average_precision(items: &[ScoredItem]) -> Result<f64> {
    average_precision_with(items, ApVariant::Step)
}

pub fn average_precision_with(items: &[ScoredItem], variant: ApVariant) -> Result<f64> {
    let positives = check_items(items)?;
    let ranked = rank(items);
    let mut prec = precisions(&ranked);
    if variant == ApVariant::Interpolated {
        for k in (0..prec.len().saturating_sub(1)).rev() {
            prec[k] = prec[k].max(prec[k + 1]);
        }
    }
    let sum: f64 = ranked
        .iter()
        .zip(&prec)
        .filter(|(it, _)| it.label)
        .map(|(_, p)| *p)
        .sum();
    Ok(sum / positives as f64)
}

/// Fraction of positives scored at or above `threshold`.
pub fn recall_at(items: &[ScoredItem], threshold: f64) -> Result<f64> {
    let positives = check_items(items)?;
    let tp = items
        .iter()
        .filter(|it| it.label && it.score >= threshold)
        .count();
    Ok(tp as f64 / positives as f64)
}

pub fn mean_bce(items: &[ScoredItem]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::validation("BCE of an empty set"));
    }
    Ok(items.iter().map(|it| loss_bce(it.score, it.label)).sum::<f64>() / items.len() as f64)
}

/// One point per rank: `(score, precision, recall)`.
pub fn precision_recall_curve(items: &[ScoredItem]) -> Result<Vec<(f64, f64, f64)>> {
    let positives = check_items(items)? as f64;
    let ranked = rank(items);
    let mut tp = 0usize;
    Ok(ranked
        .iter()
        .enumerate()
        .map(|(k, it)| {
            if it.label {
                tp += 1;
            }
            (it.score, tp as f64 / (k + 1) as f64, tp as f64 / positives)
        })
        .collect())
}

/// A classified track with its ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackScore {
    pub clip_id: String,
    pub track_id: u64,
    pub score: f64,
    pub label: bool,
}

impl TrackScore {
    pub fn item_id(&self) -> String {
        format!("{}/{}", self.clip_id, self.track_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipLabel {
    pub clip_id: String,
    pub label: bool,
}

/// Clip score = highest score among the clip's tracks, 0 for clips without
/// tracks. Output follows the order of `clips`.
pub fn clip_scores(tracks: &[TrackScore], clips: &[ClipLabel]) -> Result<Vec<ScoredItem>> {
    let mut best: BTreeMap<&str, f64> = clips.iter().map(|c| (c.clip_id.as_str(), 0.0)).collect();
    if best.len() != clips.len() {
        return Err(Error::validation("duplicate clip ids"));
    }
    for t in tracks {
        let slot = best.get_mut(t.clip_id.as_str()).ok_or_else(|| {
            Error::validation(format!(
                "track {} references unknown clip {}",
                t.track_id, t.clip_id
            ))
        })?;
        *slot = slot.max(t.score);
    }
    Ok(clips
        .iter()
        .map(|c| ScoredItem::new(c.clip_id.clone(), best[c.clip_id.as_str()], c.label))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub threshold: f64,
    pub ap_variant: ApVariant,
    pub track_ap: f64,
    pub track_bce: f64,
    pub track_recall: f64,
    pub clip_ap: f64,
    pub clip_bce: f64,
    pub clip_recall: f64,
    pub tracks: Vec<ScoredItem>,
    pub clips: Vec<ScoredItem>,
}

pub fn evaluate(
    tracks: &[TrackScore],
    clips: &[ClipLabel],
    threshold: f64,
    variant: ApVariant,
) -> Result<EvalReport> {
    let track_items: Vec<ScoredItem> = tracks
        .iter()
        .map(|t| ScoredItem::new(t.item_id(), t.score, t.label))
        .collect();
    let clip_items = clip_scores(tracks, clips)?;
    Ok(EvalReport {
        threshold,
        ap_variant: variant,
        track_ap: average_precision_with(&track_items, variant)?,
        track_bce: mean_bce(&track_items)?,
        track_recall: recall_at(&track_items, threshold)?,
        clip_ap: average_precision_with(&clip_items, variant)?,
        clip_bce: mean_bce(&clip_items)?,
        clip_recall: recall_at(&clip_items, threshold)?,
        tracks: track_items,
        clips: clip_items,
    })
}

impl EvalReport {
    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let count = |items: &[ScoredItem]| (items.len(), items.iter().filter(|i| i.label).count());
        let (nt, pt) = count(&self.tracks);
        let (nc, pc) = count(&self.clips);
        let mut s = String::new();
        let _ = writeln!(s, "threshold = {}", self.threshold);
        let _ = writeln!(s, "ap_variant = {}", self.ap_variant.name());
        let _ = writeln!(s, "track_count = {nt}");
        let _ = writeln!(s, "track_positives = {pt}");
        let _ = writeln!(s, "track_ap = {}", self.track_ap);
        let _ = writeln!(s, "track_bce = {}", self.track_bce);
        let _ = writeln!(s, "track_recall = {}", self.track_recall);
        let _ = writeln!(s, "clip_count = {nc}");
        let _ = writeln!(s, "clip_positives = {pc}");
        let _ = writeln!(s, "clip_ap = {}", self.clip_ap);
        let _ = writeln!(s, "clip_bce = {}", self.clip_bce);
        let _ = writeln!(s, "clip_recall = {}", self.clip_recall);
        s
    }

    /// `kind,item_id,score,label,predicted` for every track and clip.
    pub fn items_csv(&self) -> String {
        let mut s = String::from("kind,item_id,score,label,predicted\n");
        for (kind, items) in [("track", &self.tracks), ("clip", &self.clips)] {
            for it in items.iter() {
                let _ = writeln!(
                    s,
                    "{kind},{},{},{},{}",
                    it.item_id,
                    it.score,
                    u8::from(it.label),
                    u8::from(it.score >= self.threshold)
                );
            }
        }
        s
    }

    /// `kind,score,precision,recall` for both levels.
    pub fn pr_curve_csv(&self) -> Result<String> {
        let mut s = String::from("kind,score,precision,recall\n");
        for (kind, items) in [("track", &self.tracks), ("clip", &self.clips)] {
            for (score, p, r) in precision_recall_curve(items)? {
                let _ = writeln!(s, "{kind},{score},{p},{r}");
            }
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn items(pairs: &[(bool, f64)]) -> Vec<ScoredItem> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(l, s))| ScoredItem::new(format!("{i:02}"), s, l))
            .collect()
    }

    #[test]
    fn perfect_and_reversed_pairs() {
        assert_eq!(average_precision(&items(&[(true, 0.9), (false, 0.1)])).unwrap(), 1.0);
        assert_eq!(average_precision(&items(&[(false, 0.9), (true, 0.1)])).unwrap(), 0.5);
    }

    #[test]
    fn four_item_example() {
        let ap = average_precision(&items(&[(true, 0.9), (false, 0.8), (true, 0.7), (false, 0.6)]))
            .unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((ap - 0.8333).abs() < 1e-4);
    }

    #[test]
    fn interpolated_variant() {
        // ranks: 0 1 0 1 -> precisions 0, 1/2, 1/3, 1/2; envelope at positives 1/2, 1/2
        let v = items(&[(false, 0.9), (true, 0.8), (false, 0.7), (true, 0.6)]);
        assert_eq!(average_precision(&v).unwrap(), 0.5);
        assert_eq!(average_precision_with(&v, ApVariant::Interpolated).unwrap(), 0.5);
        let v = items(&[(true, 0.9), (false, 0.8), (false, 0.7), (true, 0.6), (true, 0.5)]);
        let step = average_precision(&v).unwrap();
        let interp = average_precision_with(&v, ApVariant::Interpolated).unwrap();
        assert!((step - (1.0 + 0.5 + 0.6) / 3.0).abs() < 1e-15);
        assert!((interp - (1.0 + 0.6 + 0.6) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ties_broken_by_id() {
        let v = vec![ScoredItem::new("b", 0.5, true), ScoredItem::new("a", 0.5, false)];
        assert_eq!(average_precision(&v).unwrap(), 0.5);
    }

    #[test]
    fn no_positives_is_an_error() {
        let v = items(&[(false, 0.3)]);
        assert!(average_precision(&v).unwrap_err().to_string().contains("no positive labels"));
        assert!(recall_at(&v, 0.5).is_err());
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at(&items(&[(true, 1.0), (true, 1.0)]), 0.5).unwrap(), 1.0);
        assert_eq!(recall_at(&items(&[(true, 0.6), (true, 0.4)]), 0.5).unwrap(), 0.5);
        assert_eq!(recall_at(&items(&[(true, 0.5)]), 0.5).unwrap(), 1.0);
    }

    fn ts(clip: &str, id: u64, score: f64) -> TrackScore {
        TrackScore {
            clip_id: clip.into(),
            track_id: id,
            score,
            label: false,
        }
    }

    fn cl(id: &str) -> ClipLabel {
        ClipLabel {
            clip_id: id.into(),
            label: true,
        }
    }

    #[test]
    fn clip_score_is_max_track_score() {
        let out = clip_scores(&[ts("a", 0, 0.3), ts("a", 1, 0.7)], &[cl("a"), cl("b")]).unwrap();
        assert_eq!(out[0].score, 0.7);
        assert_eq!(out[1].score, 0.0);
        let one = clip_scores(&[ts("a", 0, 0.3), ts("b", 0, 0.9)], &[cl("a"), cl("b")]).unwrap();
        assert_eq!((one[0].score, one[1].score), (0.3, 0.9));
    }

    #[test]
    fn unknown_clip_rejected() {
        assert!(clip_scores(&[ts("z", 0, 0.3)], &[cl("a")]).is_err());
    }

    #[test]
    fn report_contains_headline_metrics() {
        let tracks = vec![
            TrackScore { label: true, ..ts("a", 0, 0.8) },
            ts("a", 1, 0.2),
            ts("b", 0, 0.4),
        ];
        let clips = vec![cl("a"), ClipLabel { clip_id: "b".into(), label: false }];
        let report = evaluate(&tracks, &clips, 0.5, ApVariant::Step).unwrap();
        let text = report.to_text();
        for key in ["track_ap = 1", "track_bce = ", "clip_ap = 1", "clip_recall = 1"] {
            assert!(text.contains(key), "{text}");
        }
        assert_eq!(report.items_csv().lines().count(), 1 + 3 + 2);
        assert!(report.pr_curve_csv().unwrap().contains("clip,0.8,1,1"));
    }

    proptest! {
        #[test]
        fn ap_invariant_under_monotone_transform(
            data in prop::collection::vec((any::<bool>(), 0.0..1.0f64), 1..30)
        ) {
            prop_assume!(data.iter().any(|d| d.0));
            let a = items(&data);
            let b: Vec<ScoredItem> = a
                .iter()
                .map(|it| ScoredItem::new(it.item_id.clone(), (3.0 * it.score).exp() - 7.0, it.label))
                .collect();
            prop_assert_eq!(average_precision(&a).unwrap(), average_precision(&b).unwrap());
        }

        #[test]
        fn recall_non_increasing(
            data in prop::collection::vec((any::<bool>(), 0.0..1.0f64), 1..30)
        ) {
            prop_assume!(data.iter().any(|d| d.0));
            let v = items(&data);
            let mut prev = f64::INFINITY;
            for k in 0..=100 {
                let r = recall_at(&v, k as f64 / 100.0).unwrap();
                prop_assert!(r <= prev);
                prev = r;
            }
        }
    }
}

//! Score fusion and proposal generation: class selection, thresholding,
//! run merging, outer-inner-contrast scoring and class-wise temporal NMS.

use std::cmp::Ordering;

use ndarray::{ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::tiou;
use crate::types::{ClassId, Proposal, ScoreSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalConfig {
    pub video_class_threshold: f64,
    pub snippet_thresholds: Vec<f64>,
    pub nms_tiou: f64,
    pub oic_outer_fraction: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            video_class_threshold: 0.5,
            snippet_thresholds: (1..=9).map(|i| i as f64 / 10.0).collect(),
            nms_tiou: 0.6,
            oic_outer_fraction: 0.25,
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        let half_open = |v: f64| v > 0.0 && v <= 1.0;
        if !open_unit(self.video_class_threshold) {
            return Err(Error::Config(format!(
                "proposal.video_class_threshold must be in (0, 1), got {}",
                self.video_class_threshold
            )));
        }
        if self.snippet_thresholds.is_empty() {
            return Err(Error::Config("proposal.snippet_thresholds is empty".into()));
        }
        if let Some(t) = self.snippet_thresholds.iter().find(|t| !open_unit(**t)) {
            return Err(Error::Config(format!(
                "proposal.snippet_thresholds entries must be in (0, 1), got {t}"
            )));
        }
        if !half_open(self.nms_tiou) {
            return Err(Error::Config(format!(
                "proposal.nms_tiou must be in (0, 1], got {}",
                self.nms_tiou
            )));
        }
        if !half_open(self.oic_outer_fraction) {
            return Err(Error::Config(format!(
                "proposal.oic_outer_fraction must be in (0, 1], got {}",
                self.oic_outer_fraction
            )));
        }
        Ok(())
    }
}

/// Multiplies every class column by the actionness `1 - b_t`; the
/// background column passes through.
pub fn fuse_scores(scores: &ScoreSequence) -> ScoreSequence {
    let c = scores.num_classes();
    let mut out = scores.values().clone();
    for mut row in out.rows_mut() {
        let actionness = 1.0 - row[c];
        row.slice_mut(ndarray::s![..c]).mapv_inplace(|p| p * actionness);
    }
    ScoreSequence::from_raw(out)
}

/// Maximal runs of indices with `score >= threshold`, as inclusive
/// `(start, end)` index pairs.
pub fn segment_candidates(scores: ArrayView1<'_, f64>, threshold: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for (t, &s) in scores.iter().enumerate() {
        match (s >= threshold, open) {
            (true, None) => open = Some(t),
            (false, Some(start)) => {
                out.push((start, t - 1));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        out.push((start, scores.len() - 1));
    }
    out
}

/// Inner mean minus the pooled mean of both flanks. Each flank spans
/// `max(1, round(fraction * len))` indices before clipping to the video.
pub fn oic_score(scores: ArrayView1<'_, f64>, segment: (usize, usize), outer_fraction: f64) -> f64 {
    let (start, end) = segment;
    let n = scores.len();
    let inner = scores.slice(ndarray::s![start..=end]);
    let inner_mean = inner.sum() / inner.len() as f64;

    let flank = ((outer_fraction * (end - start + 1) as f64).round() as usize).max(1);
    let left = start.saturating_sub(flank)..start;
    let right = (end + 1).min(n)..(end + 1 + flank).min(n);
    let outer_len = left.len() + right.len();
    if outer_len == 0 {
        return inner_mean;
    }
    let outer_sum: f64 = scores.slice(ndarray::s![left]).sum() + scores.slice(ndarray::s![right]).sum();
    inner_mean - outer_sum / outer_len as f64
}

/// Descending confidence, ties by earlier start then earlier end.
pub(crate) fn by_confidence(a: &Proposal, b: &Proposal) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.start.total_cmp(&b.start))
        .then(a.end.total_cmp(&b.end))
}

/// Greedy class-wise suppression. A proposal survives iff its tIoU with
/// every kept proposal of the same class is below `tiou_threshold`.
pub fn temporal_nms(proposals: &[Proposal], tiou_threshold: f64) -> Vec<Proposal> {
    let mut sorted = proposals.to_vec();
    sorted.sort_by(by_confidence);
    let mut kept: Vec<Proposal> = Vec::with_capacity(sorted.len());
    for p in sorted {
        let suppressed = kept
            .iter()
            .any(|k| k.label == p.label && tiou(k.interval(), p.interval()) >= tiou_threshold);
        if !suppressed {
            kept.push(p);
        }
    }
    kept
}

/// Proposals from one or more pyramid levels of raw (unfused) scores.
///
/// `video_scores` selects classes; level `l` segments are mapped to level-0
/// time by `sigma^l` and clipped to the level-0 length.
pub fn generate_proposals(
    levels: &[ScoreSequence],
    video_scores: &[f64],
    sigma: usize,
    config: &ProposalConfig,
) -> Vec<Proposal> {
    let Some(base) = levels.first() else {
        return Vec::new();
    };
    let length = base.len() as f64;
    let fused: Vec<ScoreSequence> = levels.iter().map(fuse_scores).collect();
    let mut pool = Vec::new();
    for (c, _) in video_scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= config.video_class_threshold)
    {
        let class = ClassId(c);
        for (l, level) in fused.iter().enumerate() {
            let scale = (sigma as f64).powi(l as i32);
            let track = level.class_track(class);
            for &thr in &config.snippet_thresholds {
                for seg in segment_candidates(track, thr) {
                    let confidence = oic_score(track, seg, config.oic_outer_fraction).max(0.0);
                    let start = seg.0 as f64 * scale;
                    let end = ((seg.1 + 1) as f64 * scale).min(length);
                    if start < end {
                        pool.push(Proposal::new(start, end, class, confidence));
                    }
                }
            }
        }
    }
    temporal_nms(&pool, config.nms_tiou)
}

/// Element-wise check used by property tests: `fused <= min(p, 1 - b)`.
pub fn fusion_bounded(raw: &ScoreSequence, fused: &ScoreSequence) -> bool {
    let c = raw.num_classes();
    let mut ok = true;
    Zip::from(raw.values().rows())
        .and(fused.values().rows())
        .for_each(|r, f| {
            let a = 1.0 - r[c];
            for k in 0..c {
                ok &= f[k] <= r[k].min(a) + 1e-15;
            }
        });
    ok
}

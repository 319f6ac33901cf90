//! Temporal IoU, per-class average precision and mAP over tIoU thresholds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClassId, GtInterval, Interval, Proposal};

/// Intersection over union of two half-open intervals; 0 when disjoint.
pub fn tiou(a: Interval, b: Interval) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.len() + b.len() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApInterpolation {
    /// Exact area under the ranked precision/recall steps.
    #[default]
    AllPoints,
    /// Mean interpolated precision at recall 0.0, 0.1, ..., 1.0.
    ElevenPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tiou_thresholds: Vec<f64>,
    pub interpolation: ApInterpolation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tiou_thresholds: (1..=7).map(|i| i as f64 / 10.0).collect(),
            interpolation: ApInterpolation::AllPoints,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tiou_thresholds.is_empty() {
            return Err(Error::Config("eval.tiou_thresholds is empty".into()));
        }
        if let Some(t) = self.tiou_thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(Error::Config(format!(
                "eval.tiou_thresholds entries must be in (0, 1], got {t}"
            )));
        }
        Ok(())
    }
}

/// A scored detection of one class, tagged with its video.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedDetection {
    pub video: usize,
    pub interval: Interval,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtInstance {
    pub video: usize,
    pub interval: Interval,
}

/// Rank order: descending score, then earlier start, then earlier end,
/// then lower video index.
pub fn sort_ranked(dets: &mut [RankedDetection]) {
    dets.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.interval.start.total_cmp(&b.interval.start))
            .then(a.interval.end.total_cmp(&b.interval.end))
            .then(a.video.cmp(&b.video))
    });
}

/// True-positive flags in rank order. Each detection claims the unmatched
/// ground truth of its video with the highest tIoU, if that reaches the
/// threshold.
pub fn match_detections(
    ranked: &[RankedDetection],
    gt: &[GtInstance],
    threshold: f64,
) -> Vec<bool> {
    let mut taken = vec![false; gt.len()];
    ranked
        .iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, inst) in gt.iter().enumerate() {
                if taken[g] || inst.video != d.video {
                    continue;
                }
                let o = tiou(d.interval, inst.interval);
                if o >= threshold && best.is_none_or(|(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Average precision of one class. `None` when there is neither ground
/// truth nor any detection; 0 when only one side is empty.
pub fn average_precision(
    detections: &[RankedDetection],
    gt: &[GtInstance],
    threshold: f64,
    interpolation: ApInterpolation,
) -> Option<f64> {
    if gt.is_empty() {
        return (!detections.is_empty()).then_some(0.0);
    }
    let mut ranked = detections.to_vec();
    sort_ranked(&mut ranked);
    let hits = match_detections(&ranked, gt, threshold);

    let total = gt.len() as f64;
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(hits.len());
    for (rank, &hit) in hits.iter().enumerate() {
        if hit {
            tp += 1;
        }
        curve.push((tp as f64 / total, tp as f64 / (rank + 1) as f64, hit));
    }

    let ap = match interpolation {
        ApInterpolation::AllPoints => {
            curve.iter().filter(|c| c.2).map(|c| c.1).sum::<f64>() / total
        }
        ApInterpolation::ElevenPoint => {
            (0..=10)
                .map(|i| {
                    let r = i as f64 / 10.0;
                    curve
                        .iter()
                        .filter(|c| c.0 >= r - 1e-12)
                        .map(|c| c.1)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
    };
    Some(ap)
}

/// Detections and ground truth for one video.
#[derive(Debug, Clone, Copy)]
pub struct EvalVideo<'a> {
    pub detections: &'a [Proposal],
    pub ground_truth: &'a [GtInterval],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: ClassId,
    pub num_ground_truth: usize,
    /// AP per threshold; `None` when the class has neither ground truth nor
    /// detections.
    pub ap: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tiou_thresholds: Vec<f64>,
    pub per_class: Vec<ClassReport>,
    /// Mean AP over classes that have ground truth, per threshold.
    pub map: Vec<f64>,
    pub average_map: f64,
}

pub fn evaluate(videos: &[EvalVideo<'_>], num_classes: usize, config: &EvalConfig) -> EvalReport {
    let mut per_class = Vec::with_capacity(num_classes);
    let mut sums = vec![0.0; config.tiou_thresholds.len()];
    let mut present = 0usize;
    for c in 0..num_classes {
        let class = ClassId(c);
        let mut dets = Vec::new();
        let mut gt = Vec::new();
        for (v, video) in videos.iter().enumerate() {
            dets.extend(video.detections.iter().filter(|d| d.label == class).map(|d| {
                RankedDetection {
                    video: v,
                    interval: d.interval(),
                    score: d.confidence,
                }
            }));
            gt.extend(video.ground_truth.iter().filter(|g| g.label == class).map(|g| {
                GtInstance {
                    video: v,
                    interval: g.interval(),
                }
            }));
        }
        let ap: Vec<Option<f64>> = config
            .tiou_thresholds
            .iter()
            .map(|&thr| average_precision(&dets, &gt, thr, config.interpolation))
            .collect();
        if !gt.is_empty() {
            present += 1;
            for (s, a) in sums.iter_mut().zip(&ap) {
                *s += a.unwrap_or(0.0);
            }
        }
        per_class.push(ClassReport {
            class,
            num_ground_truth: gt.len(),
            ap,
        });
    }
    let map: Vec<f64> = sums
        .iter()
        .map(|s| if present > 0 { s / present as f64 } else { 0.0 })
        .collect();
    let average_map = if map.is_empty() {
        0.0
    } else {
        map.iter().sum::<f64>() / map.len() as f64
    };
    EvalReport {
        tiou_thresholds: config.tiou_thresholds.clone(),
        per_class,
        map,
        average_map,
    }
}

impl EvalReport {
    /// Plain-text table: one row per class, then the mAP row.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<8}", "class");
        for t in &self.tiou_thresholds {
            let _ = write!(out, " {:>7}", format!("@{t:.2}"));
        }
        let _ = writeln!(out, " {:>7}", "avg");
        for row in &self.per_class {
            let _ = write!(out, "{:<8}", row.class.to_string());
            for ap in &row.ap {
                match ap {
                    Some(v) => {
                        let _ = write!(out, " {:>7.2}", v * 100.0);
                    }
                    None => {
                        let _ = write!(out, " {:>7}", "-");
                    }
                }
            }
            let known: Vec<f64> = row.ap.iter().flatten().copied().collect();
            if known.is_empty() {
                let _ = writeln!(out, " {:>7}", "-");
            } else {
                let _ = writeln!(out, " {:>7.2}", 100.0 * known.iter().sum::<f64>() / known.len() as f64);
            }
        }
        let _ = write!(out, "{:<8}", "mAP");
        for m in &self.map {
            let _ = write!(out, " {:>7.2}", m * 100.0);
        }
        let _ = writeln!(out, " {:>7.2}", self.average_map * 100.0);
        out
    }
}

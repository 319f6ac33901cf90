//! Pseudo-label generation from noisy proposals and point annotations.
//!
//! Every annotated point receives exactly one refined interval:
//!
//! 1. Proposals containing exactly one label-matching point become seeds
//!    for that point.
//! 2. Per-class mean seed duration `d_c` is computed once over the seeds of
//!    every video.
//! 3. A point with seeds keeps its highest-confidence seed. A point without
//!    seeds takes the highest-confidence raw proposal containing it,
//!    truncated to `[eps - d_c/2, eps + d_c/2]`. A point that no proposal of
//!    its class contains gets `[eps - d_c/2, eps + d_c/2]` clipped to the
//!    video.
//!
//! Confidence ties are broken by smaller start, then smaller end.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClassId, PointAnnotation, Proposal, PseudoLabel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementConfig {
    /// Duration used for the truncation radius when no seed statistics
    /// exist at all.
    pub default_duration: f64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            default_duration: 16.0,
        }
    }
}

/// A singleton-seed candidate: the owning point index, the interval, and
/// the confidence that only lives until selection is done.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seed {
    pub point_index: usize,
    pub label: PseudoLabel,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDurationStats {
    total: Vec<f64>,
    pub count: Vec<usize>,
}

impl ClassDurationStats {
    pub fn num_classes(&self) -> usize {
        self.count.len()
    }

    /// Mean seed duration for `class`, `None` when it has no seeds.
    pub fn mean_duration(&self, class: ClassId) -> Option<f64> {
        match self.count.get(class.0) {
            Some(&n) if n > 0 => Some(self.total[class.0] / n as f64),
            _ => None,
        }
    }

    /// Mean duration over all seeds regardless of class.
    pub fn global_mean(&self) -> Option<f64> {
        let n: usize = self.count.iter().sum();
        (n > 0).then(|| self.total.iter().sum::<f64>() / n as f64)
    }

    /// Truncation half-width for `class`: class mean, then global mean,
    /// then the configured default, halved.
    pub fn half_width(&self, class: ClassId, config: &RefinementConfig) -> f64 {
        self.mean_duration(class)
            .or_else(|| self.global_mean())
            .unwrap_or(config.default_duration)
            / 2.0
    }
}

/// Closed-interval membership with label agreement.
pub fn point_in_proposal(proposal: &Proposal, point: &PointAnnotation) -> bool {
    let eps = point.epsilon as f64;
    point.class() == Some(proposal.label) && proposal.start <= eps && eps <= proposal.end
}

/// Proposals that contain exactly one label-matching point, tagged with
/// that point.
pub fn seed_singleton_proposals(proposals: &[Proposal], points: &[PointAnnotation]) -> Vec<Seed> {
    proposals
        .iter()
        .filter_map(|prop| {
            let mut hits = points
                .iter()
                .enumerate()
                .filter(|(_, p)| point_in_proposal(prop, p));
            let (idx, point) = hits.next()?;
            if hits.next().is_some() {
                return None;
            }
            Some(Seed {
                point_index: idx,
                label: PseudoLabel {
                    point: point.epsilon,
                    start: prop.start,
                    end: prop.end,
                    label: prop.label,
                },
                confidence: prop.confidence,
            })
        })
        .collect()
}

pub fn class_mean_durations<'a>(
    seeds: impl IntoIterator<Item = &'a Seed>,
    num_classes: usize,
) -> ClassDurationStats {
    let mut stats = ClassDurationStats {
        total: vec![0.0; num_classes],
        count: vec![0; num_classes],
    };
    for seed in seeds {
        let c = seed.label.label.0;
        if c >= num_classes {
            continue;
        }
        stats.total[c] += seed.label.end - seed.label.start;
        stats.count[c] += 1;
    }
    stats
}

/// Proposals and points of one video.
#[derive(Debug, Clone, Copy)]
pub struct VideoProposals<'a> {
    pub length: usize,
    pub points: &'a [PointAnnotation],
    pub proposals: &'a [Proposal],
}

/// Higher confidence first, then earlier start, then earlier end.
fn rank(a_conf: f64, a: (f64, f64), b_conf: f64, b: (f64, f64)) -> Ordering {
    b_conf
        .total_cmp(&a_conf)
        .then(a.0.total_cmp(&b.0))
        .then(a.1.total_cmp(&b.1))
}

/// Refines each video's proposals into one pseudo-label per point. The
/// output is grouped like the input and ordered like each video's points.
pub fn generate_pseudo_labels(
    videos: &[VideoProposals<'_>],
    config: &RefinementConfig,
) -> Result<Vec<Vec<PseudoLabel>>> {
    if config.default_duration.is_nan() || config.default_duration <= 0.0 {
        return Err(Error::Config(format!(
            "default_duration must be positive, got {}",
            config.default_duration
        )));
    }
    let mut num_classes = 0;
    for v in videos {
        for p in v.points {
            p.checked_class()?;
            num_classes = num_classes.max(p.label.len());
        }
    }

    let seeds: Vec<Vec<Seed>> = videos
        .iter()
        .map(|v| seed_singleton_proposals(v.proposals, v.points))
        .collect();
    let stats = class_mean_durations(seeds.iter().flatten(), num_classes);

    Ok(videos
        .iter()
        .zip(&seeds)
        .map(|(v, seeds)| refine_video(v, seeds, &stats, config))
        .collect())
}

/// Per-video step, given dataset-wide duration statistics.
pub fn refine_video(
    video: &VideoProposals<'_>,
    seeds: &[Seed],
    stats: &ClassDurationStats,
    config: &RefinementConfig,
) -> Vec<PseudoLabel> {
    video
        .points
        .iter()
        .enumerate()
        .map(|(i, point)| {
            let class = point.class().expect("labels checked by caller");
            let eps = point.epsilon as f64;
            let delta = stats.half_width(class, config);

            let own = seeds.iter().filter(|s| s.point_index == i).min_by(|a, b| {
                rank(
                    a.confidence,
                    (a.label.start, a.label.end),
                    b.confidence,
                    (b.label.start, b.label.end),
                )
            });
            if let Some(seed) = own {
                return seed.label;
            }

            let covering = video
                .proposals
                .iter()
                .filter(|p| point_in_proposal(p, point))
                .min_by(|a, b| rank(a.confidence, (a.start, a.end), b.confidence, (b.start, b.end)));
            let (start, end) = match covering {
                Some(p) => (p.start.max(eps - delta), p.end.min(eps + delta)),
                None => ((eps - delta).max(0.0), (eps + delta).min(video.length as f64)),
            };
            PseudoLabel {
                point: point.epsilon,
                start,
                end,
                label: class,
            }
        })
        .collect()
}

//! Stage functions of the self-training chain, on in-memory data.
//!
//! Videos are processed in parallel on the current rayon pool. Training and
//! refinement stages never look at ground truth.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::losses::{
    fit_logits, sample_pseudo_labels, video_level_scores, LossBreakdown, Positives, Supervision,
};
use crate::metrics::{evaluate, EvalReport, EvalVideo};
use crate::postprocess::generate_proposals;
use crate::pseudolabel::{generate_pseudo_labels, VideoProposals};
use crate::types::{derive_video_labels, Proposal, PseudoLabel, Pyramid, ScoreSequence, VideoRecord};

/// Trained score sequences of one video, level 0 first.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedVideo {
    pub levels: Vec<ScoreSequence>,
    pub initial: LossBreakdown,
    pub last: LossBreakdown,
}

fn train(
    videos: &[VideoRecord],
    pyramid: Pyramid,
    config: &PipelineConfig,
    supervision: impl Fn(usize, &VideoRecord) -> Supervision + Sync,
) -> Result<Vec<TrainedVideo>> {
    videos
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let sup = supervision(i, v);
            let fit = fit_logits(v, &sup, pyramid, &config.loss, &config.trainer)
                .map_err(|e| Error::Invalid(format!("video {}: {e}", v.id)))?;
            Ok(TrainedVideo {
                levels: fit.table.scores(),
                initial: fit.initial,
                last: fit.last,
            })
        })
        .collect()
}

/// Base model: level 0 only, point supervision.
pub fn train_base(videos: &[VideoRecord], config: &PipelineConfig) -> Result<Vec<TrainedVideo>> {
    train(videos, Pyramid::single(), config, |_, v| Supervision {
        video_label: derive_video_labels(v),
        positives: Positives::Points(v.points.clone()),
    })
}

/// Pyramid model supervised by pseudo-labels sampled onto every level.
pub fn train_potloc(
    videos: &[VideoRecord],
    pseudo_labels: &[Vec<PseudoLabel>],
    config: &PipelineConfig,
) -> Result<Vec<TrainedVideo>> {
    if pseudo_labels.len() != videos.len() {
        return Err(Error::Shape(format!(
            "{} pseudo-label groups for {} videos",
            pseudo_labels.len(),
            videos.len()
        )));
    }
    let pyramid = config.pyramid();
    train(videos, pyramid, config, |i, v| Supervision {
        video_label: derive_video_labels(v),
        positives: Positives::Sampled(sample_pseudo_labels(
            &pseudo_labels[i],
            pyramid,
            v.length,
            config.loss.radius,
            config.loss.radius_mode,
        )),
    })
}

/// Proposals from every level of each video's scores; a single level gives
/// the base proposals, all levels give the final detections.
pub fn detect(scores: &[Vec<ScoreSequence>], config: &PipelineConfig) -> Result<Vec<Vec<Proposal>>> {
    scores
        .par_iter()
        .map(|levels| {
            let video = video_level_scores(levels, config.loss.pool())?;
            Ok(generate_proposals(levels, &video, config.backbone.sigma, &config.proposal))
        })
        .collect()
}

pub fn refine(
    videos: &[VideoRecord],
    proposals: &[Vec<Proposal>],
    config: &PipelineConfig,
) -> Result<Vec<Vec<PseudoLabel>>> {
    if proposals.len() != videos.len() {
        return Err(Error::Shape(format!(
            "{} proposal groups for {} videos",
            proposals.len(),
            videos.len()
        )));
    }
    let inputs: Vec<VideoProposals<'_>> = videos
        .iter()
        .zip(proposals)
        .map(|(v, p)| VideoProposals {
            length: v.length,
            points: &v.points,
            proposals: p,
        })
        .collect();
    generate_pseudo_labels(&inputs, &config.refine)
}

/// Scores detections against the ground truth carried by `videos`.
pub fn evaluate_detections(
    videos: &[VideoRecord],
    detections: &[Vec<Proposal>],
    config: &PipelineConfig,
) -> Result<EvalReport> {
    if detections.len() != videos.len() {
        return Err(Error::Shape(format!(
            "{} detection groups for {} videos",
            detections.len(),
            videos.len()
        )));
    }
    let mut inputs = Vec::with_capacity(videos.len());
    for (v, d) in videos.iter().zip(detections) {
        let gt = v
            .ground_truth
            .as_deref()
            .ok_or_else(|| Error::Invalid(format!("video {} has no ground truth", v.id)))?;
        inputs.push(EvalVideo {
            detections: d,
            ground_truth: gt,
        });
    }
    let num_classes = videos.iter().map(|v| v.num_classes).max().unwrap_or(0);
    Ok(evaluate(&inputs, num_classes, &config.eval))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSummary {
    pub base: EvalReport,
    pub potloc: EvalReport,
    /// `potloc.average_map - base.average_map`
    pub delta: f64,
}

/// Runs base training, proposal generation, refinement, pyramid training,
/// inference and evaluation. Ground truth is stripped before training and
/// only consulted for the two evaluations.
pub fn run_chain(videos: &[VideoRecord], config: &PipelineConfig) -> Result<ChainSummary> {
    let train_set: Vec<VideoRecord> = videos.iter().map(VideoRecord::without_ground_truth).collect();
    let base = train_base(&train_set, config)?;
    let base_scores: Vec<Vec<ScoreSequence>> = base.into_iter().map(|t| t.levels).collect();
    let proposals = detect(&base_scores, config)?;
    let pseudo = refine(&train_set, &proposals, config)?;
    let potloc = train_potloc(&train_set, &pseudo, config)?;
    let potloc_scores: Vec<Vec<ScoreSequence>> = potloc.into_iter().map(|t| t.levels).collect();
    let detections = detect(&potloc_scores, config)?;
    let base = evaluate_detections(videos, &proposals, config)?;
    let potloc = evaluate_detections(videos, &detections, config)?;
    let delta = potloc.average_map - base.average_map;
    Ok(ChainSummary { base, potloc, delta })
}

//! Stage implementations over a data directory. Each stage reads its inputs
//! from files, writes its outputs atomically, and never reads ground truth
//! except `synth` and `eval`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ptal_core::backbone::{save_archive, BackboneWeights};
use ptal_core::config::{PipelineConfig, CONFIG_SCHEMA_VERSION};
use ptal_core::io::{
    read_dataset, read_jsonl, write_atomic, write_dataset, write_jsonl, DetectionRow, ProposalRow,
    PseudoLabelRow, ScoreRow, DETECTIONS_FILE, POINTS_FILE, PROPOSALS_FILE, PSEUDOLABELS_FILE,
    VIDEOS_FILE,
};
use ptal_core::metrics::EvalReport;
use ptal_core::pipeline::{self, TrainedVideo};
use ptal_core::selfcheck::{run_all, SuiteSizes};
use ptal_core::synth::{gen_dataset, noisy_proposals, write_manifest};
use ptal_core::{ClassId, Error, Proposal, PseudoLabel, ScoreSequence, VideoRecord};
use serde::{Deserialize, Serialize};

pub const BASE_SCORES_FILE: &str = "scores_base.jsonl";
pub const POTLOC_SCORES_FILE: &str = "scores_potloc.jsonl";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: String) -> Self {
        Self { code: 1, message }
    }

    fn data(message: String) -> Self {
        Self { code: 2, message }
    }

    fn stage(stage: &str, err: Error) -> Self {
        let code = match err {
            Error::Config(_) | Error::InfeasiblePacking { .. } => 1,
            _ => 2,
        };
        Self {
            code,
            message: format!("{stage}: {err}"),
        }
    }
}

type StageResult = Result<(), Failure>;

fn at<'a>(stage: &'a str) -> impl Fn(Error) -> Failure + 'a {
    move |e| Failure::stage(stage, e)
}

fn load_videos(dir: &Path, stage: &str, with_ground_truth: bool) -> Result<Vec<VideoRecord>, Failure> {
    read_dataset(dir.join(VIDEOS_FILE), dir.join(POINTS_FILE), with_ground_truth).map_err(at(stage))
}

/// Orders grouped rows like `videos`; rows for unknown videos are an error.
fn align<T>(
    stage: &str,
    file: &Path,
    videos: &[VideoRecord],
    rows: Vec<T>,
    key: impl Fn(&T) -> &str,
) -> Result<Vec<Vec<T>>, Failure> {
    let index: HashMap<&str, usize> = videos.iter().enumerate().map(|(i, v)| (v.id.as_str(), i)).collect();
    let mut out: Vec<Vec<T>> = videos.iter().map(|_| Vec::new()).collect();
    for row in rows {
        let Some(&i) = index.get(key(&row)) else {
            return Err(Failure::data(format!(
                "{stage}: {}: unknown video_id {:?}",
                file.display(),
                key(&row)
            )));
        };
        out[i].push(row);
    }
    Ok(out)
}

fn write_scores(dir: &Path, file: &str, videos: &[VideoRecord], trained: &[TrainedVideo], stage: &str) -> StageResult {
    let rows: Vec<ScoreRow> = videos
        .iter()
        .zip(trained)
        .flat_map(|(v, t)| {
            t.levels
                .iter()
                .enumerate()
                .map(move |(l, s)| ScoreRow::new(&v.id, l, s.values()))
        })
        .collect();
    write_jsonl(dir.join(file), &rows).map_err(at(stage))
}

fn load_scores(dir: &Path, file: &str, videos: &[VideoRecord], stage: &str) -> Result<Vec<Vec<ScoreSequence>>, Failure> {
    let path = dir.join(file);
    let rows: Vec<ScoreRow> = read_jsonl(&path).map_err(at(stage))?;
    let grouped = align(stage, &path, videos, rows, |r| r.video_id.as_str())?;
    grouped
        .into_iter()
        .zip(videos)
        .map(|(mut rows, v)| {
            rows.sort_by_key(|r| r.level);
            if rows.is_empty() || rows.iter().enumerate().any(|(i, r)| r.level != i) {
                return Err(Failure::data(format!(
                    "{stage}: {}: video {} needs consecutive levels from 0",
                    path.display(),
                    v.id
                )));
            }
            if rows[0].rows != v.length {
                return Err(Failure::data(format!(
                    "{stage}: {}: video {} level 0 has {} rows, video length is {}",
                    path.display(),
                    v.id,
                    rows[0].rows,
                    v.length
                )));
            }
            rows.iter()
                .map(|r| r.to_array().and_then(ScoreSequence::new).map_err(at(stage)))
                .collect()
        })
        .collect()
}

fn report_losses(stage: &str, trained: &[TrainedVideo]) {
    if trained.is_empty() {
        eprintln!("{stage}: no videos");
        return;
    }
    let n = trained.len() as f64;
    let first = trained.iter().map(|t| t.initial.total).sum::<f64>() / n;
    let last = trained.iter().map(|t| t.last.total).sum::<f64>() / n;
    eprintln!("{stage}: {} videos, mean loss {first:.4} -> {last:.4}", trained.len());
}

pub fn synth(dir: &Path, config: &PipelineConfig, with_proposals: bool) -> StageResult {
    let stage = "synth";
    std::fs::create_dir_all(dir).map_err(|e| Failure::data(format!("{stage}: {}: {e}", dir.display())))?;
    let videos = gen_dataset(&config.synth).map_err(at(stage))?;
    write_dataset(dir, &videos).map_err(at(stage))?;
    write_manifest(dir, &config.synth, CONFIG_SCHEMA_VERSION).map_err(at(stage))?;
    if with_proposals {
        let rows: Vec<ProposalRow> = videos
            .iter()
            .zip(noisy_proposals(&videos, &config.synth))
            .flat_map(|(v, ps)| ps.into_iter().map(move |p| ProposalRow::new(&v.id, &p)))
            .collect();
        write_jsonl(dir.join(PROPOSALS_FILE), &rows).map_err(at(stage))?;
    }
    let instances: usize = videos.iter().map(|v| v.points.len()).sum();
    eprintln!("{stage}: {} videos, {instances} instances", videos.len());
    Ok(())
}

pub fn train_base(dir: &Path, config: &PipelineConfig) -> StageResult {
    let stage = "train-base";
    let videos = load_videos(dir, stage, false)?;
    let trained = pipeline::train_base(&videos, config).map_err(at(stage))?;
    report_losses(stage, &trained);
    write_scores(dir, BASE_SCORES_FILE, &videos, &trained, stage)
}

fn detect_to(
    dir: &Path,
    config: &PipelineConfig,
    stage: &str,
    scores_file: &str,
    write: impl Fn(&Path, &[VideoRecord], &[Vec<Proposal>]) -> ptal_core::Result<()>,
) -> StageResult {
    let videos = load_videos(dir, stage, false)?;
    let scores = load_scores(dir, scores_file, &videos, stage)?;
    let found = pipeline::detect(&scores, config).map_err(at(stage))?;
    eprintln!(
        "{stage}: {} videos, {} intervals",
        videos.len(),
        found.iter().map(Vec::len).sum::<usize>()
    );
    write(dir, &videos, &found).map_err(at(stage))
}

pub fn propose(dir: &Path, config: &PipelineConfig) -> StageResult {
    detect_to(dir, config, "propose", BASE_SCORES_FILE, |dir, videos, found| {
        let rows: Vec<ProposalRow> = videos
            .iter()
            .zip(found)
            .flat_map(|(v, ps)| ps.iter().map(move |p| ProposalRow::new(&v.id, p)))
            .collect();
        write_jsonl(dir.join(PROPOSALS_FILE), &rows)
    })
}

pub fn infer(dir: &Path, config: &PipelineConfig) -> StageResult {
    detect_to(dir, config, "infer", POTLOC_SCORES_FILE, |dir, videos, found| {
        let rows: Vec<DetectionRow> = videos
            .iter()
            .zip(found)
            .flat_map(|(v, ps)| ps.iter().map(move |p| DetectionRow::new(&v.id, p)))
            .collect();
        write_jsonl(dir.join(DETECTIONS_FILE), &rows)
    })
}

pub fn pseudolabel(dir: &Path, config: &PipelineConfig) -> StageResult {
    let stage = "pseudolabel";
    let videos = load_videos(dir, stage, false)?;
    let path = dir.join(PROPOSALS_FILE);
    let rows: Vec<ProposalRow> = read_jsonl(&path).map_err(at(stage))?;
    let proposals: Vec<Vec<Proposal>> = align(stage, &path, &videos, rows, |r| r.video_id.as_str())?
        .into_iter()
        .map(|rs| rs.iter().map(ProposalRow::proposal).collect())
        .collect();
    let labels = pipeline::refine(&videos, &proposals, config).map_err(at(stage))?;
    let rows: Vec<PseudoLabelRow> = videos
        .iter()
        .zip(&labels)
        .flat_map(|(v, ls)| ls.iter().map(move |l| PseudoLabelRow::new(&v.id, l)))
        .collect();
    eprintln!("{stage}: {} pseudo-labels", rows.len());
    write_jsonl(dir.join(PSEUDOLABELS_FILE), &rows).map_err(at(stage))
}

pub fn train_potloc(dir: &Path, config: &PipelineConfig) -> StageResult {
    let stage = "train-potloc";
    let videos = load_videos(dir, stage, false)?;
    let path = dir.join(PSEUDOLABELS_FILE);
    let rows: Vec<PseudoLabelRow> = read_jsonl(&path).map_err(at(stage))?;
    let labels: Vec<Vec<PseudoLabel>> = align(stage, &path, &videos, rows, |r| r.video_id.as_str())?
        .into_iter()
        .map(|rs| rs.iter().map(PseudoLabelRow::pseudo_label).collect())
        .collect();
    let trained = pipeline::train_potloc(&videos, &labels, config).map_err(at(stage))?;
    report_losses(stage, &trained);
    write_scores(dir, POTLOC_SCORES_FILE, &videos, &trained, stage)
}

/// Detection rows as written by `infer`, or proposal rows (`confidence`
/// instead of `score`).
#[derive(Debug, Deserialize)]
struct ScoredRow {
    video_id: String,
    start: f64,
    end: f64,
    label: ClassId,
    #[serde(alias = "confidence")]
    score: f64,
}

fn load_scored(path: &Path, videos: &[VideoRecord], stage: &str) -> Result<Vec<Vec<Proposal>>, Failure> {
    let rows: Vec<ScoredRow> = read_jsonl(path).map_err(at(stage))?;
    Ok(align(stage, path, videos, rows, |r| r.video_id.as_str())?
        .into_iter()
        .map(|rs| {
            rs.iter()
                .map(|r| Proposal::new(r.start, r.end, r.label, r.score))
                .collect()
        })
        .collect())
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    #[serde(flatten)]
    report: &'a EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline: Option<&'a EvalReport>,
    /// `average_map - baseline.average_map`
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_average_map: Option<f64>,
}

pub fn eval(dir: &Path, config: &PipelineConfig, detections: Option<&Path>, baseline: Option<&Path>) -> StageResult {
    let stage = "eval";
    let videos = load_videos(dir, stage, true)?;
    let resolve = |p: &Path| -> PathBuf {
        if p.is_absolute() || p.exists() {
            p.to_path_buf()
        } else {
            dir.join(p)
        }
    };
    let det_path = detections.map_or_else(|| dir.join(DETECTIONS_FILE), resolve);
    let found = load_scored(&det_path, &videos, stage)?;
    let report = pipeline::evaluate_detections(&videos, &found, config).map_err(at(stage))?;
    print!("{}", report.table());

    let base = match baseline {
        Some(p) => {
            let base_found = load_scored(&resolve(p), &videos, stage)?;
            Some(pipeline::evaluate_detections(&videos, &base_found, config).map_err(at(stage))?)
        }
        None => None,
    };
    let delta = base.as_ref().map(|b| report.average_map - b.average_map);
    if let (Some(b), Some(d)) = (&base, delta) {
        println!("baseline average mAP {:.4}, delta {d:+.4}", b.average_map);
    }
    let out = Report {
        report: &report,
        baseline: base.as_ref(),
        delta_average_map: delta,
    };
    let mut bytes = serde_json::to_vec_pretty(&out).map_err(|e| Failure::data(format!("{stage}: {e}")))?;
    bytes.push(b'\n');
    write_atomic(&dir.join(REPORT_FILE), &bytes).map_err(at(stage))
}

pub fn selfcheck(seed: u64, quick: bool) -> StageResult {
    let sizes = if quick {
        SuiteSizes {
            pseudolabel_videos: 100,
            gradient_instances: 10,
            attention_trials: 10,
            nms_sets: 100,
            eval_instances: 100,
            sampling_labels: 100,
        }
    } else {
        SuiteSizes::full()
    };
    let outcomes = run_all(seed, sizes);
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(Failure {
            code: 3,
            message: format!("selfcheck: {failed} of {} checks failed", outcomes.len()),
        });
    }
    Ok(())
}

pub fn run(dir: &Path, config: &PipelineConfig) -> StageResult {
    if !dir.join(VIDEOS_FILE).exists() {
        synth(dir, config, false)?;
    }
    train_base(dir, config)?;
    propose(dir, config)?;
    pseudolabel(dir, config)?;
    train_potloc(dir, config)?;
    infer(dir, config)?;
    eval(dir, config, None, Some(&dir.join(PROPOSALS_FILE)))
}

pub fn export_weights(dir: &Path, config: &PipelineConfig, out: &Path) -> StageResult {
    let stage = "export-weights";
    let weights = BackboneWeights::init(&config.backbone).map_err(at(stage))?;
    let stem = if out.is_absolute() { out.to_path_buf() } else { dir.join(out) };
    save_archive(&weights, &config.backbone, &stem).map_err(at(stage))?;
    eprintln!("{stage}: wrote {}.json and {}.bin", stem.display(), stem.display());
    Ok(())
}

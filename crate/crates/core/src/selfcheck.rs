//! Randomized invariant suites: reference agreement, gradient checks,
//! closed forms, attention and pyramid properties, NMS/segment structure
//! and sampling bounds. Each check returns a pass/fail outcome with a short
//! diagnostic.

use std::collections::BTreeSet;
use std::fmt;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{
    dense_attention, forward_pyramid, transformer_block, windowed_attention,
    windowed_attention_with_weights, AttentionWeights, BackboneConfig, BackboneWeights, Linear,
};
use crate::losses::{
    act_focal_loss, bg_loss, enhanced_act_loss, enhanced_bg_loss, mil_loss, sample_pseudo_labels,
    total_loss, LogitTable, LossWeights, Positives, RadiusMode, SampledPositives, Supervision, TopKPool,
};
use crate::metrics::{evaluate, tiou, EvalConfig, EvalVideo};
use crate::postprocess::{segment_candidates, temporal_nms};
use crate::pseudolabel::{generate_pseudo_labels, RefinementConfig, VideoProposals};
use crate::synth::oracle::{oracle_evaluate, oracle_pseudolabels, OracleVideo};
use crate::synth::{gen_dataset, noisy_proposals, ProposalNoise, SynthConfig};
use crate::types::{
    video_label_from_classes, ClassId, GtInterval, PointAnnotation, Proposal, PseudoLabel, Pyramid,
    ScoreSequence,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} [{:.2?}]",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.elapsed
        )
    }
}

fn outcome(name: &'static str, start: Instant, result: std::result::Result<String, String>) -> CheckOutcome {
    let (passed, detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CheckOutcome {
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Instance counts for every suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteSizes {
    pub pseudolabel_videos: usize,
    pub gradient_instances: usize,
    pub attention_trials: usize,
    pub nms_sets: usize,
    pub eval_instances: usize,
    pub sampling_labels: usize,
}

impl SuiteSizes {
    pub fn full() -> Self {
        Self {
            pseudolabel_videos: 1000,
            gradient_instances: 100,
            attention_trials: 50,
            nms_sets: 1000,
            eval_instances: 1000,
            sampling_labels: 1000,
        }
    }
}

pub fn run_all(seed: u64, sizes: SuiteSizes) -> Vec<CheckOutcome> {
    vec![
        check_pseudolabel_oracle(seed, sizes.pseudolabel_videos),
        check_zero_noise_fixpoint(seed),
        check_gradients(seed, sizes.gradient_instances),
        check_closed_forms(),
        check_attention(seed, sizes.attention_trials),
        check_pyramid_shapes(),
        check_nms_and_segments(seed, sizes.nms_sets),
        check_evaluation_oracle(seed, sizes.eval_instances),
        check_sampling(seed, sizes.sampling_labels),
    ]
}

// ---------------------------------------------------------------------------
// Pseudo-labels

fn random_refinement_video(r: &mut ChaCha8Rng, c: usize) -> (usize, Vec<PointAnnotation>, Vec<Proposal>) {
    let length = r.random_range(20..=80);
    let np = r.random_range(0..=8);
    let points = (0..np)
        .map(|_| PointAnnotation::new(r.random_range(0..length), ClassId(r.random_range(0..c)), c))
        .collect();
    let nq = r.random_range(0..=30);
    let confs = [0.2, 0.4, 0.5, 0.7, 0.9];
    let proposals = (0..nq)
        .map(|_| {
            let s = r.random_range(0..length) as f64 + if r.random_bool(0.3) { 0.5 } else { 0.0 };
            let e = (s + r.random_range(1..=25) as f64).min(length as f64);
            let conf = if r.random_bool(0.5) {
                confs[r.random_range(0..confs.len())]
            } else {
                r.random::<f64>()
            };
            Proposal::new(s, e, ClassId(r.random_range(0..c)), conf)
        })
        .collect();
    (length, points, proposals)
}

/// Main refinement equals the reference on random datasets of up to 8
/// points and 30 proposals per video, and every postcondition holds.
pub fn check_pseudolabel_oracle(seed: u64, videos: usize) -> CheckOutcome {
    let start = Instant::now();
    let mut r = rng(seed, 1);
    let config = RefinementConfig::default();
    let mut done = 0;
    let result = (|| {
        while done < videos {
            let c = r.random_range(1..=3);
            let n = r.random_range(1..=10).min(videos - done);
            let data: Vec<_> = (0..n).map(|_| random_refinement_video(&mut r, c)).collect();
            let main_in: Vec<VideoProposals<'_>> = data
                .iter()
                .map(|(length, points, proposals)| VideoProposals {
                    length: *length,
                    points,
                    proposals,
                })
                .collect();
            let oracle_in: Vec<OracleVideo<'_>> = data
                .iter()
                .map(|(length, points, proposals)| OracleVideo {
                    length: *length,
                    points,
                    proposals,
                })
                .collect();
            let got = generate_pseudo_labels(&main_in, &config).map_err(|e| e.to_string())?;
            let want = oracle_pseudolabels(&oracle_in, config.default_duration);
            if got != want {
                return Err(format!("mismatch on dataset after {done} videos: {got:?} vs {want:?}"));
            }
            for ((_, points, _), labels) in data.iter().zip(&got) {
                if labels.len() != points.len() {
                    return Err("pseudo-label count differs from point count".into());
                }
                for (p, l) in points.iter().zip(labels) {
                    let eps = p.epsilon as f64;
                    if !(l.start <= eps && eps <= l.end && l.start < l.end) || p.class() != Some(l.label) {
                        return Err(format!("postcondition violated: {p:?} -> {l:?}"));
                    }
                }
            }
            done += n;
        }
        Ok(format!("{done} videos agree"))
    })();
    outcome("pseudo-labels match reference", start, result)
}

/// Noise-free proposals refine back to the ground truth exactly.
pub fn check_zero_noise_fixpoint(seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let result = (|| {
        let config = SynthConfig {
            seed,
            num_videos: 50,
            proposal_noise: ProposalNoise::none(),
            ..Default::default()
        };
        let videos = gen_dataset(&config).map_err(|e| e.to_string())?;
        let proposals = noisy_proposals(&videos, &config);
        let inputs: Vec<VideoProposals<'_>> = videos
            .iter()
            .zip(&proposals)
            .map(|(v, p)| VideoProposals {
                length: v.length,
                points: &v.points,
                proposals: p,
            })
            .collect();
        let labels = generate_pseudo_labels(&inputs, &RefinementConfig::default()).map_err(|e| e.to_string())?;
        let mut n = 0;
        for (v, ls) in videos.iter().zip(&labels) {
            for (g, l) in v.ground_truth.as_ref().expect("synthetic").iter().zip(ls) {
                let exact = (g.start, g.end, g.label) == (l.start, l.end, l.label);
                if !exact || tiou(g.interval(), crate::types::Interval::new(l.start, l.end)) != 1.0 {
                    return Err(format!("{}: {g:?} refined to {l:?}", v.id));
                }
                n += 1;
            }
        }
        Ok(format!("{n}/{n} instances recovered with tIoU 1"))
    })();
    outcome("zero-noise fixpoint", start, result)
}

// ---------------------------------------------------------------------------
// Gradients

const FD_STEP: f64 = 1e-4;
const REL_TOL: f64 = 1e-3;
const ABS_FLOOR: f64 = 1e-6;

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(ABS_FLOOR)
}

/// Largest relative error between `analytic` and central differences of
/// `f` around `x`.
fn fd_max_error(x: &[f64], analytic: &[f64], h: f64, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut y = x.to_vec();
    for i in 0..x.len() {
        y[i] = x[i] + h;
        let up = f(&y);
        y[i] = x[i] - h;
        let down = f(&y);
        y[i] = x[i];
        worst = worst.max(rel_error(analytic[i], (up - down) / (2.0 * h)));
    }
    worst
}

fn prob_matrix(r: &mut ChaCha8Rng, t: usize, c: usize, bg_threshold: f64) -> Array2<f64> {
    Array2::from_shape_fn((t, c + 1), |(_, j)| loop {
        let v = r.random_range(0.02..0.98);
        if j < c || (v - bg_threshold).abs() > 1e-3 {
            break v;
        }
    })
}

fn seq(values: Array2<f64>) -> ScoreSequence {
    ScoreSequence::new(values).expect("values in [0, 1]")
}

fn flatten(levels: &[Array2<f64>]) -> Vec<f64> {
    levels.iter().flat_map(|l| l.iter().copied()).collect()
}

fn unflatten(x: &[f64], shapes: &[(usize, usize)]) -> Vec<Array2<f64>> {
    let mut off = 0;
    shapes
        .iter()
        .map(|&(t, c)| {
            let a = Array2::from_shape_vec((t, c), x[off..off + t * c].to_vec()).expect("shape");
            off += t * c;
            a
        })
        .collect()
}

fn random_pseudo_labels(r: &mut ChaCha8Rng, length: usize, c: usize) -> Vec<PseudoLabel> {
    (0..r.random_range(1..=3))
        .map(|_| {
            let point = r.random_range(0..length);
            let start = (point as f64 - r.random_range(0.0..6.0)).max(0.0);
            let end = (point as f64 + r.random_range(0.5..6.0)).min(length as f64);
            PseudoLabel {
                point,
                start,
                end,
                label: ClassId(r.random_range(0..c)),
            }
        })
        .collect()
}

/// True when every class column of every level has a clear gap between its
/// K-th and (K+1)-th largest score, so top-K membership is locally fixed.
fn top_k_separated(levels: &[ScoreSequence], pool: TopKPool, gap: f64) -> bool {
    levels.iter().all(|level| {
        let k = pool.k_for(level.len()).expect("valid K");
        (0..level.num_classes()).all(|c| {
            let mut col: Vec<f64> = level.values().column(c).to_vec();
            col.sort_by(|a, b| b.total_cmp(a));
            k >= col.len() || col[k - 1] - col[k] > gap
        })
    })
}

/// Logits whose sigmoid scores keep the background column away from the
/// seed threshold and the top-K sets away from ties.
fn random_logits(r: &mut ChaCha8Rng, lengths: &[usize], c: usize, weights: &LossWeights) -> LogitTable {
    loop {
        let table = LogitTable {
            levels: lengths
                .iter()
                .map(|&t| Array2::from_shape_simple_fn((t, c + 1), || r.random_range(-3.0..3.0)))
                .collect(),
        };
        let scores = table.scores();
        let bg_ok = scores
            .iter()
            .all(|s| s.background().iter().all(|b| (b - weights.bg_threshold).abs() > 1e-3));
        if bg_ok && top_k_separated(&scores, weights.pool(), 1e-3) {
            return table;
        }
    }
}

/// Analytic gradients of every loss, alone and composed through fusion and
/// sigmoid, against central differences on random small instances.
pub fn check_gradients(seed: u64, instances: usize) -> CheckOutcome {
    let start = Instant::now();
    let mut r = rng(seed, 3);
    let mut worst = [0.0f64; 6];
    let names = ["MIL", "Act", "BG", "Act*", "BG*", "total"];
    for _ in 0..instances {
        let t = r.random_range(4..=32);
        let c = r.random_range(1..=4);
        let levels = r.random_range(1..=3);
        let pyramid = Pyramid { sigma: 2, levels: levels - 1 };
        let lengths = pyramid.lengths(t);
        let gamma = [0.0, 1.0, 2.0, 2.5][r.random_range(0..4)];
        let thr = r.random_range(0.3..0.7);

        // MIL in video-level scores.
        let scores: Vec<f64> = (0..c).map(|_| r.random_range(0.05..0.95)).collect();
        let label = video_label_from_classes(c, (0..c).filter(|_| r.random_bool(0.5)).map(ClassId));
        let (_, g) = mil_loss(&scores, &label);
        worst[0] = worst[0].max(fd_max_error(&scores, &g, FD_STEP, &|x| mil_loss(x, &label).0));

        // Base action and background losses in fused scores.
        let p = prob_matrix(&mut r, t, c, thr);
        let shape = [(t, c + 1)];
        let points: Vec<PointAnnotation> = (0..r.random_range(1..=4))
            .map(|_| PointAnnotation::new(r.random_range(0..t), ClassId(r.random_range(0..c)), c))
            .collect();
        let x = flatten(std::slice::from_ref(&p));
        let (_, g) = act_focal_loss(&seq(p.clone()), &points, gamma);
        worst[1] = worst[1].max(fd_max_error(&x, g.as_slice().expect("contiguous"), 1e-5, &|x| {
            act_focal_loss(&seq(unflatten(x, &shape).remove(0)), &points, gamma).0
        }));
        let seeds: Vec<usize> = (0..t).filter(|_| r.random_bool(0.4)).collect();
        let (_, g) = bg_loss(&seq(p.clone()), &seeds, gamma);
        worst[2] = worst[2].max(fd_max_error(&x, g.as_slice().expect("contiguous"), 1e-5, &|x| {
            bg_loss(&seq(unflatten(x, &shape).remove(0)), &seeds, gamma).0
        }));

        // Enhanced losses over the pyramid.
        let shapes: Vec<(usize, usize)> = lengths.iter().map(|&l| (l, c + 1)).collect();
        let ps: Vec<Array2<f64>> = lengths.iter().map(|&l| prob_matrix(&mut r, l, c, thr)).collect();
        let pls = random_pseudo_labels(&mut r, t, c);
        let sampled = sample_pseudo_labels(&pls, pyramid, t, 2, RadiusMode::LevelGrid);
        let x = flatten(&ps);
        let seqs = |x: &[f64]| -> Vec<ScoreSequence> { unflatten(x, &shapes).into_iter().map(seq).collect() };
        let (_, g) = enhanced_act_loss(&seqs(&x), &sampled, gamma);
        worst[3] = worst[3].max(fd_max_error(&x, &flatten(&g), 1e-5, &|x| {
            enhanced_act_loss(&seqs(x), &sampled, gamma).0
        }));
        let (_, g) = enhanced_bg_loss(&seqs(&x), &sampled, thr, gamma);
        worst[4] = worst[4].max(fd_max_error(&x, &flatten(&g), 1e-5, &|x| {
            enhanced_bg_loss(&seqs(x), &sampled, thr, gamma).0
        }));

        // Full composition in the logits, for both supervision kinds.
        let weights = LossWeights {
            lambda_mil: r.random_range(0.5..2.0),
            lambda_act: r.random_range(0.5..2.0),
            lambda_bg: r.random_range(0.5..2.0),
            gamma,
            bg_threshold: thr,
            ..Default::default()
        };
        let (sup_lengths, positives) = if r.random_bool(0.5) {
            (vec![t], Positives::Points(points.clone()))
        } else {
            (lengths.clone(), Positives::Sampled(sampled.clone()))
        };
        let supervision = Supervision {
            video_label: label.clone(),
            positives,
        };
        let table = random_logits(&mut r, &sup_lengths, c, &weights);
        let shapes: Vec<(usize, usize)> = table.levels.iter().map(|l| l.dim()).collect();
        let (_, g) = match total_loss(&table, &supervision, &weights) {
            Ok(v) => v,
            Err(e) => return outcome("loss gradients", start, Err(e.to_string())),
        };
        let x = flatten(&table.levels);
        worst[5] = worst[5].max(fd_max_error(&x, &flatten(&g.levels), FD_STEP, &|x| {
            let table = LogitTable {
                levels: unflatten(x, &shapes),
            };
            total_loss(&table, &supervision, &weights).expect("shapes fixed").0.total
        }));
    }
    let detail = names
        .iter()
        .zip(&worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    let max = worst.iter().copied().fold(0.0, f64::max);
    let result = if max <= REL_TOL {
        Ok(format!("{instances} instances, max rel err: {detail}"))
    } else {
        Err(format!("max rel err {max:.3e} > {REL_TOL}: {detail}"))
    };
    outcome("loss gradients", start, result)
}

/// Reference values: ln 2, 2 ln 2, and 0.25 ln 2 for the focal terms.
pub fn check_closed_forms() -> CheckOutcome {
    let start = Instant::now();
    let ln2 = std::f64::consts::LN_2;
    let one = video_label_from_classes(1, [ClassId(0)]);
    let two = video_label_from_classes(2, [ClassId(0)]);
    let act_seq = seq(ndarray::array![[0.5, 0.0]]);
    let bg_seq = seq(ndarray::array![[0.0, 0.5]]);
    let cases = [
        ("MIL p=0.5", mil_loss(&[0.5], &one).0, ln2),
        ("MIL p=[0.5,0.5]", mil_loss(&[0.5, 0.5], &two).0, 2.0 * ln2),
        ("MIL perfect", mil_loss(&[1.0, 0.0], &two).0, 0.0),
        (
            "Act p=0.5",
            act_focal_loss(&act_seq, &[PointAnnotation::new(0, ClassId(0), 1)], 2.0).0,
            0.25 * ln2,
        ),
        ("BG b=0.5", bg_loss(&bg_seq, &[0], 2.0).0, 0.25 * ln2),
    ];
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for (name, got, want) in cases {
        let err = (got - want).abs();
        worst = worst.max(err);
        if err > 1e-6 {
            failures.push(format!("{name}: {got} vs {want}"));
        }
    }
    let result = if failures.is_empty() {
        Ok(format!("5 values, max abs err {worst:.1e}"))
    } else {
        Err(failures.join("; "))
    };
    outcome("loss closed forms", start, result)
}

// ---------------------------------------------------------------------------
// Backbone

fn random_attention(r: &mut ChaCha8Rng, d: usize, dq: usize, dv: usize) -> AttentionWeights {
    let mut m = |a: usize, b: usize| Array2::from_shape_simple_fn((a, b), || r.random_range(-0.8..0.8));
    AttentionWeights {
        query: m(d, dq),
        key: m(d, dq),
        value: m(d, dv),
        output: Linear {
            weight: m(dv, d),
            bias: Array1::zeros(d),
        },
    }
}

/// Saturated windows match dense attention; outputs outside the window of
/// a perturbed position are unchanged, for attention and for full blocks;
/// softmax rows sum to 1.
pub fn check_attention(seed: u64, trials: usize) -> CheckOutcome {
    let start = Instant::now();
    let mut r = rng(seed, 5);
    let mut dense_err: f64 = 0.0;
    let mut row_err: f64 = 0.0;
    let result = (|| {
        for trial in 0..trials {
            let heads = r.random_range(1..=3);
            let d = heads * r.random_range(1..=4);
            let dq = heads * r.random_range(1..=3);
            let dv = heads * r.random_range(1..=3);
            let t = r.random_range(1..=40);
            let w = random_attention(&mut r, d, dq, dv);
            let z = Array2::from_shape_simple_fn((t, d), || r.random_range(-2.0..2.0));

            let full = windowed_attention(&z, &w, 2 * t + 1, heads);
            let dense = dense_attention(&z, &w, heads, None);
            for (a, b) in full.iter().zip(&dense) {
                dense_err = dense_err.max((a - b).abs());
            }

            let window = 2 * r.random_range(0..=5) + 1;
            let half = (window - 1) / 2;
            let (base, rows) = windowed_attention_with_weights(&z, &w, window, heads);
            for row in rows.iter().flatten() {
                row_err = row_err.max((row.iter().sum::<f64>() - 1.0).abs());
            }
            let pos = r.random_range(0..t);
            let mut zp = z.clone();
            for j in 0..d {
                zp[[pos, j]] += r.random_range(-1.0..1.0);
            }
            let moved = windowed_attention(&zp, &w, window, heads);
            for i in (0..t).filter(|i| i.abs_diff(pos) > half) {
                if base.row(i) != moved.row(i) {
                    return Err(format!("trial {trial}: attention output {i} changed (perturbed {pos}, half {half})"));
                }
            }

            let cfg = BackboneConfig {
                input_dim: 1,
                model_dim: d,
                qk_dim: dq,
                value_dim: dv,
                heads,
                window,
                levels: 1,
                mlp_ratio: 2.0,
                seed: r.random(),
                ..Default::default()
            };
            let weights = BackboneWeights::init(&cfg).map_err(|e| e.to_string())?;
            let block = &weights.blocks[0];
            let a = transformer_block(&z, block, window, heads);
            let b = transformer_block(&zp, block, window, heads);
            for i in (0..t).filter(|i| i.abs_diff(pos) > half) {
                if a.row(i) != b.row(i) {
                    return Err(format!("trial {trial}: block output {i} changed (perturbed {pos}, half {half})"));
                }
            }
        }
        if dense_err > 1e-6 || row_err > 1e-6 {
            return Err(format!("dense err {dense_err:.1e}, row-sum err {row_err:.1e}"));
        }
        Ok(format!(
            "{trials} trials, dense err {dense_err:.1e}, row-sum err {row_err:.1e}, locality exact"
        ))
    })();
    outcome("attention properties", start, result)
}

/// A 2304-snippet input through a 4-level, ratio-2 pyramid.
pub fn check_pyramid_shapes() -> CheckOutcome {
    let start = Instant::now();
    let result = (|| {
        let cfg = BackboneConfig {
            input_dim: 4,
            model_dim: 8,
            qk_dim: 8,
            value_dim: 8,
            heads: 2,
            window: 19,
            sigma: 2,
            levels: 4,
            mlp_ratio: 2.0,
            num_classes: 3,
            seed: 1,
        };
        let weights = BackboneWeights::init(&cfg).map_err(|e| e.to_string())?;
        let x = Array2::from_shape_fn((2304, 4), |(t, j)| ((t * 7 + j) as f64 * 0.01).sin());
        let (features, _, scores) = forward_pyramid(&x, &weights, &cfg).map_err(|e| e.to_string())?;
        let lens: Vec<usize> = features.levels.iter().map(|z| z.nrows()).collect();
        let score_lens: Vec<usize> = scores.iter().map(ScoreSequence::len).collect();
        let want = vec![2304, 1152, 576, 288, 144];
        if lens != want || score_lens != want || cfg.pyramid().lengths(2304) != want {
            return Err(format!("lengths {lens:?}, scores {score_lens:?}"));
        }
        if features.levels.iter().any(|z| z.ncols() != 8) || scores.iter().any(|s| s.num_classes() != 3) {
            return Err("widths differ from config".into());
        }
        Ok(format!("{lens:?}"))
    })();
    outcome("pyramid shapes", start, result)
}

// ---------------------------------------------------------------------------
// Proposals

/// NMS is idempotent and leaves same-class pairs below the threshold;
/// segment runs are disjoint, sorted, maximal and cover every index at or
/// above the threshold.
pub fn check_nms_and_segments(seed: u64, sets: usize) -> CheckOutcome {
    let start = Instant::now();
    let mut r = rng(seed, 7);
    let result = (|| {
        for set in 0..sets {
            let n = r.random_range(0..=25);
            let props: Vec<Proposal> = (0..n)
                .map(|_| {
                    let s = r.random_range(0..50) as f64;
                    Proposal::new(
                        s,
                        s + r.random_range(1..20) as f64,
                        ClassId(r.random_range(0..3)),
                        (r.random_range(0..10) as f64) / 10.0,
                    )
                })
                .collect();
            let thr = r.random_range(0.1..=1.0);
            let kept = temporal_nms(&props, thr);
            if temporal_nms(&kept, thr) != kept {
                return Err(format!("set {set}: NMS not idempotent"));
            }
            for (i, a) in kept.iter().enumerate() {
                for b in &kept[i + 1..] {
                    if a.label == b.label && tiou(a.interval(), b.interval()) >= thr {
                        return Err(format!("set {set}: kept {a:?} and {b:?} overlap"));
                    }
                }
            }
            if kept.windows(2).any(|w| w[0].confidence < w[1].confidence) {
                return Err(format!("set {set}: output not in descending confidence"));
            }

            let len = r.random_range(0..=30);
            let scores = Array1::from_shape_simple_fn(len, || (r.random_range(0..=10) as f64) / 10.0);
            let t = (r.random_range(1..=9) as f64) / 10.0;
            let segs = segment_candidates(scores.view(), t);
            let mut covered = vec![false; len];
            for (k, &(a, b)) in segs.iter().enumerate() {
                if a > b || b >= len || (a..=b).any(|i| scores[i] < t) {
                    return Err(format!("set {set}: invalid run ({a}, {b})"));
                }
                if (a > 0 && scores[a - 1] >= t) || (b + 1 < len && scores[b + 1] >= t) {
                    return Err(format!("set {set}: run ({a}, {b}) is not maximal"));
                }
                if k > 0 && segs[k - 1].1 + 1 >= a {
                    return Err(format!("set {set}: runs not disjoint and sorted"));
                }
                covered[a..=b].iter_mut().for_each(|c| *c = true);
            }
            if (0..len).any(|i| (scores[i] >= t) != covered[i]) {
                return Err(format!("set {set}: runs do not cover exactly the indices above {t}"));
            }
        }
        Ok(format!("{sets} proposal sets and score tracks"))
    })();
    outcome("NMS and segment runs", start, result)
}

// ---------------------------------------------------------------------------
// Evaluation

/// `evaluate` against the naive reference on random small instances.
pub fn check_evaluation_oracle(seed: u64, instances: usize) -> CheckOutcome {
    let start = Instant::now();
    let mut r = rng(seed, 9);
    let mut worst: f64 = 0.0;
    let result = (|| {
        for inst in 0..instances {
            let nv = r.random_range(1..=3);
            let c = r.random_range(1..=3);
            let mut dets: Vec<Vec<Proposal>> = vec![Vec::new(); nv];
            let mut gts: Vec<Vec<GtInterval>> = vec![Vec::new(); nv];
            for class in 0..c {
                for _ in 0..r.random_range(0..=5) {
                    let s = r.random_range(0..30) as f64;
                    gts[r.random_range(0..nv)].push(GtInterval {
                        start: s,
                        end: s + r.random_range(1..12) as f64,
                        label: ClassId(class),
                    });
                }
                for _ in 0..r.random_range(0..=10) {
                    let s = r.random_range(0..30) as f64;
                    dets[r.random_range(0..nv)].push(Proposal::new(
                        s,
                        s + r.random_range(1..12) as f64,
                        ClassId(class),
                        (r.random_range(0..6) as f64) / 5.0,
                    ));
                }
            }
            let thresholds: Vec<f64> = (1..=7).map(|i| i as f64 / 10.0).collect();
            let config = EvalConfig {
                tiou_thresholds: thresholds.clone(),
                ..Default::default()
            };
            let videos: Vec<EvalVideo<'_>> = dets
                .iter()
                .zip(&gts)
                .map(|(d, g)| EvalVideo {
                    detections: d,
                    ground_truth: g,
                })
                .collect();
            let report = evaluate(&videos, c, &config);
            let (table, map, avg) = oracle_evaluate(&dets, &gts, c, &thresholds);
            for (row, want) in report.per_class.iter().zip(&table) {
                for (a, b) in row.ap.iter().zip(want) {
                    match (a, b) {
                        (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                        (None, None) => {}
                        _ => return Err(format!("instance {inst}: defined-ness differs: {a:?} vs {b:?}")),
                    }
                }
            }
            for (a, b) in report.map.iter().zip(&map) {
                worst = worst.max((a - b).abs());
            }
            worst = worst.max((report.average_map - avg).abs());
            if worst > 1e-9 {
                return Err(format!("instance {inst}: max abs diff {worst:.3e}"));
            }
        }
        Ok(format!("{instances} instances, max abs diff {worst:.1e}"))
    })();
    outcome("evaluation matches reference", start, result)
}

// ---------------------------------------------------------------------------
// Sampling

/// Every sampled position lies in the projected interval, within `r` grid
/// positions of the projected point, and inside its level.
pub fn check_sampling(seed: u64, labels: usize) -> CheckOutcome {
    let start = Instant::now();
    let mut r = rng(seed, 11);
    let result = (|| {
        let mut positives = 0;
        for i in 0..labels {
            let length = r.random_range(1..=300);
            let point = r.random_range(0..length);
            let s = r.random_range(0.0..=point as f64);
            let e = r.random_range(point as f64..=length as f64).max(s + 0.5).min(length as f64);
            let pl = PseudoLabel {
                point,
                start: s,
                end: e.max(s + f64::EPSILON),
                label: ClassId(0),
            };
            let pyramid = Pyramid {
                sigma: r.random_range(2..=3),
                levels: r.random_range(0..=4),
            };
            let radius = r.random_range(0..=3);
            let SampledPositives { levels } =
                sample_pseudo_labels(&[pl], pyramid, length, radius, RadiusMode::LevelGrid);
            for (l, (pos, &len)) in levels.iter().zip(&pyramid.lengths(length)).enumerate() {
                let scale = pyramid.scale(l);
                let center = (point as f64 / scale + 0.5).floor();
                let seen: BTreeSet<usize> = pos.iter().map(|&(t, _)| t).collect();
                for t in seen {
                    let tf = t as f64;
                    let inside = tf >= pl.start / scale && tf <= pl.end / scale;
                    let near = (tf - center).abs() <= radius as f64;
                    if !inside || !near || t >= len {
                        return Err(format!("label {i} ({pl:?}) level {l}: position {t} out of bounds"));
                    }
                    positives += 1;
                }
            }
        }
        Ok(format!("{labels} pseudo-labels, {positives} sampled positions in bounds"))
    })();
    outcome("sampling bounds", start, result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        let sizes = SuiteSizes {
            pseudolabel_videos: 60,
            gradient_instances: 8,
            attention_trials: 5,
            nms_sets: 50,
            eval_instances: 50,
            sampling_labels: 50,
        };
        for o in run_all(42, sizes) {
            assert!(o.passed, "{o}");
        }
    }
}

use ndarray::{Array2, Zip};

use super::base::{act_focal_loss, mil_loss, video_level_backward, video_level_scores};
use super::enhanced::{enhanced_act_loss, enhanced_bg_loss};
use super::sampling::SampledPositives;
use super::LossWeights;
use crate::error::{Error, Result};
use crate::postprocess::fuse_scores;
use crate::types::{PointAnnotation, ScoreSequence, VideoLabel};

/// Unconstrained per-level logits; `sigmoid` of each entry is a score.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTable {
    pub levels: Vec<Array2<f64>>,
}

impl LogitTable {
    pub fn zeros(lengths: &[usize], num_classes: usize) -> Self {
        Self {
            levels: lengths
                .iter()
                .map(|&t| Array2::zeros((t, num_classes + 1)))
                .collect(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.levels.first().map_or(0, |l| l.ncols().saturating_sub(1))
    }

    pub fn scores(&self) -> Vec<ScoreSequence> {
        self.levels
            .iter()
            .map(|z| ScoreSequence::from_raw(z.mapv(sigmoid)))
            .collect()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Snippet-level positives: annotated points on level 0, or pseudo-label
/// samples on every level.
#[derive(Debug, Clone, PartialEq)]
pub enum Positives {
    Points(Vec<PointAnnotation>),
    Sampled(SampledPositives),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Supervision {
    pub video_label: VideoLabel,
    pub positives: Positives,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub mil: f64,
    pub act: f64,
    pub bg: f64,
    pub total: f64,
}

/// Weighted sum of the MIL, action and background losses on
/// `sigmoid(logits)`, with the gradient in the logits.
///
/// With point supervision the action loss uses level 0 and background seeds
/// exclude nothing; with sampled supervision both use every level and
/// sampled positions are never seeds.
pub fn total_loss(
    logits: &LogitTable,
    supervision: &Supervision,
    weights: &LossWeights,
) -> Result<(LossBreakdown, LogitTable)> {
    let c = logits.num_classes();
    if logits.levels.is_empty() || c == 0 {
        return Err(Error::Shape("logit table has no levels or classes".into()));
    }
    if let Some(bad) = logits.levels.iter().find(|l| l.ncols() != c + 1) {
        return Err(Error::Shape(format!(
            "logit levels disagree on width: {} vs {}",
            bad.ncols(),
            c + 1
        )));
    }
    if supervision.video_label.num_classes() != c {
        return Err(Error::Shape(format!(
            "video label has {} classes, logits have {c}",
            supervision.video_label.num_classes()
        )));
    }
    match &supervision.positives {
        Positives::Points(points) => {
            let t0 = logits.levels[0].nrows();
            if let Some(p) = points.iter().find(|p| p.epsilon >= t0 || p.label.len() != c) {
                return Err(Error::Shape(format!(
                    "point at {} with {} label entries does not fit a {t0}x{c} level",
                    p.epsilon,
                    p.label.len()
                )));
            }
        }
        Positives::Sampled(s) => {
            if s.levels.len() != logits.levels.len() {
                return Err(Error::Shape(format!(
                    "{} sampled levels for {} logit levels",
                    s.levels.len(),
                    logits.levels.len()
                )));
            }
            for (l, pos) in s.levels.iter().enumerate() {
                let t = logits.levels[l].nrows();
                if pos.iter().any(|&(p, k)| p >= t || k.0 >= c) {
                    return Err(Error::Shape(format!("sampled positive outside level {l}")));
                }
            }
        }
    }

    let raw = logits.scores();
    let fused: Vec<ScoreSequence> = raw.iter().map(fuse_scores).collect();
    let mut d_raw: Vec<Array2<f64>> = raw.iter().map(|s| Array2::zeros(s.values().raw_dim())).collect();
    let mut d_fused = d_raw.clone();
    let mut out = LossBreakdown::default();

    if weights.lambda_mil != 0.0 {
        let pool = weights.pool();
        let scores = video_level_scores(&raw, pool)?;
        let (v, g) = mil_loss(&scores, &supervision.video_label);
        out.mil = v;
        let g: Vec<f64> = g.iter().map(|x| x * weights.lambda_mil).collect();
        for (acc, part) in d_raw.iter_mut().zip(video_level_backward(&raw, pool, &g)?) {
            *acc += &part;
        }
    }

    let no_samples;
    let sampled = match &supervision.positives {
        Positives::Points(points) => {
            if weights.lambda_act != 0.0 {
                let (v, g) = act_focal_loss(&fused[0], points, weights.gamma);
                out.act = v;
                d_fused[0].scaled_add(weights.lambda_act, &g);
            }
            no_samples = SampledPositives {
                levels: vec![Vec::new(); fused.len()],
            };
            &no_samples
        }
        Positives::Sampled(sampled) => {
            if weights.lambda_act != 0.0 {
                let (v, g) = enhanced_act_loss(&fused, sampled, weights.gamma);
                out.act = v;
                for (acc, part) in d_fused.iter_mut().zip(&g) {
                    acc.scaled_add(weights.lambda_act, part);
                }
            }
            sampled
        }
    };

    if weights.lambda_bg != 0.0 {
        let (v, g) = enhanced_bg_loss(&fused, sampled, weights.bg_threshold, weights.gamma);
        out.bg = v;
        for (acc, part) in d_fused.iter_mut().zip(&g) {
            acc.scaled_add(weights.lambda_bg, part);
        }
    }

    out.total = weights.lambda_mil * out.mil + weights.lambda_act * out.act + weights.lambda_bg * out.bg;

    let grads = raw
        .iter()
        .zip(d_raw)
        .zip(&d_fused)
        .map(|((p, mut dp), dq)| {
            fusion_backward(p.values(), dq, &mut dp, c);
            Zip::from(&mut dp).and(p.values()).for_each(|g, &s| *g *= s * (1.0 - s));
            dp
        })
        .collect();
    Ok((out, LogitTable { levels: grads }))
}

/// Accumulates into `dp` the gradient through `q[t,c] = p[t,c] (1 - b_t)`,
/// `q[t,C] = b_t`.
fn fusion_backward(p: &Array2<f64>, dq: &Array2<f64>, dp: &mut Array2<f64>, c: usize) {
    for ((p_row, dq_row), mut dp_row) in p.rows().into_iter().zip(dq.rows()).zip(dp.rows_mut()) {
        let actionness = 1.0 - p_row[c];
        let mut db = dq_row[c];
        for k in 0..c {
            dp_row[k] += dq_row[k] * actionness;
            db -= dq_row[k] * p_row[k];
        }
        dp_row[c] += db;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ClassId;
    use ndarray::array;

    fn table() -> LogitTable {
        LogitTable {
            levels: vec![array![[0.3, -1.2, 0.4], [1.1, 0.2, -0.7], [-0.5, 0.9, 0.8], [0.1, -0.3, -1.5]]],
        }
    }

    fn supervision() -> Supervision {
        Supervision {
            video_label: VideoLabel { presence: vec![1, 0] },
            positives: Positives::Points(vec![PointAnnotation::new(1, ClassId(0), 2)]),
        }
    }

    fn fd_check(logits: &LogitTable, sup: &Supervision, w: &LossWeights) {
        let (_, grad) = total_loss(logits, sup, w).unwrap();
        let h = 1e-5;
        for l in 0..logits.levels.len() {
            for idx in ndarray::indices_of(&logits.levels[l]) {
                let mut plus = logits.clone();
                plus.levels[l][idx] += h;
                let mut minus = logits.clone();
                minus.levels[l][idx] -= h;
                let fd = (total_loss(&plus, sup, w).unwrap().0.total
                    - total_loss(&minus, sup, w).unwrap().0.total)
                    / (2.0 * h);
                let an = grad.levels[l][idx];
                assert!(
                    (an - fd).abs() <= 1e-6_f64.max(1e-4 * fd.abs()),
                    "level {l} {idx:?}: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn zero_weights_give_zero() {
        let w = LossWeights {
            lambda_mil: 0.0,
            lambda_act: 0.0,
            lambda_bg: 0.0,
            top_k: Some(2),
            ..Default::default()
        };
        let (v, g) = total_loss(&table(), &supervision(), &w).unwrap();
        assert_eq!(v.total, 0.0);
        assert!(g.levels[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let w = LossWeights {
            top_k: Some(2),
            ..Default::default()
        };
        fd_check(&table(), &supervision(), &w);
    }

    #[test]
    fn mil_weight_is_linear() {
        let only_mil = |lambda| LossWeights {
            lambda_mil: lambda,
            lambda_act: 0.0,
            lambda_bg: 0.0,
            top_k: Some(2),
            ..Default::default()
        };
        let (a, ga) = total_loss(&table(), &supervision(), &only_mil(1.0)).unwrap();
        let (b, gb) = total_loss(&table(), &supervision(), &only_mil(2.0)).unwrap();
        assert!((b.total - 2.0 * a.total).abs() < 1e-12);
        assert!(ga.levels[0].iter().zip(gb.levels[0].iter()).all(|(x, y)| (2.0 * x - y).abs() < 1e-12));
    }

    #[test]
    fn shape_errors() {
        let mut sup = supervision();
        sup.video_label.presence.push(0);
        assert!(total_loss(&table(), &sup, &LossWeights::default()).is_err());
    }
}

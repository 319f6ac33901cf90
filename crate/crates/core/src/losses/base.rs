use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView1};

use super::focal;
use crate::error::{Error, Result};
use crate::types::{PointAnnotation, ScoreSequence, VideoLabel};

/// How many positions feed the top-K video-level mean on a level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopKPool {
    Fixed(usize),
    /// `max(1, floor(T_l / divisor))`
    Proportional(usize),
}

impl TopKPool {
    pub fn k_for(&self, length: usize) -> Result<usize> {
        let k = match *self {
            TopKPool::Fixed(k) => k,
            TopKPool::Proportional(d) => (length / d.max(1)).max(1),
        };
        if k == 0 || k > length {
            return Err(Error::Invalid(format!(
                "top-K of {k} on a level of length {length}"
            )));
        }
        Ok(k)
    }
}

/// Indices of the `k` largest entries, ties to the lower index.
pub fn top_k_indices(column: ArrayView1<'_, f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..column.len()).collect();
    idx.sort_by(|&a, &b| column[b].total_cmp(&column[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Video-level class scores: per level, the mean of the top-K raw scores of
/// each class column; then the mean over levels.
pub fn video_level_scores(levels: &[ScoreSequence], pool: TopKPool) -> Result<Vec<f64>> {
    let Some(first) = levels.first() else {
        return Err(Error::Shape("no score levels".into()));
    };
    let c = first.num_classes();
    let mut out = vec![0.0; c];
    for level in levels {
        let k = pool.k_for(level.len())?;
        for (class, slot) in out.iter_mut().enumerate() {
            let col = level.values().column(class);
            let top: f64 = top_k_indices(col, k).iter().map(|&t| col[t]).sum();
            *slot += top / k as f64;
        }
    }
    let n = levels.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

/// Scatters a gradient on video-level scores back onto each level's raw
/// score columns (the top-K selection is held fixed).
pub(crate) fn video_level_backward(
    levels: &[ScoreSequence],
    pool: TopKPool,
    grad_scores: &[f64],
) -> Result<Vec<Array2<f64>>> {
    let n = levels.len() as f64;
    levels
        .iter()
        .map(|level| {
            let k = pool.k_for(level.len())?;
            let mut g = Array2::zeros(level.values().raw_dim());
            for (class, &gs) in grad_scores.iter().enumerate() {
                let share = gs / (k as f64 * n);
                for t in top_k_indices(level.values().column(class), k) {
                    g[[t, class]] += share;
                }
            }
            Ok(g)
        })
        .collect()
}

/// Binary cross-entropy over classes between video-level scores and the
/// video label. Returns the value and the gradient in the scores.
pub fn mil_loss(video_scores: &[f64], label: &VideoLabel) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let grad = video_scores
        .iter()
        .enumerate()
        .map(|(c, &p)| {
            let (v, d) = focal(p, label.presence.get(c) == Some(&1), 0.0);
            value += v;
            d
        })
        .collect();
    (value, grad)
}

/// Focal loss at annotated points on the fused sequence, averaged over the
/// points and summed over action classes. Gradient is in the fused scores.
pub fn act_focal_loss(
    fused: &ScoreSequence,
    points: &[PointAnnotation],
    gamma: f64,
) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(fused.values().raw_dim());
    if points.is_empty() {
        return (0.0, grad);
    }
    let c = fused.num_classes();
    let n = points.len() as f64;
    let mut value = 0.0;
    for p in points {
        let t = p.epsilon;
        for class in 0..c {
            let positive = p.label.get(class) == Some(&1);
            let (v, d) = focal(fused.values()[[t, class]], positive, gamma);
            value += v;
            grad[[t, class]] += d / n;
        }
    }
    (value / n, grad)
}

/// Positions whose background score reaches `threshold`, minus `excluded`.
pub fn background_seeds(
    fused: &ScoreSequence,
    threshold: f64,
    excluded: &BTreeSet<usize>,
) -> Vec<usize> {
    fused
        .background()
        .iter()
        .enumerate()
        .filter(|&(t, &b)| b >= threshold && !excluded.contains(&t))
        .map(|(t, _)| t)
        .collect()
}

/// Background focal loss at seed positions: class scores pushed to 0,
/// background pushed to 1, averaged over seeds.
pub fn bg_loss(fused: &ScoreSequence, seeds: &[usize], gamma: f64) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(fused.values().raw_dim());
    if seeds.is_empty() {
        return (0.0, grad);
    }
    let c = fused.num_classes();
    let m = seeds.len() as f64;
    let mut value = 0.0;
    for &t in seeds {
        for class in 0..=c {
            let (v, d) = focal(fused.values()[[t, class]], class == c, gamma);
            value += v;
            grad[[t, class]] += d / m;
        }
    }
    (value / m, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ClassId;
    use ndarray::array;

    const LN2: f64 = std::f64::consts::LN_2;

    fn seq(v: Array2<f64>) -> ScoreSequence {
        ScoreSequence::new(v).unwrap()
    }

    #[test]
    fn top_k_mean() {
        let s = seq(array![[0.1, 0.0], [0.9, 0.0], [0.8, 0.0], [0.2, 0.0]]);
        let v = video_level_scores(std::slice::from_ref(&s), TopKPool::Fixed(2)).unwrap();
        assert!((v[0] - 0.85).abs() < 1e-15);
        let v = video_level_scores(std::slice::from_ref(&s), TopKPool::Fixed(1)).unwrap();
        assert_eq!(v[0], 0.9);
        assert!(video_level_scores(&[s], TopKPool::Fixed(5)).is_err());
    }

    #[test]
    fn level_average() {
        let a = seq(array![[0.6, 0.0], [0.6, 0.0]]);
        let b = seq(array![[0.8, 0.0]]);
        let v = video_level_scores(&[a, b], TopKPool::Fixed(1)).unwrap();
        assert!((v[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn proportional_k() {
        assert_eq!(TopKPool::Proportional(8).k_for(7).unwrap(), 1);
        assert_eq!(TopKPool::Proportional(8).k_for(64).unwrap(), 8);
    }

    #[test]
    fn mil_closed_forms() {
        let label = VideoLabel { presence: vec![1, 0] };
        assert!(mil_loss(&[1.0, 0.0], &label).0 < 1e-6);
        let one = VideoLabel { presence: vec![1] };
        assert!((mil_loss(&[0.5], &one).0 - LN2).abs() < 1e-12);
        assert!((mil_loss(&[0.5, 0.5], &label).0 - 2.0 * LN2).abs() < 1e-12);
    }

    #[test]
    fn act_closed_forms() {
        let perfect = seq(array![[0.0, 0.0, 0.5], [1.0, 0.0, 0.0]]);
        let pts = [PointAnnotation::new(1, ClassId(0), 2)];
        assert!(act_focal_loss(&perfect, &pts, 2.0).0 < 1e-6);

        let half = seq(array![[0.5, 0.5]]);
        let pts = [PointAnnotation::new(0, ClassId(0), 1)];
        assert!((act_focal_loss(&half, &pts, 2.0).0 - 0.25 * LN2).abs() < 1e-12);

        let (v, g) = act_focal_loss(&half, &[], 2.0);
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn act_gamma_zero_is_bce() {
        let s = seq(array![[0.3, 0.6, 0.2]]);
        let pts = [PointAnnotation::new(0, ClassId(1), 2)];
        let bce = -(1.0f64 - 0.3).ln() - 0.6f64.ln();
        assert!((act_focal_loss(&s, &pts, 0.0).0 - bce).abs() < 1e-12);
    }

    #[test]
    fn seeds() {
        let s = seq(array![[0.0, 0.9], [0.0, 0.2], [0.0, 0.8]]);
        assert_eq!(background_seeds(&s, 0.7, &BTreeSet::new()), vec![0, 2]);
        assert!(background_seeds(&s, 0.95, &BTreeSet::new()).is_empty());
        assert_eq!(background_seeds(&s, 0.7, &BTreeSet::from([0])), vec![2]);
    }

    #[test]
    fn bg_closed_forms() {
        let perfect = seq(array![[0.0, 0.0, 1.0]]);
        assert!(bg_loss(&perfect, &[0], 2.0).0 < 1e-6);
        let s = seq(array![[0.0, 0.5]]);
        assert!((bg_loss(&s, &[0], 2.0).0 - 0.25 * LN2).abs() < 1e-12);
        assert_eq!(bg_loss(&s, &[], 2.0).0, 0.0);
    }
}

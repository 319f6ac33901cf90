use ndarray::Array2;

use super::base::{background_seeds, bg_loss};
use super::focal;
use super::sampling::SampledPositives;
use crate::types::ScoreSequence;

/// Focal loss over every sampled positive on every level, divided by the
/// total positive count. Gradients are per level, in the fused scores.
pub fn enhanced_act_loss(
    fused_levels: &[ScoreSequence],
    sampled: &SampledPositives,
    gamma: f64,
) -> (f64, Vec<Array2<f64>>) {
    let mut grads: Vec<Array2<f64>> = fused_levels
        .iter()
        .map(|l| Array2::zeros(l.values().raw_dim()))
        .collect();
    let m = sampled.total();
    if m == 0 {
        return (0.0, grads);
    }
    let m = m as f64;
    let mut value = 0.0;
    for ((level, positives), grad) in fused_levels.iter().zip(&sampled.levels).zip(&mut grads) {
        let c = level.num_classes();
        for &(t, label) in positives {
            for class in 0..c {
                let (v, d) = focal(level.values()[[t, class]], class == label.0, gamma);
                value += v;
                grad[[t, class]] += d / m;
            }
        }
    }
    (value / m, grads)
}

/// Background loss on each level with sampled positives excluded from the
/// seeds, averaged over the levels that have at least one seed.
pub fn enhanced_bg_loss(
    fused_levels: &[ScoreSequence],
    sampled: &SampledPositives,
    threshold: f64,
    gamma: f64,
) -> (f64, Vec<Array2<f64>>) {
    let mut per_level = Vec::with_capacity(fused_levels.len());
    let mut active = 0usize;
    for (l, level) in fused_levels.iter().enumerate() {
        let seeds = background_seeds(level, threshold, &sampled.positions(l));
        if !seeds.is_empty() {
            active += 1;
        }
        per_level.push(bg_loss(level, &seeds, gamma));
    }
    if active == 0 {
        return (0.0, per_level.into_iter().map(|(_, g)| g).collect());
    }
    let scale = 1.0 / active as f64;
    let value = per_level.iter().map(|(v, _)| v).sum::<f64>() * scale;
    let grads = per_level.into_iter().map(|(_, g)| g * scale).collect();
    (value, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{act_focal_loss, bg_loss};
    use crate::types::{ClassId, PointAnnotation};
    use ndarray::array;
    use std::collections::BTreeSet;

    fn seq(v: Array2<f64>) -> ScoreSequence {
        ScoreSequence::new(v).unwrap()
    }

    #[test]
    fn perfect_positives_cost_nothing() {
        let l = seq(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let sampled = SampledPositives {
            levels: vec![vec![(0, ClassId(0)), (1, ClassId(1))]],
        };
        assert!(enhanced_act_loss(&[l], &sampled, 2.0).0 < 1e-6);
    }

    #[test]
    fn single_position_matches_point_loss() {
        let l = seq(array![[0.3, 0.6, 0.1], [0.2, 0.7, 0.4]]);
        let sampled = SampledPositives {
            levels: vec![vec![(1, ClassId(1))]],
        };
        let point = [PointAnnotation::new(1, ClassId(1), 2)];
        let (a, ga) = enhanced_act_loss(std::slice::from_ref(&l), &sampled, 2.0);
        let (b, gb) = act_focal_loss(&l, &point, 2.0);
        assert_eq!(a, b);
        assert_eq!(ga[0], gb);
    }

    #[test]
    fn level_order_does_not_matter() {
        let a = seq(array![[0.3, 0.6], [0.2, 0.7]]);
        let b = seq(array![[0.9, 0.1]]);
        let s1 = SampledPositives {
            levels: vec![vec![(0, ClassId(0)), (1, ClassId(0))], vec![(0, ClassId(0))]],
        };
        let s2 = SampledPositives {
            levels: vec![s1.levels[1].clone(), s1.levels[0].clone()],
        };
        let v1 = enhanced_act_loss(&[a.clone(), b.clone()], &s1, 2.0).0;
        let v2 = enhanced_act_loss(&[b, a], &s2, 2.0).0;
        assert!((v1 - v2).abs() < 1e-15);
    }

    #[test]
    fn bg_reductions() {
        let l = seq(array![[0.1, 0.9], [0.2, 0.3], [0.05, 0.8]]);
        let none = SampledPositives {
            levels: vec![vec![]],
        };
        let (v, _) = enhanced_bg_loss(std::slice::from_ref(&l), &none, 0.5, 2.0);
        let seeds = background_seeds(&l, 0.5, &BTreeSet::new());
        assert_eq!(v, bg_loss(&l, &seeds, 2.0).0);

        let excl = SampledPositives {
            levels: vec![vec![(0, ClassId(0))]],
        };
        let (v, g) = enhanced_bg_loss(std::slice::from_ref(&l), &excl, 0.5, 2.0);
        assert_eq!(v, bg_loss(&l, &[2], 2.0).0);
        assert!(g[0].row(0).iter().all(|&x| x == 0.0));

        let (v, _) = enhanced_bg_loss(&[l], &none, 0.95, 2.0);
        assert_eq!(v, 0.0);
    }
}

//! Multi-head self-attention restricted to a centred temporal window.
//!
//! Position `t` attends to `[t - (w-1)/2, t + (w-1)/2]` clipped to the
//! sequence. Cost is `O(T * w)` per head.

use ndarray::{s, Array1, Array2};

use super::layers::Linear;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    /// `D x D_q`
    pub query: Array2<f64>,
    /// `D x D_q`
    pub key: Array2<f64>,
    /// `D x D_v`
    pub value: Array2<f64>,
    /// `D_v -> D`
    pub output: Linear,
}

/// Softmax weights of every query over its window, per head:
/// `weights[h][t]` lists the weights of positions `lo(t)..=hi(t)`.
pub type WindowWeights = Vec<Vec<Vec<f64>>>;

fn window_bounds(t: usize, len: usize, half: usize) -> (usize, usize) {
    (t.saturating_sub(half), (t + half).min(len - 1))
}

fn attend(
    z: &Array2<f64>,
    w: &AttentionWeights,
    window: usize,
    heads: usize,
    mut record: Option<&mut WindowWeights>,
) -> Array2<f64> {
    let len = z.nrows();
    let q = z.dot(&w.query);
    let k = z.dot(&w.key);
    let v = z.dot(&w.value);
    let dq = q.ncols() / heads;
    let dv = v.ncols() / heads;
    let scale = 1.0 / (dq as f64).sqrt();
    let half = (window.saturating_sub(1)) / 2;
    let mut mixed = Array2::zeros((len, v.ncols()));
    if let Some(rec) = record.as_deref_mut() {
        *rec = vec![Vec::with_capacity(len); heads];
    }
    for h in 0..heads {
        let qh = q.slice(s![.., h * dq..(h + 1) * dq]);
        let kh = k.slice(s![.., h * dq..(h + 1) * dq]);
        let vh = v.slice(s![.., h * dv..(h + 1) * dv]);
        for t in 0..len {
            let (lo, hi) = window_bounds(t, len, half);
            let logits: Vec<f64> = (lo..=hi).map(|j| qh.row(t).dot(&kh.row(j)) * scale).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exp.iter().sum();
            let weights: Vec<f64> = exp.iter().map(|e| e / total).collect();
            let mut acc = Array1::<f64>::zeros(dv);
            for (a, j) in weights.iter().zip(lo..=hi) {
                acc.scaled_add(*a, &vh.row(j));
            }
            mixed.slice_mut(s![t, h * dv..(h + 1) * dv]).assign(&acc);
            if let Some(rec) = record.as_deref_mut() {
                rec[h].push(weights);
            }
        }
    }
    w.output.forward(&mixed)
}

/// Windowed multi-head attention; heads are concatenated and projected.
pub fn windowed_attention(
    z: &Array2<f64>,
    weights: &AttentionWeights,
    window: usize,
    heads: usize,
) -> Array2<f64> {
    attend(z, weights, window, heads, None)
}

/// Same as [`windowed_attention`] but also returns the softmax weights.
pub fn windowed_attention_with_weights(
    z: &Array2<f64>,
    weights: &AttentionWeights,
    window: usize,
    heads: usize,
) -> (Array2<f64>, WindowWeights) {
    let mut rec = Vec::new();
    let out = attend(z, weights, window, heads, Some(&mut rec));
    (out, rec)
}

/// Unwindowed reference: full `T x T` score matrix per head, softmax over
/// each row, optional band mask of half-width `radius`.
pub fn dense_attention(
    z: &Array2<f64>,
    weights: &AttentionWeights,
    heads: usize,
    radius: Option<usize>,
) -> Array2<f64> {
    let len = z.nrows();
    let q = z.dot(&weights.query);
    let k = z.dot(&weights.key);
    let v = z.dot(&weights.value);
    let dq = q.ncols() / heads;
    let dv = v.ncols() / heads;
    let mut heads_out = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.slice(s![.., h * dq..(h + 1) * dq]);
        let kh = k.slice(s![.., h * dq..(h + 1) * dq]);
        let vh = v.slice(s![.., h * dv..(h + 1) * dv]);
        let mut scores = qh.dot(&kh.t()) / (dq as f64).sqrt();
        for i in 0..len {
            for j in 0..len {
                if radius.is_some_and(|r| i.abs_diff(j) > r) {
                    scores[[i, j]] = f64::NEG_INFINITY;
                }
            }
            let mut row = scores.row_mut(i);
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row /= sum;
        }
        heads_out.push(scores.dot(&vh));
    }
    let views: Vec<_> = heads_out.iter().map(|a| a.view()).collect();
    let mixed = ndarray::concatenate(ndarray::Axis(1), &views).expect("equal row counts");
    weights.output.forward(&mixed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights(d: usize, dq: usize, dv: usize) -> AttentionWeights {
        let f = |r: usize, c: usize, k: f64| Array2::from_shape_fn((r, c), |(i, j)| ((i * c + j) as f64 * k).sin() * 0.4);
        AttentionWeights {
            query: f(d, dq, 0.7),
            key: f(d, dq, 1.3),
            value: f(d, dv, 0.9),
            output: Linear {
                weight: f(dv, d, 0.5),
                bias: Array1::zeros(d),
            },
        }
    }

    fn input(t: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((t, d), |(i, j)| ((i * 5 + j * 3) as f64 * 0.21).cos())
    }

    #[test]
    fn full_window_matches_dense() {
        let w = weights(6, 4, 4);
        let z = input(9, 6);
        let a = windowed_attention(&z, &w, 17, 2);
        let b = dense_attention(&z, &w, 2, None);
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9));
        let banded = dense_attention(&z, &w, 2, Some(1));
        let local = windowed_attention(&z, &w, 3, 2);
        assert!(local.iter().zip(&banded).all(|(x, y)| (x - y).abs() < 1e-9));
    }

    #[test]
    fn rows_sum_to_one() {
        let w = weights(6, 4, 4);
        let (_, rec) = windowed_attention_with_weights(&input(7, 6), &w, 3, 2);
        assert_eq!(rec.len(), 2);
        assert_eq!(rec[0][0].len(), 2);
        assert_eq!(rec[0][3].len(), 3);
        for row in rec.iter().flatten() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn perturbation_stays_local() {
        let w = weights(6, 4, 4);
        let z = input(15, 6);
        let base = windowed_attention(&z, &w, 5, 2);
        let mut zp = z.clone();
        zp[[7, 2]] += 3.0;
        let out = windowed_attention(&zp, &w, 5, 2);
        for t in 0..15 {
            let same = base.row(t) == out.row(t);
            assert_eq!(same, t.abs_diff(7) > 2, "t = {t}");
        }
    }
}

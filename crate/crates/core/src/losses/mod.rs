//! Point- and pseudo-label-supervised losses with analytic gradients, label
//! sampling on the pyramid, and the logit-table trainer.
//!
//! Every loss returns its value together with the gradient with respect to
//! its direct input (video-level scores or fused score sequences). Scores
//! are clamped to `[1e-7, 1 - 1e-7]` inside logarithms only; the clamped
//! region contributes no log-gradient.

mod base;
mod enhanced;
mod sampling;
mod total;
mod trainer;

pub use base::{
    act_focal_loss, background_seeds, bg_loss, mil_loss, top_k_indices, video_level_scores,
    TopKPool,
};
pub use enhanced::{enhanced_act_loss, enhanced_bg_loss};
pub use sampling::{sample_pseudo_labels, RadiusMode, SampledPositives};
pub use total::{total_loss, LogitTable, LossBreakdown, Positives, Supervision};
pub use trainer::{fit_logits, FitOutcome, Parameterization, TrainerConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROB_EPS: f64 = 1e-7;

/// Loss weights and supervision hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_mil: f64,
    pub lambda_act: f64,
    pub lambda_bg: f64,
    pub gamma: f64,
    /// Fixed top-K for video-level pooling; `None` uses `max(1, T_l / 8)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    pub bg_threshold: f64,
    pub radius: usize,
    pub radius_mode: RadiusMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_mil: 1.0,
            lambda_act: 1.0,
            lambda_bg: 1.0,
            gamma: 2.0,
            top_k: None,
            bg_threshold: 0.5,
            radius: 2,
            radius_mode: RadiusMode::LevelGrid,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_mil", self.lambda_mil),
            ("lambda_act", self.lambda_act),
            ("lambda_bg", self.lambda_bg),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss.{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.bg_threshold > 0.0 && self.bg_threshold < 1.0) {
            return Err(Error::Config(format!(
                "loss.bg_threshold must be in (0, 1), got {}",
                self.bg_threshold
            )));
        }
        if self.top_k == Some(0) {
            return Err(Error::Config("loss.top_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn pool(&self) -> TopKPool {
        match self.top_k {
            Some(k) => TopKPool::Fixed(k),
            None => TopKPool::Proportional(8),
        }
    }
}

/// `ln(clamp(p))` and its derivative in `p`.
fn ln_clamped(p: f64) -> (f64, f64) {
    if p < PROB_EPS {
        (PROB_EPS.ln(), 0.0)
    } else if p > 1.0 - PROB_EPS {
        ((1.0 - PROB_EPS).ln(), 0.0)
    } else {
        (p.ln(), 1.0 / p)
    }
}

/// `x^gamma` and its derivative in `x`, with `0^0 = 1` and zero slope at
/// `gamma = 0`.
fn pow_with_slope(x: f64, gamma: f64) -> (f64, f64) {
    if gamma == 0.0 {
        (1.0, 0.0)
    } else {
        (x.powf(gamma), gamma * x.powf(gamma - 1.0))
    }
}

/// Positive-label focal term `-(1-q)^g ln q` and its derivative in `q`.
pub(crate) fn focal_positive(q: f64, gamma: f64) -> (f64, f64) {
    let (w, dw) = pow_with_slope(1.0 - q, gamma);
    let (l, dl) = ln_clamped(q);
    (-w * l, dw * l - w * dl)
}

/// Negative-label focal term `-q^g ln(1-q)` and its derivative in `q`.
pub(crate) fn focal_negative(q: f64, gamma: f64) -> (f64, f64) {
    let (w, dw) = pow_with_slope(q, gamma);
    let (l, dl) = ln_clamped(1.0 - q);
    (-w * l, -dw * l + w * dl)
}

/// Focal term for target `y` in {0, 1}.
pub(crate) fn focal(q: f64, positive: bool, gamma: f64) -> (f64, f64) {
    if positive {
        focal_positive(q, gamma)
    } else {
        focal_negative(q, gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn focal_terms_match_finite_differences() {
        for &gamma in &[0.0, 0.5, 1.0, 2.0, 3.5] {
            for &q in &[0.01, 0.2, 0.5, 0.77, 0.99] {
                let (_, d) = focal_positive(q, gamma);
                let fd = central(|x| focal_positive(x, gamma).0, q);
                assert!((d - fd).abs() < 1e-5 * (1.0 + fd.abs()), "pos g={gamma} q={q}");
                let (_, d) = focal_negative(q, gamma);
                let fd = central(|x| focal_negative(x, gamma).0, q);
                assert!((d - fd).abs() < 1e-5 * (1.0 + fd.abs()), "neg g={gamma} q={q}");
            }
        }
    }

    #[test]
    fn saturated_scores_stay_finite() {
        for q in [0.0, 1.0] {
            for positive in [true, false] {
                let (v, d) = focal(q, positive, 2.0);
                assert!(v.is_finite() && d.is_finite() && v >= 0.0);
            }
        }
    }

    #[test]
    fn gamma_zero_is_cross_entropy() {
        let q: f64 = 0.3;
        assert_eq!(focal_positive(q, 0.0).0, -q.ln());
        assert_eq!(focal_negative(q, 0.0).0, -(1.0 - q).ln());
    }
}

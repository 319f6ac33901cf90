//! Plain gradient descent on per-video logit tables.
//!
//! Two parameterizations produce the table: free logits per level and
//! position, or a linear head over standardized snippet features
//! (block-averaged onto each level) shared by all levels. Both start from
//! zero unless `init_scale` is set.

use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::total::{total_loss, LogitTable, LossBreakdown, Supervision};
use super::LossWeights;
use crate::error::{Error, Result};
use crate::types::{Pyramid, VideoRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    #[default]
    FeatureHead,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Standard deviation of the initial parameters; 0 gives zero init.
    pub init_scale: f64,
    pub parameterization: Parameterization,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            learning_rate: 0.05,
            momentum: 0.0,
            seed: 0,
            init_scale: 0.0,
            parameterization: Parameterization::FeatureHead,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("trainer.steps must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "trainer.learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "trainer.momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("trainer.init_scale must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub table: LogitTable,
    pub initial: LossBreakdown,
    pub last: LossBreakdown,
}

/// Block-averaged, column-standardized features with a trailing bias
/// column, one matrix per pyramid level.
fn level_design(features: &Array2<f64>, pyramid: Pyramid) -> Vec<Array2<f64>> {
    let mean = features.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(features.ncols()));
    let std = features
        .var_axis(Axis(0), 0.0)
        .mapv(|v| if v > 1e-12 { v.sqrt() } else { 1.0 });
    let z = (features - &mean) / &std;
    let t = z.nrows();
    let d = z.ncols();
    pyramid
        .lengths(t)
        .iter()
        .enumerate()
        .map(|(l, &len)| {
            let block = pyramid.scale(l) as usize;
            let mut x = Array2::ones((len, d + 1));
            for i in 0..len {
                let lo = i * block;
                let hi = ((i + 1) * block).min(t);
                let avg = z.slice(s![lo..hi, ..]).mean_axis(Axis(0)).expect("non-empty block");
                x.slice_mut(s![i, ..d]).assign(&avg);
            }
            x
        })
        .collect()
}

/// Fits the logit table of one video by gradient descent on
/// [`total_loss`]. Deterministic for a given config.
pub fn fit_logits(
    video: &VideoRecord,
    supervision: &Supervision,
    pyramid: Pyramid,
    weights: &LossWeights,
    config: &TrainerConfig,
) -> Result<FitOutcome> {
    config.validate()?;
    weights.validate()?;
    let lengths = pyramid.lengths(video.length);
    let c = video.num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, config.init_scale.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut init = |shape: (usize, usize)| -> Array2<f64> {
        if config.init_scale > 0.0 {
            Array2::from_shape_simple_fn(shape, || normal.sample(&mut rng))
        } else {
            Array2::zeros(shape)
        }
    };

    let design = match config.parameterization {
        Parameterization::Table => None,
        Parameterization::FeatureHead => {
            let f = video.features.as_ref().ok_or_else(|| {
                Error::Invalid(format!(
                    "video {} has no features; use the table parameterization",
                    video.id
                ))
            })?;
            if f.nrows() != video.length {
                return Err(Error::Shape(format!(
                    "video {} has {} feature rows for length {}",
                    video.id,
                    f.nrows(),
                    video.length
                )));
            }
            Some(level_design(f, pyramid))
        }
    };

    let mut params: Vec<Array2<f64>> = match &design {
        None => lengths.iter().map(|&t| init((t, c + 1))).collect(),
        Some(x) => vec![init((x[0].ncols(), c + 1))],
    };
    let mut velocity: Vec<Array2<f64>> = params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();

    let materialize = |params: &[Array2<f64>]| -> LogitTable {
        match &design {
            None => LogitTable {
                levels: params.to_vec(),
            },
            Some(x) => LogitTable {
                levels: x.iter().map(|xl| xl.dot(&params[0])).collect(),
            },
        }
    };

    let mut initial = None;
    for step in 0..=config.steps {
        let table = materialize(&params);
        let (loss, grad) = total_loss(&table, supervision, weights)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFinite {
                step,
                loss: loss.total,
            });
        }
        if initial.is_none() {
            initial = Some(loss);
        }
        if step == config.steps {
            return Ok(FitOutcome {
                table,
                initial: initial.expect("set on step 0"),
                last: loss,
            });
        }
        let param_grads: Vec<Array2<f64>> = match &design {
            None => grad.levels,
            Some(x) => {
                let mut g = Array2::zeros(params[0].raw_dim());
                for (xl, gl) in x.iter().zip(&grad.levels) {
                    g += &xl.t().dot(gl);
                }
                vec![g]
            }
        };
        for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&param_grads) {
            *v *= config.momentum;
            v.scaled_add(-config.learning_rate, g);
            *p += &*v;
        }
    }
    unreachable!("loop returns on the final step")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::Positives;
    use crate::types::{derive_video_labels, ClassId, PointAnnotation};

    fn video() -> VideoRecord {
        let t = 32;
        let features = Array2::from_shape_fn((t, 3), |(i, j)| {
            let inside = (8..16).contains(&i);
            match j {
                0 if inside => 1.0,
                1 => ((i * 7 % 5) as f64) * 0.1,
                2 if !inside => 1.0,
                _ => 0.0,
            }
        });
        VideoRecord {
            id: "v".into(),
            length: t,
            num_classes: 2,
            features: Some(features),
            points: vec![PointAnnotation::new(11, ClassId(0), 2)],
            ground_truth: None,
        }
    }

    fn supervision(v: &VideoRecord) -> Supervision {
        Supervision {
            video_label: derive_video_labels(v),
            positives: Positives::Points(v.points.clone()),
        }
    }

    #[test]
    fn loss_decreases() {
        let v = video();
        for parameterization in [Parameterization::FeatureHead, Parameterization::Table] {
            let cfg = TrainerConfig {
                parameterization,
                ..Default::default()
            };
            let out = fit_logits(&v, &supervision(&v), Pyramid::single(), &LossWeights::default(), &cfg)
                .unwrap();
            assert!(out.last.total < out.initial.total, "{parameterization:?}");
        }
    }

    #[test]
    fn zero_steps_rejected() {
        let v = video();
        let cfg = TrainerConfig {
            steps: 0,
            ..Default::default()
        };
        assert!(fit_logits(&v, &supervision(&v), Pyramid::single(), &LossWeights::default(), &cfg).is_err());
    }

    #[test]
    fn deterministic() {
        let v = video();
        let cfg = TrainerConfig {
            steps: 20,
            init_scale: 0.1,
            seed: 7,
            ..Default::default()
        };
        let pyr = Pyramid { sigma: 2, levels: 2 };
        let a = fit_logits(&v, &supervision(&v), pyr, &LossWeights::default(), &cfg).unwrap();
        let b = fit_logits(&v, &supervision(&v), pyr, &LossWeights::default(), &cfg).unwrap();
        assert_eq!(a.table, b.table);
        assert_eq!(a.table.levels.len(), 3);
    }

    #[test]
    fn head_needs_features() {
        let mut v = video();
        v.features = None;
        let err = fit_logits(&v, &supervision(&v), Pyramid::single(), &LossWeights::default(), &TrainerConfig::default());
        assert!(err.is_err());
    }
}

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::types::{ClassId, Pyramid, PseudoLabel};

/// How the sampling radius scales with pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusMode {
    /// `r` positions on every level's own grid.
    #[default]
    LevelGrid,
    /// `sigma^l * r` positions on level `l`'s grid.
    Scaled,
}

/// Positive positions per pyramid level, deduplicated by (position, class)
/// and sorted.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SampledPositives {
    pub levels: Vec<Vec<(usize, ClassId)>>,
}

impl SampledPositives {
    pub fn total(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn positions(&self, level: usize) -> BTreeSet<usize> {
        self.levels
            .get(level)
            .map(|l| l.iter().map(|&(t, _)| t).collect())
            .unwrap_or_default()
    }
}

/// Projects each pseudo-label onto every level and keeps the integer
/// positions within `radius` of the rounded projected point that also lie
/// inside the projected interval and the level.
pub fn sample_pseudo_labels(
    pseudo_labels: &[PseudoLabel],
    pyramid: Pyramid,
    length: usize,
    radius: usize,
    mode: RadiusMode,
) -> SampledPositives {
    let lengths = pyramid.lengths(length);
    let levels = lengths
        .iter()
        .enumerate()
        .map(|(l, &len)| {
            let scale = pyramid.scale(l);
            let r = match mode {
                RadiusMode::LevelGrid => radius as i64,
                RadiusMode::Scaled => radius as i64 * scale as i64,
            };
            let mut set = BTreeSet::new();
            for pl in pseudo_labels {
                let center = (pl.point as f64 / scale + 0.5).floor() as i64;
                let lo = ((pl.start / scale).ceil() as i64).max(center - r).max(0);
                let hi = ((pl.end / scale).floor() as i64)
                    .min(center + r)
                    .min(len as i64 - 1);
                for t in lo..=hi {
                    set.insert((t as usize, pl.label));
                }
            }
            set.into_iter().collect()
        })
        .collect();
    SampledPositives { levels }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pl(point: usize, start: f64, end: f64) -> PseudoLabel {
        PseudoLabel {
            point,
            start,
            end,
            label: ClassId(0),
        }
    }

    fn positions(s: &SampledPositives, level: usize) -> Vec<usize> {
        s.levels[level].iter().map(|&(t, _)| t).collect()
    }

    #[test]
    fn level_zero_window() {
        let s = sample_pseudo_labels(&[pl(10, 0.0, 30.0)], Pyramid::single(), 64, 2, RadiusMode::LevelGrid);
        assert_eq!(positions(&s, 0), vec![8, 9, 10, 11, 12]);
    }

    #[test]
    fn clipped_at_zero() {
        let s = sample_pseudo_labels(&[pl(1, 0.0, 30.0)], Pyramid::single(), 64, 2, RadiusMode::LevelGrid);
        assert_eq!(positions(&s, 0), vec![0, 1, 2, 3]);
    }

    #[test]
    fn projected_to_level_two() {
        let pyr = Pyramid { sigma: 2, levels: 2 };
        let s = sample_pseudo_labels(&[pl(10, 0.0, 30.0)], pyr, 64, 2, RadiusMode::LevelGrid);
        assert_eq!(positions(&s, 2), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn scaled_radius_grows_with_level() {
        let pyr = Pyramid { sigma: 2, levels: 1 };
        let s = sample_pseudo_labels(&[pl(20, 0.0, 60.0)], pyr, 64, 2, RadiusMode::Scaled);
        assert_eq!(positions(&s, 1), (6..=14).collect::<Vec<_>>());
    }

    #[test]
    fn bounded_by_interval_and_video() {
        let s = sample_pseudo_labels(&[pl(10, 9.0, 11.0)], Pyramid::single(), 11, 2, RadiusMode::LevelGrid);
        assert_eq!(positions(&s, 0), vec![9, 10]);
        // short interval vanishes on a coarse level
        let pyr = Pyramid { sigma: 2, levels: 3 };
        let s = sample_pseudo_labels(&[pl(10, 9.0, 11.0)], pyr, 64, 2, RadiusMode::LevelGrid);
        assert!(s.levels[3].is_empty());
    }

    #[test]
    fn overlapping_labels_deduplicate() {
        let s = sample_pseudo_labels(
            &[pl(10, 0.0, 30.0), pl(11, 0.0, 30.0)],
            Pyramid::single(),
            64,
            2,
            RadiusMode::LevelGrid,
        );
        assert_eq!(positions(&s, 0), vec![8, 9, 10, 11, 12, 13]);
    }
}

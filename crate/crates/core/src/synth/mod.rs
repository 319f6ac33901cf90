//! Seeded synthetic datasets with planted actions, plus noisy proposal
//! generation and brute-force reference implementations for testing.
//!
//! Each video draws from its own ChaCha8 stream (`seed`, stream = video
//! index), so generation order and parallelism do not affect the output.

pub mod oracle;

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClassId, GtInterval, PointAnnotation, Proposal, VideoRecord};

pub const MANIFEST_FILE: &str = "synth_manifest.json";

/// Stream offset separating proposal noise from dataset generation.
const PROPOSAL_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurationSpec {
    pub mean: f64,
    /// Durations are uniform in `[mean - spread, mean + spread]`.
    pub spread: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalNoise {
    /// Standard deviation of the boundary jitter, in snippets.
    pub jitter: f64,
    pub drop_rate: f64,
    pub duplicate_rate: f64,
    /// Probability of fusing an instance with the next same-class instance.
    pub merge_rate: f64,
    /// Standard deviation of the confidence deficit from 1.
    pub confidence_noise: f64,
}

impl Default for ProposalNoise {
    fn default() -> Self {
        Self {
            jitter: 1.5,
            drop_rate: 0.1,
            duplicate_rate: 0.3,
            merge_rate: 0.1,
            confidence_noise: 0.2,
        }
    }
}

impl ProposalNoise {
    pub fn none() -> Self {
        Self {
            jitter: 0.0,
            drop_rate: 0.0,
            duplicate_rate: 0.0,
            merge_rate: 0.0,
            confidence_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_videos: usize,
    /// Inclusive length range in snippets.
    pub length: [usize; 2],
    pub num_classes: usize,
    /// Inclusive range of action instances per video.
    pub actions: [usize; 2],
    /// One entry per class; empty selects `mean = 8 + 6c`, `spread = mean / 4`.
    pub durations: Vec<DurationSpec>,
    /// Minimum number of background snippets between instances.
    pub min_gap: usize,
    pub feature_dim: usize,
    pub feature_noise: f64,
    /// Snippets over which an instance's signature ramps up at each end.
    pub edge_softness: usize,
    pub proposal_noise: ProposalNoise,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            num_videos: 24,
            length: [128, 192],
            num_classes: 3,
            actions: [1, 4],
            durations: Vec::new(),
            min_gap: 1,
            feature_dim: 16,
            feature_noise: 0.3,
            edge_softness: 2,
            proposal_noise: ProposalNoise::default(),
        }
    }
}

impl SynthConfig {
    pub fn duration(&self, class: usize) -> DurationSpec {
        self.durations.get(class).copied().unwrap_or_else(|| {
            let mean = 8.0 + 6.0 * class as f64;
            DurationSpec {
                mean,
                spread: mean / 4.0,
            }
        })
    }

    fn duration_bounds(&self, class: usize) -> (usize, usize) {
        let d = self.duration(class);
        let lo = (d.mean - d.spread).round().max(1.0) as usize;
        let hi = ((d.mean + d.spread).round() as usize).max(lo);
        (lo, hi)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("synth: {m}")));
        if self.length[0] == 0 || self.length[0] > self.length[1] {
            return fail(format!("length range {:?} is empty", self.length));
        }
        if self.actions[0] > self.actions[1] {
            return fail(format!("actions range {:?} is empty", self.actions));
        }
        if self.num_classes == 0 {
            return fail("num_classes must be >= 1".into());
        }
        if !self.durations.is_empty() && self.durations.len() != self.num_classes {
            return fail(format!(
                "durations lists {} classes, num_classes is {}",
                self.durations.len(),
                self.num_classes
            ));
        }
        for c in 0..self.num_classes {
            let d = self.duration(c);
            if !(d.mean > 0.0 && d.spread >= 0.0 && d.mean.is_finite() && d.spread.is_finite()) {
                return fail(format!("class {c} duration {d:?} must have mean > 0 and spread >= 0"));
            }
        }
        if self.feature_dim < self.num_classes + 1 {
            return fail(format!(
                "feature_dim {} must be at least num_classes + 1 = {}",
                self.feature_dim,
                self.num_classes + 1
            ));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return fail("feature_noise must be >= 0".into());
        }
        let n = &self.proposal_noise;
        for (name, p) in [
            ("drop_rate", n.drop_rate),
            ("duplicate_rate", n.duplicate_rate),
            ("merge_rate", n.merge_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("proposal_noise.{name} must be in [0, 1], got {p}"));
            }
        }
        if !(n.jitter >= 0.0 && n.confidence_noise >= 0.0 && n.jitter.is_finite() && n.confidence_noise.is_finite()) {
            return fail("proposal_noise spreads must be >= 0".into());
        }
        self.check_packing()
    }

    /// Rejects configs where the largest draw could fail to fit in the
    /// shortest video.
    fn check_packing(&self) -> Result<()> {
        let actions = self.actions[1];
        if actions == 0 {
            return Ok(());
        }
        let longest = (0..self.num_classes)
            .map(|c| self.duration_bounds(c).1)
            .max()
            .unwrap_or(0);
        let total = actions * longest + (actions - 1) * self.min_gap;
        if total > self.length[0] {
            return Err(Error::InfeasiblePacking {
                actions,
                total,
                length: self.length[0],
            });
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(std: f64) -> Option<Normal<f64>> {
    (std > 0.0).then(|| Normal::new(0.0, std).expect("finite std"))
}

pub fn video_id(index: usize) -> String {
    format!("video_{index:04}")
}

/// Generates `num_videos` records with ground truth, features and one point
/// per instance.
pub fn gen_dataset(config: &SynthConfig) -> Result<Vec<VideoRecord>> {
    config.validate()?;
    Ok((0..config.num_videos).map(|i| gen_video(config, i)).collect())
}

fn gen_video(config: &SynthConfig, index: usize) -> VideoRecord {
    let mut rng = stream_rng(config.seed, index as u64);
    let c = config.num_classes;
    let length = rng.random_range(config.length[0]..=config.length[1]);
    let n = rng.random_range(config.actions[0]..=config.actions[1]);
    let instances: Vec<(ClassId, usize)> = (0..n)
        .map(|_| {
            let class = rng.random_range(0..c);
            let (lo, hi) = config.duration_bounds(class);
            (ClassId(class), rng.random_range(lo..=hi))
        })
        .collect();

    // Spread the slack over the n + 1 gaps via sorted uniform offsets.
    let used: usize = instances.iter().map(|&(_, d)| d).sum::<usize>() + n.saturating_sub(1) * config.min_gap;
    let slack = length - used;
    let mut offsets: Vec<usize> = (0..n).map(|_| rng.random_range(0..=slack)).collect();
    offsets.sort_unstable();

    let mut base = 0;
    let mut ground_truth = Vec::with_capacity(n);
    let mut points = Vec::with_capacity(n);
    for (&(class, d), &offset) in instances.iter().zip(&offsets) {
        let start = base + offset;
        let end = start + d;
        base += d + config.min_gap;
        ground_truth.push(GtInterval {
            start: start as f64,
            end: end as f64,
            label: class,
        });
        points.push(PointAnnotation::new(rng.random_range(start..end), class, c));
    }

    let noise = normal(config.feature_noise);
    let mut features = Array2::zeros((length, config.feature_dim));
    for t in 0..length {
        features[[t, c]] = 1.0;
    }
    let ramp = (config.edge_softness + 1) as f64;
    for g in &ground_truth {
        let (s, e) = (g.start as usize, g.end as usize);
        for t in s..e {
            let edge = (t - s).min(e - 1 - t) as f64 + 1.0;
            let strength = (edge / ramp).min(1.0);
            features[[t, g.label.0]] = strength;
            features[[t, c]] = 1.0 - strength;
        }
    }
    if let Some(noise) = noise {
        features.mapv_inplace(|v| v + noise.sample(&mut rng));
    }

    VideoRecord {
        id: video_id(index),
        length,
        num_classes: c,
        features: Some(features),
        points,
        ground_truth: Some(ground_truth),
    }
}

/// Jittered, dropped, duplicated and merged copies of the ground truth.
/// Output intervals satisfy `0 <= start < end <= length`.
pub fn perturb_to_noisy_proposals(
    gt: &[GtInterval],
    length: usize,
    noise: &ProposalNoise,
    seed: u64,
    stream: u64,
) -> Vec<Proposal> {
    let mut rng = stream_rng(seed, stream);
    let jitter = normal(noise.jitter);
    let conf = normal(noise.confidence_noise);
    let t = length as f64;

    let emit = |rng: &mut ChaCha8Rng, s: f64, e: f64, label: ClassId, out: &mut Vec<Proposal>| {
        let (mut a, mut b) = match &jitter {
            Some(j) => (s + j.sample(rng), e + j.sample(rng)),
            None => (s, e),
        };
        a = a.clamp(0.0, t);
        b = b.clamp(0.0, t);
        if b - a < 1.0 {
            let mid = ((a + b) / 2.0).clamp(0.5, (t - 0.5).max(0.5));
            a = (mid - 0.5).max(0.0);
            b = (mid + 0.5).min(t);
        }
        let confidence = match &conf {
            Some(c) => (1.0 - c.sample(rng).abs()).clamp(0.0, 1.0),
            None => 1.0,
        };
        if a < b {
            out.push(Proposal::new(a, b, label, confidence));
        }
    };

    let mut order: Vec<usize> = (0..gt.len()).collect();
    order.sort_by(|&i, &j| gt[i].start.total_cmp(&gt[j].start).then(i.cmp(&j)));
    let mut out = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        let g = gt[i];
        if rng.random_bool(noise.drop_rate) {
            continue;
        }
        emit(&mut rng, g.start, g.end, g.label, &mut out);
        if rng.random_bool(noise.duplicate_rate) {
            emit(&mut rng, g.start, g.end, g.label, &mut out);
        }
        let next = order[k + 1..].iter().map(|&j| gt[j]).find(|h| h.label == g.label);
        if let Some(h) = next {
            if rng.random_bool(noise.merge_rate) {
                emit(&mut rng, g.start, h.end, g.label, &mut out);
            }
        }
    }
    out
}

/// Noisy proposals for every video, each from its own stream.
pub fn noisy_proposals(videos: &[VideoRecord], config: &SynthConfig) -> Vec<Vec<Proposal>> {
    videos
        .iter()
        .enumerate()
        .map(|(i, v)| {
            perturb_to_noisy_proposals(
                v.ground_truth.as_deref().unwrap_or(&[]),
                v.length,
                &config.proposal_noise,
                config.seed,
                PROPOSAL_STREAM + i as u64,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub schema_version: u32,
    pub num_videos: usize,
    pub config: SynthConfig,
}

pub fn write_manifest(dir: &Path, config: &SynthConfig, schema_version: u32) -> Result<()> {
    let manifest = SynthManifest {
        schema_version,
        num_videos: config.num_videos,
        config: config.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Invalid(e.to_string()))?;
    bytes.push(b'\n');
    crate::io::write_atomic(&dir.join(MANIFEST_FILE), &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            num_videos: 6,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(gen_dataset(&small()).unwrap(), gen_dataset(&small()).unwrap());
        let other = SynthConfig { seed: 8, ..small() };
        assert_ne!(gen_dataset(&small()).unwrap(), gen_dataset(&other).unwrap());
    }

    #[test]
    fn planted_structure() {
        let data = gen_dataset(&small()).unwrap();
        assert!(crate::types::validate_dataset(&data).is_empty());
        for v in &data {
            let gt = v.ground_truth.as_ref().unwrap();
            assert_eq!(gt.len(), v.points.len());
            for (g, p) in gt.iter().zip(&v.points) {
                let eps = p.epsilon as f64;
                assert!(g.start <= eps && eps < g.end);
                assert_eq!(p.class(), Some(g.label));
                assert!(g.end <= v.length as f64);
            }
            let mut sorted = gt.clone();
            sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
            for w in sorted.windows(2) {
                assert!(w[1].start >= w[0].end + 1.0);
            }
            assert_eq!(v.features.as_ref().unwrap().dim(), (v.length, 16));
        }
    }

    #[test]
    fn infeasible_packing() {
        let cfg = SynthConfig {
            length: [20, 30],
            actions: [3, 3],
            ..small()
        };
        assert!(matches!(gen_dataset(&cfg), Err(Error::InfeasiblePacking { .. })));
    }

    #[test]
    fn zero_noise_is_identity() {
        let cfg = SynthConfig {
            proposal_noise: ProposalNoise::none(),
            ..small()
        };
        let data = gen_dataset(&cfg).unwrap();
        let props = noisy_proposals(&data, &cfg);
        for (v, ps) in data.iter().zip(&props) {
            let mut gt = v.ground_truth.clone().unwrap();
            gt.sort_by(|a, b| a.start.total_cmp(&b.start));
            assert_eq!(ps.len(), gt.len());
            for (p, g) in ps.iter().zip(&gt) {
                assert_eq!((p.start, p.end, p.label, p.confidence), (g.start, g.end, g.label, 1.0));
            }
        }
    }

    #[test]
    fn drop_all_and_validity() {
        let data = gen_dataset(&small()).unwrap();
        let drop = ProposalNoise {
            drop_rate: 1.0,
            ..Default::default()
        };
        let heavy = ProposalNoise {
            jitter: 20.0,
            duplicate_rate: 1.0,
            merge_rate: 1.0,
            ..Default::default()
        };
        for (i, v) in data.iter().enumerate() {
            let gt = v.ground_truth.as_ref().unwrap();
            assert!(perturb_to_noisy_proposals(gt, v.length, &drop, 1, i as u64).is_empty());
            for p in perturb_to_noisy_proposals(gt, v.length, &heavy, 1, i as u64) {
                assert!(0.0 <= p.start && p.start < p.end && p.end <= v.length as f64);
                assert!((0.0..=1.0).contains(&p.confidence));
            }
        }
    }
}

//! Forward-only multi-scale temporal transformer.
//!
//! A two-layer convolutional stem embeds snippet features; one transformer
//! block per pyramid level (windowed attention + GELU MLP, both
//! pre-normalized and residual) runs with a strided depthwise downsampling
//! between consecutive levels; a decoder shared by every level maps
//! features to `C + 1` sigmoid scores.

mod archive;
mod attention;
mod layers;

pub use archive::{export_weights, import_weights, load_archive, save_archive, TensorEntry, WeightManifest};
pub use attention::{
    dense_attention, windowed_attention, windowed_attention_with_weights, AttentionWeights,
    WindowWeights,
};
pub use layers::{gelu, relu, Conv1d, DepthwiseDownsample, LayerNorm, Linear};

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LogitTable;
use crate::types::{Pyramid, ScoreSequence};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub input_dim: usize,
    pub model_dim: usize,
    pub qk_dim: usize,
    pub value_dim: usize,
    pub heads: usize,
    pub window: usize,
    pub sigma: usize,
    pub levels: usize,
    pub mlp_ratio: f64,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            input_dim: 32,
            model_dim: 64,
            qk_dim: 64,
            value_dim: 64,
            heads: 4,
            window: 19,
            sigma: 2,
            levels: 4,
            mlp_ratio: 4.0,
            num_classes: 3,
            seed: 0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("backbone: {m}")));
        if self.window == 0 || self.window.is_multiple_of(2) {
            return fail(format!("window must be odd and >= 1, got {}", self.window));
        }
        if self.sigma < 2 {
            return fail(format!("sigma must be >= 2, got {}", self.sigma));
        }
        if self.levels < 1 {
            return fail("levels must be >= 1".into());
        }
        if self.heads == 0 {
            return fail("heads must be >= 1".into());
        }
        for (name, d) in [
            ("model_dim", self.model_dim),
            ("qk_dim", self.qk_dim),
            ("value_dim", self.value_dim),
        ] {
            if d == 0 || d % self.heads != 0 {
                return fail(format!("{name} = {d} is not a positive multiple of heads = {}", self.heads));
            }
        }
        if self.input_dim == 0 || self.num_classes == 0 {
            return fail("input_dim and num_classes must be >= 1".into());
        }
        if self.mlp_ratio.is_nan() || self.mlp_ratio <= 0.0 || self.hidden_dim() == 0 {
            return fail(format!("mlp_ratio must give a positive hidden width, got {}", self.mlp_ratio));
        }
        Ok(())
    }

    pub fn hidden_dim(&self) -> usize {
        (self.mlp_ratio * self.model_dim as f64).round() as usize
    }

    pub fn pyramid(&self) -> Pyramid {
        Pyramid {
            sigma: self.sigma,
            levels: self.levels,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub attn_norm: LayerNorm,
    pub attention: AttentionWeights,
    pub mlp_norm: LayerNorm,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights {
    pub conv: Conv1d,
    pub norm: LayerNorm,
    pub head: Conv1d,
}

/// Callback receiving a tensor's name, shape and row-major data.
pub type TensorVisitor<'a> = dyn FnMut(&str, &[usize], &mut [f64]) + 'a;

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneWeights {
    pub stem: [(Conv1d, LayerNorm); 2],
    /// One per level, `levels + 1` in total.
    pub blocks: Vec<BlockWeights>,
    /// Between consecutive levels, `levels` in total.
    pub downsample: Vec<DepthwiseDownsample>,
    pub decoder: DecoderWeights,
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, rounded through `f32` so
/// that exported archives are exact.
struct Init(ChaCha8Rng);

impl Init {
    fn uniform(&mut self, fan_in: usize) -> f64 {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        (self.0.random_range(-bound..bound) as f32) as f64
    }

    fn mat(&mut self, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || self.uniform(fan_in))
    }

    fn conv(&mut self, out: usize, inp: usize, k: usize) -> Conv1d {
        Conv1d {
            weight: Array3::from_shape_simple_fn((out, inp, k), || self.uniform(inp * k)),
            bias: Array1::zeros(out),
        }
    }

    fn linear(&mut self, inp: usize, out: usize) -> Linear {
        Linear {
            weight: self.mat(inp, out, inp),
            bias: Array1::zeros(out),
        }
    }
}

impl BackboneWeights {
    pub fn init(config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut r = Init(ChaCha8Rng::seed_from_u64(config.seed));
        let d = config.model_dim;
        let stem = [
            (r.conv(d, config.input_dim, 3), LayerNorm::identity(d)),
            (r.conv(d, d, 3), LayerNorm::identity(d)),
        ];
        let blocks = (0..=config.levels)
            .map(|_| BlockWeights {
                attn_norm: LayerNorm::identity(d),
                attention: AttentionWeights {
                    query: r.mat(d, config.qk_dim, d),
                    key: r.mat(d, config.qk_dim, d),
                    value: r.mat(d, config.value_dim, d),
                    output: r.linear(config.value_dim, d),
                },
                mlp_norm: LayerNorm::identity(d),
                mlp_in: r.linear(d, config.hidden_dim()),
                mlp_out: r.linear(config.hidden_dim(), d),
            })
            .collect();
        let downsample = (0..config.levels)
            .map(|_| DepthwiseDownsample {
                kernel: r.mat(d, 3, 3),
                bias: Array1::zeros(d),
            })
            .collect();
        let decoder = DecoderWeights {
            conv: r.conv(d, d, 3),
            norm: LayerNorm::identity(d),
            head: r.conv(config.num_classes + 1, d, 3),
        };
        Ok(Self {
            stem,
            blocks,
            downsample,
            decoder,
        })
    }

    /// Visits every tensor in a fixed order with its name and shape.
    pub fn visit_mut(&mut self, f: &mut TensorVisitor<'_>) {
        fn visit<D: ndarray::Dimension>(
            f: &mut TensorVisitor<'_>,
            name: &str,
            a: &mut ndarray::Array<f64, D>,
        ) {
            let shape = a.shape().to_vec();
            f(name, &shape, a.as_slice_mut().expect("standard layout"));
        }
        for (i, (conv, norm)) in self.stem.iter_mut().enumerate() {
            visit(f, &format!("stem.{i}.conv.weight"), &mut conv.weight);
            visit(f, &format!("stem.{i}.conv.bias"), &mut conv.bias);
            visit(f, &format!("stem.{i}.norm.gamma"), &mut norm.gamma);
            visit(f, &format!("stem.{i}.norm.beta"), &mut norm.beta);
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = format!("blocks.{i}");
            visit(f, &format!("{p}.attn_norm.gamma"), &mut b.attn_norm.gamma);
            visit(f, &format!("{p}.attn_norm.beta"), &mut b.attn_norm.beta);
            visit(f, &format!("{p}.attn.query"), &mut b.attention.query);
            visit(f, &format!("{p}.attn.key"), &mut b.attention.key);
            visit(f, &format!("{p}.attn.value"), &mut b.attention.value);
            visit(f, &format!("{p}.attn.output.weight"), &mut b.attention.output.weight);
            visit(f, &format!("{p}.attn.output.bias"), &mut b.attention.output.bias);
            visit(f, &format!("{p}.mlp_norm.gamma"), &mut b.mlp_norm.gamma);
            visit(f, &format!("{p}.mlp_norm.beta"), &mut b.mlp_norm.beta);
            visit(f, &format!("{p}.mlp_in.weight"), &mut b.mlp_in.weight);
            visit(f, &format!("{p}.mlp_in.bias"), &mut b.mlp_in.bias);
            visit(f, &format!("{p}.mlp_out.weight"), &mut b.mlp_out.weight);
            visit(f, &format!("{p}.mlp_out.bias"), &mut b.mlp_out.bias);
        }
        for (i, d) in self.downsample.iter_mut().enumerate() {
            visit(f, &format!("downsample.{i}.kernel"), &mut d.kernel);
            visit(f, &format!("downsample.{i}.bias"), &mut d.bias);
        }
        let dec = &mut self.decoder;
        visit(f, "decoder.conv.weight", &mut dec.conv.weight);
        visit(f, "decoder.conv.bias", &mut dec.conv.bias);
        visit(f, "decoder.norm.gamma", &mut dec.norm.gamma);
        visit(f, "decoder.norm.beta", &mut dec.norm.beta);
        visit(f, "decoder.head.weight", &mut dec.head.weight);
        visit(f, "decoder.head.bias", &mut dec.head.bias);
    }
}

/// Feature pyramid `Z^0 .. Z^L`.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidFeatures {
    pub levels: Vec<Array2<f64>>,
}

/// Convolutional stem: two kernel-3 convolutions, each followed by layer
/// normalization and ReLU.
pub fn embed(features: &Array2<f64>, weights: &BackboneWeights) -> Result<Array2<f64>> {
    let expected = weights.stem[0].0.in_channels();
    if features.ncols() != expected {
        return Err(Error::Shape(format!(
            "features have width {}, stem expects {expected}",
            features.ncols()
        )));
    }
    if features.nrows() == 0 {
        return Err(Error::Shape("empty feature sequence".into()));
    }
    let mut x = features.clone();
    for (conv, norm) in &weights.stem {
        x = relu(norm.forward(&conv.forward(&x)));
    }
    Ok(x)
}

/// Pre-normalized residual attention followed by a pre-normalized residual
/// GELU MLP.
pub fn transformer_block(
    z: &Array2<f64>,
    block: &BlockWeights,
    window: usize,
    heads: usize,
) -> Array2<f64> {
    let x = z + &windowed_attention(&block.attn_norm.forward(z), &block.attention, window, heads);
    let hidden = gelu(block.mlp_in.forward(&block.mlp_norm.forward(&x)));
    &x + &block.mlp_out.forward(&hidden)
}

pub fn downsample(z: &Array2<f64>, weights: &DepthwiseDownsample, sigma: usize) -> Array2<f64> {
    weights.forward(z, sigma)
}

/// Shared decoder; returns pre-sigmoid logits.
pub fn decode_logits(z: &Array2<f64>, decoder: &DecoderWeights) -> Array2<f64> {
    let h = relu(decoder.norm.forward(&decoder.conv.forward(z)));
    decoder.head.forward(&h)
}

/// Runs the whole network and returns the feature pyramid together with
/// the decoder logits and scores of every level.
pub fn forward_pyramid(
    features: &Array2<f64>,
    weights: &BackboneWeights,
    config: &BackboneConfig,
) -> Result<(PyramidFeatures, LogitTable, Vec<ScoreSequence>)> {
    config.validate()?;
    if weights.blocks.len() != config.levels + 1 || weights.downsample.len() != config.levels {
        return Err(Error::Shape(format!(
            "weights hold {} blocks and {} downsamplers for {} levels",
            weights.blocks.len(),
            weights.downsample.len(),
            config.levels
        )));
    }
    let mut z = embed(features, weights)?;
    let mut levels = Vec::with_capacity(config.levels + 1);
    for (l, block) in weights.blocks.iter().enumerate() {
        if l > 0 {
            z = downsample(&z, &weights.downsample[l - 1], config.sigma);
        }
        z = transformer_block(&z, block, config.window, config.heads);
        levels.push(z.clone());
    }
    let logits = LogitTable {
        levels: levels.iter().map(|z| decode_logits(z, &weights.decoder)).collect(),
    };
    let scores = logits.scores();
    Ok((PyramidFeatures { levels }, logits, scores))
}

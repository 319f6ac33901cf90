use ndarray::{s, Array1, Array2, Array3, Axis};

/// 1-D convolution over time, `weight: [out, in, k]`, zero padding that
/// preserves length for odd `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
}

impl Conv1d {
    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    /// `x: T x in` to `T x out`.
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let t = x.nrows();
        let k = self.weight.shape()[2];
        let half = (k / 2) as isize;
        let mut out = Array2::zeros((t, self.out_channels()));
        out += &self.bias;
        for tap in 0..k {
            let w = self.weight.slice(s![.., .., tap]);
            let shift = tap as isize - half;
            let lo = (-shift).max(0) as usize;
            let hi = ((t as isize) - shift).min(t as isize).max(0) as usize;
            if lo >= hi {
                continue;
            }
            let src = x.slice(s![(lo as isize + shift) as usize..(hi as isize + shift) as usize, ..]);
            let mut dst = out.slice_mut(s![lo..hi, ..]);
            dst += &src.dot(&w.t());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in x out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

/// Normalization over channels at each time step.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn identity(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
        }
        out * &self.gamma + &self.beta
    }
}

/// Per-channel kernel-3 convolution with stride `sigma` and zero padding 1;
/// output length `ceil(T / sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseDownsample {
    /// `channels x 3`
    pub kernel: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DepthwiseDownsample {
    pub fn forward(&self, x: &Array2<f64>, sigma: usize) -> Array2<f64> {
        let t = x.nrows();
        let out_len = t.div_ceil(sigma);
        let mut out = Array2::zeros((out_len, x.ncols()));
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let center = (i * sigma) as isize;
            row.assign(&self.bias);
            for tap in 0..3 {
                let src = center + tap as isize - 1;
                if src < 0 || src >= t as isize {
                    continue;
                }
                let k = self.kernel.column(tap);
                row.zip_mut_with(&(&x.row(src as usize) * &k), |o, v| *o += v);
            }
        }
        out
    }
}

pub fn relu(x: Array2<f64>) -> Array2<f64> {
    x.mapv_into(|v| v.max(0.0))
}

/// Tanh approximation of GELU.
pub fn gelu(x: Array2<f64>) -> Array2<f64> {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    x.mapv_into(|v| 0.5 * v * (1.0 + (C * (v + 0.044_715 * v * v * v)).tanh()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn conv_matches_direct_sum() {
        let weight = Array3::from_shape_fn((2, 3, 3), |(o, i, k)| (o * 9 + i * 3 + k) as f64 * 0.1 - 0.7);
        let conv = Conv1d {
            weight,
            bias: array![0.5, -0.25],
        };
        let x = Array2::from_shape_fn((5, 3), |(t, i)| ((t * 3 + i) as f64).sin());
        let y = conv.forward(&x);
        for t in 0..5 {
            for o in 0..2 {
                let mut acc = conv.bias[o];
                for k in 0..3 {
                    let src = t as isize + k as isize - 1;
                    if (0..5).contains(&src) {
                        for i in 0..3 {
                            acc += conv.weight[[o, i, k]] * x[[src as usize, i]];
                        }
                    }
                }
                assert!((y[[t, o]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn downsample_lengths() {
        let d = DepthwiseDownsample {
            kernel: array![[0.0, 1.0, 0.0]],
            bias: array![0.0],
        };
        let x10 = Array2::from_shape_fn((10, 1), |(t, _)| t as f64);
        let x9 = Array2::from_shape_fn((9, 1), |(t, _)| t as f64);
        assert_eq!(d.forward(&x10, 2).nrows(), 5);
        assert_eq!(d.forward(&x9, 2).nrows(), 5);
        // centre tap only: plain strided subsampling
        assert_eq!(d.forward(&x10, 2).column(0).to_vec(), vec![0.0, 2.0, 4.0, 6.0, 8.0]);
        assert_eq!(d.forward(&x10, 3).column(0).to_vec(), vec![0.0, 3.0, 6.0, 9.0]);
    }

    #[test]
    fn layer_norm_zero_row_stays_zero() {
        let ln = LayerNorm::identity(4);
        let y = ln.forward(&Array2::zeros((3, 4)));
        assert!(y.iter().all(|&v| v == 0.0));
        let y = ln.forward(&array![[1.0, 2.0, 3.0, 4.0]]);
        assert!(y.sum().abs() < 1e-12);
    }
}

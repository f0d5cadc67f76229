//! Parameterized layers shared across the network: affine maps, frame-wise
//! layer normalization, PReLU and the convolution wrappers.
//!
//! Each layer registers its tensors under stable dotted names via
//! [`collect_params`]; those names are the checkpoint contract.

use crate::tensor::{self, Tensor, TimePad};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const LN_EPS: f64 = 1e-5;

/// Ordered list of named parameter tensors.
pub type ParamList = Vec<(String, Tensor)>;

fn uniform_init(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Fully connected layer, `y = x W^T + b`, applied over the last dimension.
pub struct Linear {
    pub w: Tensor,
    pub b: Option<Tensor>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize, bias: bool) -> Linear {
        let bound = (1.0 / in_dim as f64).sqrt();
        Linear {
            w: Tensor::param(uniform_init(rng, out_dim * in_dim, bound), &[out_dim, in_dim]),
            b: bias.then(|| Tensor::param(uniform_init(rng, out_dim, bound), &[out_dim])),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        tensor::linear(x, &self.w, self.b.as_ref())
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        if let Some(b) = &self.b {
            out.push((format!("{prefix}.b"), b.clone()));
        }
    }

    pub fn param_count(in_dim: usize, out_dim: usize, bias: bool) -> usize {
        out_dim * in_dim + if bias { out_dim } else { 0 }
    }
}

/// Layer normalization over the feature vector of a single frame (never over
/// time, which would break causality).
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(dim: usize) -> LayerNorm {
        LayerNorm {
            gamma: Tensor::param(vec![1.0; dim], &[dim]),
            beta: Tensor::param(vec![0.0; dim], &[dim]),
            dim,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        tensor::layer_norm(x, &self.gamma, &self.beta, LN_EPS)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }

    pub fn param_count(dim: usize) -> usize {
        2 * dim
    }
}

/// PReLU with a learnable slope per channel.
pub struct PRelu {
    pub alpha: Tensor,
    pub dim: usize,
}

impl PRelu {
    pub fn new(dim: usize) -> PRelu {
        PRelu { alpha: Tensor::param(vec![0.25; dim], &[dim]), dim }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        tensor::prelu(x, &self.alpha)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        out.push((format!("{prefix}.alpha"), self.alpha.clone()));
    }

    pub fn param_count(dim: usize) -> usize {
        dim
    }
}

/// 2-D convolution over (band, time); symmetric along bands, configurable
/// padding along time.
pub struct Conv2dBt {
    pub w: Tensor,
    pub b: Tensor,
    pub pad: TimePad,
}

impl Conv2dBt {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_ch: usize,
        out_ch: usize,
        kb: usize,
        kt: usize,
    ) -> Conv2dBt {
        let fan_in = in_ch * kb * kt;
        let bound = (1.0 / fan_in as f64).sqrt();
        Conv2dBt {
            w: Tensor::param(uniform_init(rng, out_ch * fan_in, bound), &[out_ch, in_ch, kb, kt]),
            b: Tensor::param(uniform_init(rng, out_ch, bound), &[out_ch]),
            pad: TimePad::Causal,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        tensor::conv2d_bt(x, &self.w, &self.b, self.pad)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }

    pub fn param_count(in_ch: usize, out_ch: usize, kb: usize, kt: usize) -> usize {
        out_ch * in_ch * kb * kt + out_ch
    }
}

/// Dilated 1-D convolution along the time axis.
pub struct Conv1dTime {
    pub w: Tensor,
    pub b: Tensor,
    pub dilation: usize,
    pub pad: TimePad,
}

impl Conv1dTime {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        dilation: usize,
    ) -> Conv1dTime {
        let fan_in = in_ch * k;
        let bound = (1.0 / fan_in as f64).sqrt();
        Conv1dTime {
            w: Tensor::param(uniform_init(rng, out_ch * fan_in, bound), &[out_ch, in_ch, k]),
            b: Tensor::param(uniform_init(rng, out_ch, bound), &[out_ch]),
            dilation,
            pad: TimePad::Causal,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        tensor::conv1d_time(x, &self.w, &self.b, self.dilation, self.pad)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }

    pub fn param_count(in_ch: usize, out_ch: usize, k: usize) -> usize {
        out_ch * in_ch * k + out_ch
    }
}

/// Depthwise causal convolution along the sequence axis of `[B, L, D]`.
pub struct DepthwiseConv1d {
    pub w: Tensor,
    pub b: Tensor,
}

impl DepthwiseConv1d {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, k: usize) -> DepthwiseConv1d {
        let bound = (1.0 / k as f64).sqrt();
        DepthwiseConv1d {
            w: Tensor::param(uniform_init(rng, dim * k, bound), &[dim, k]),
            b: Tensor::param(uniform_init(rng, dim, bound), &[dim]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        tensor::dwconv1d_causal(x, &self.w, &self.b)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }

    pub fn param_count(dim: usize, k: usize) -> usize {
        dim * k + dim
    }
}

/// Gated linear unit over the last dimension: the first half is the value
/// path, the second half is the sigmoid gate.
pub fn glu(x: &Tensor) -> Tensor {
    let w = *x.shape().last().expect("glu: rank >= 1");
    assert_eq!(w % 2, 0, "glu: last dimension must be even, got {w}");
    let value = tensor::slice_last(x, 0, w / 2);
    let gate = tensor::slice_last(x, w / 2, w);
    tensor::mul(&value, &tensor::sigmoid(&gate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn glu_halves_width_and_gates() {
        // Value half 1, gate half 0 -> sigmoid(0) = 0.5.
        let x = Tensor::new(vec![1.0, 1.0, 0.0, 0.0], &[1, 4]);
        let y = glu(&x);
        assert_eq!(y.shape(), &[1, 2]);
        assert!((y.data()[0] - 0.5).abs() < 1e-12);
        assert!((y.data()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn glu_matches_elementwise_definition() {
        let vals: Vec<f64> = (0..12).map(|i| (i as f64 - 6.0) * 0.3).collect();
        let x = Tensor::new(vals.clone(), &[2, 6]);
        let y = glu(&x);
        for r in 0..2 {
            for i in 0..3 {
                let v = vals[r * 6 + i];
                let g = vals[r * 6 + 3 + i];
                let expect = v * (1.0 / (1.0 + (-g).exp()));
                assert!((y.data()[r * 3 + i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_param_count_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = Linear::new(&mut rng, 7, 5, true);
        let mut params = ParamList::new();
        l.collect_params("l", &mut params);
        let total: usize = params.iter().map(|(_, t)| t.len()).sum();
        assert_eq!(total, Linear::param_count(7, 5, true));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        let la = Linear::new(&mut a, 4, 4, true);
        let lb = Linear::new(&mut b, 4, 4, true);
        assert_eq!(la.w.to_vec(), lb.w.to_vec());
    }
}

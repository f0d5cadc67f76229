//! Cross-branch interaction: the companion branch's features are gated by a
//! learned sigmoid mask and added onto the host branch.
//!
//! The gate is a 1x1 convolution over channels (no band or time context), so
//! the exchange is both causal and band-local, and a zero companion leaves
//! the host bit-for-bit unchanged.

use crate::error::{Error, Result};
use crate::layers::{Linear, LayerNorm, ParamList};
use crate::tensor::{self, Tensor};
use rand_chacha::ChaCha8Rng;

pub struct Interaction {
    conv: Linear,
    norm: LayerNorm,
    pub dim: usize,
}

impl Interaction {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize) -> Interaction {
        Interaction { conv: Linear::new(rng, 2 * dim, dim, true), norm: LayerNorm::new(dim), dim }
    }

    /// `host + companion * sigmoid(LN(conv(cat(host, companion))))`.
    pub fn forward(&self, host: &Tensor, companion: &Tensor) -> Result<Tensor> {
        if host.shape() != companion.shape() {
            return Err(Error::ShapeMismatch(format!(
                "interact: host {:?} vs companion {:?}",
                host.shape(),
                companion.shape()
            )));
        }
        if host.shape().last() != Some(&self.dim) {
            return Err(Error::ShapeMismatch(format!(
                "interact: channel width {:?} != {}",
                host.shape().last(),
                self.dim
            )));
        }
        let mask = self.mask(host, companion);
        Ok(tensor::add(host, &tensor::mul(companion, &mask)))
    }

    /// The sigmoid gate alone; entries lie strictly inside (0, 1).
    pub fn mask(&self, host: &Tensor, companion: &Tensor) -> Tensor {
        let cat = tensor::concat_last(&[host.clone(), companion.clone()]);
        tensor::sigmoid(&self.norm.forward(&self.conv.forward(&cat)))
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        self.conv.collect_params(&format!("{prefix}.conv"), out);
        self.norm.collect_params(&format!("{prefix}.norm"), out);
    }

    pub fn param_count(dim: usize) -> usize {
        Linear::param_count(2 * dim, dim, true) + LayerNorm::param_count(dim)
    }
}

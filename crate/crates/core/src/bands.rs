//! Band-split embedding and mask decoding.
//!
//! The frequency axis is partitioned into non-overlapping bands; each band is
//! independently normalized and projected to a fixed embedding width, and on
//! the way out each band embedding is decoded back to per-bin mask values.
//! No parameters are shared across bands.

use crate::error::{Error, Result};
use crate::layers::{glu, Linear, ParamList};
use crate::tensor::{self, Tensor};
use rand_chacha::ChaCha8Rng;

/// Ordered band widths partitioning the frequency axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandLayout {
    pub widths: Vec<usize>,
}

impl BandLayout {
    pub fn k(&self) -> usize {
        self.widths.len()
    }

    pub fn total_bins(&self) -> usize {
        self.widths.iter().sum()
    }

    /// Start bin of band `i`.
    pub fn offset(&self, i: usize) -> usize {
        self.widths[..i].iter().sum()
    }
}

pub const BAND_SCHEMES: &[&str] = &["uniform8", "uniform16", "coarse3", "fullband"];

/// Builds a deterministic band layout for `f` bins under a named scheme.
///
/// `uniform8` is the default fine-grained layout (width-8 bands plus the
/// remainder); `coarse3` splits the axis into three roughly equal bands and
/// is what the named complexity configurations use; `fullband` is the
/// degenerate single band.
pub fn make_band_layout(f: usize, scheme: &str) -> Result<BandLayout> {
    if f != crate::dsp::NUM_BINS {
        return Err(Error::InvalidArgument(format!(
            "band layouts are defined for {} bins, got {f}",
            crate::dsp::NUM_BINS
        )));
    }
    let widths = match scheme {
        "uniform8" => uniform(f, 8),
        "uniform16" => uniform(f, 16),
        "coarse3" => {
            let base = f / 3;
            vec![base + f % 3, base, base]
        }
        "fullband" => vec![f],
        _ => {
            return Err(Error::UnknownScheme {
                name: scheme.to_string(),
                valid: BAND_SCHEMES.join(", "),
            })
        }
    };
    debug_assert_eq!(widths.iter().sum::<usize>(), f);
    Ok(BandLayout { widths })
}

fn uniform(f: usize, w: usize) -> Vec<usize> {
    let mut widths = vec![w; f / w];
    if f % w != 0 {
        widths.push(f % w);
    }
    widths
}

/// Per-band normalization plus projection into the embedding space.
pub struct BandSplit {
    pub layout: BandLayout,
    pub c_in: usize,
    pub embed_dim: usize,
    norms: Vec<crate::layers::LayerNorm>,
    projs: Vec<Linear>,
}

impl BandSplit {
    pub fn new(rng: &mut ChaCha8Rng, layout: BandLayout, c_in: usize, embed_dim: usize) -> BandSplit {
        let norms = layout
            .widths
            .iter()
            .map(|&w| crate::layers::LayerNorm::new(w * c_in))
            .collect();
        let projs = layout
            .widths
            .iter()
            .map(|&w| Linear::new(rng, w * c_in, embed_dim, true))
            .collect();
        BandSplit { layout, c_in, embed_dim, norms, projs }
    }

    /// `features` is `[T, F*C_in]` with the channel innermost; returns
    /// `[K, T, N]`.
    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let shape = features.shape();
        if shape.len() != 2 || shape[1] != self.layout.total_bins() * self.c_in {
            return Err(Error::ShapeMismatch(format!(
                "band_split: expected [T, {}], got {:?}",
                self.layout.total_bins() * self.c_in,
                shape
            )));
        }
        let mut rows = Vec::with_capacity(self.layout.k());
        for (i, &w) in self.layout.widths.iter().enumerate() {
            let start = self.layout.offset(i) * self.c_in;
            let slab = tensor::slice_last(features, start, start + w * self.c_in);
            let normed = self.norms[i].forward(&slab);
            rows.push(self.projs[i].forward(&normed));
        }
        Ok(tensor::stack0(&rows))
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        for i in 0..self.layout.k() {
            self.norms[i].collect_params(&format!("{prefix}.band{i}.norm"), out);
            self.projs[i].collect_params(&format!("{prefix}.band{i}.proj"), out);
        }
    }

    pub fn param_count(layout: &BandLayout, c_in: usize, embed_dim: usize) -> usize {
        layout
            .widths
            .iter()
            .map(|&w| {
                crate::layers::LayerNorm::param_count(w * c_in)
                    + Linear::param_count(w * c_in, embed_dim, true)
            })
            .sum()
    }
}

/// Per-band decoder: LN -> FC -> Tanh -> FC -> GLU, concatenated back along
/// the frequency axis in layout order.
pub struct MaskDecoder {
    pub layout: BandLayout,
    pub c_out: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    norms: Vec<crate::layers::LayerNorm>,
    fc_hidden: Vec<Linear>,
    fc_out: Vec<Linear>,
}

impl MaskDecoder {
    pub fn new(
        rng: &mut ChaCha8Rng,
        layout: BandLayout,
        embed_dim: usize,
        hidden: usize,
        c_out: usize,
    ) -> MaskDecoder {
        let norms = layout.widths.iter().map(|_| crate::layers::LayerNorm::new(embed_dim)).collect();
        let fc_hidden = layout.widths.iter().map(|_| Linear::new(rng, embed_dim, hidden, true)).collect();
        // GLU halves the output width, so the last linear doubles it.
        let fc_out = layout
            .widths
            .iter()
            .map(|&w| Linear::new(rng, hidden, 2 * w * c_out, true))
            .collect();
        MaskDecoder { layout, c_out, embed_dim, hidden, norms, fc_hidden, fc_out }
    }

    /// `features` is `[K, T, N]`; returns `[T, F*C_out]` with channel
    /// innermost.
    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let shape = features.shape();
        if shape.len() != 3 || shape[0] != self.layout.k() || shape[2] != self.embed_dim {
            return Err(Error::ShapeMismatch(format!(
                "mask_decode: expected [{}, T, {}], got {:?}",
                self.layout.k(),
                self.embed_dim,
                shape
            )));
        }
        let mut bands = Vec::with_capacity(self.layout.k());
        for i in 0..self.layout.k() {
            let row = tensor::index_axis0(features, i); // [T, N]
            let h = tensor::tanh(&self.fc_hidden[i].forward(&self.norms[i].forward(&row)));
            bands.push(glu(&self.fc_out[i].forward(&h))); // [T, w*c_out]
        }
        Ok(tensor::concat_last(&bands))
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        for i in 0..self.layout.k() {
            self.norms[i].collect_params(&format!("{prefix}.band{i}.norm"), out);
            self.fc_hidden[i].collect_params(&format!("{prefix}.band{i}.hidden"), out);
            self.fc_out[i].collect_params(&format!("{prefix}.band{i}.out"), out);
        }
    }

    pub fn param_count(layout: &BandLayout, embed_dim: usize, hidden: usize, c_out: usize) -> usize {
        layout
            .widths
            .iter()
            .map(|&w| {
                crate::layers::LayerNorm::param_count(embed_dim)
                    + Linear::param_count(embed_dim, hidden, true)
                    + Linear::param_count(hidden, 2 * w * c_out, true)
            })
            .sum()
    }
}

//! The full dual-branch network: magnitude and complex branches with shared
//! band layout, cross-branch interaction at every block, gated magnitude
//! head, two-path complex head, sum fusion and a shared mask decoder that
//! emits a 2-channel complex ratio mask applied in the compressed domain.

use crate::bands::{make_band_layout, BandLayout, BandSplit, MaskDecoder};
use crate::dsp::{decouple, ComplexSpectrogram, NUM_BINS};
use crate::error::{Error, Result};
use crate::interact::Interaction;
use crate::layers::{Conv1dTime, Conv2dBt, LayerNorm, PRelu, ParamList};
use crate::mamba::TfMambaBlock;
use crate::tensor::{self, Tensor, TimePad};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const NAMED_CONFIGS: &[&str] = &["64-4", "64-6", "128-4", "128-6", "256-2", "256-4", "256-6"];

/// Everything that determines the network's structure, parameter count and
/// MAC budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Band embedding width N.
    pub embed_dim: usize,
    /// Number of stacked time-frequency blocks per branch.
    pub depth: usize,
    /// Band layout scheme name (see [`crate::bands::make_band_layout`]).
    pub band_scheme: String,
    /// SSM state size per channel.
    #[serde(default = "default_d_state")]
    pub d_state: usize,
    /// Inner-width multiplier of each sequence-modeling unit.
    #[serde(default = "default_expansion")]
    pub expansion: usize,
    /// Depthwise causal convolution kernel inside each unit.
    #[serde(default = "default_conv_kernel")]
    pub conv_kernel: usize,
    /// Encoder convolution kernel over the band axis (odd).
    #[serde(default = "default_encoder_kb")]
    pub encoder_kernel_bands: usize,
    /// Encoder convolution kernel over the time axis (causal).
    #[serde(default = "default_encoder_kt")]
    pub encoder_kernel_time: usize,
    /// Kernel of each convolution in the dilated blocks.
    #[serde(default = "default_dilated_kernel")]
    pub dilated_kernel: usize,
    /// Dilation schedule of the dilated blocks.
    #[serde(default = "default_dilations")]
    pub dilations: Vec<usize>,
    /// Mask-decoder hidden width as a multiple of `embed_dim`.
    #[serde(default = "default_decoder_hidden_mult")]
    pub decoder_hidden_mult: usize,
    /// Mask channels (2 = complex ratio mask).
    #[serde(default = "default_out_channels")]
    pub out_channels: usize,
    /// Magnitude compression exponent the network operates under.
    #[serde(default = "default_compression")]
    pub compression_exponent: f64,
}

fn default_d_state() -> usize {
    16
}
fn default_expansion() -> usize {
    2
}
fn default_conv_kernel() -> usize {
    4
}
fn default_encoder_kb() -> usize {
    3
}
fn default_encoder_kt() -> usize {
    2
}
fn default_dilated_kernel() -> usize {
    3
}
fn default_dilations() -> Vec<usize> {
    vec![1, 2]
}
fn default_decoder_hidden_mult() -> usize {
    16
}
fn default_out_channels() -> usize {
    2
}
fn default_compression() -> f64 {
    0.5
}

impl ModelConfig {
    /// Custom config with all secondary knobs at their defaults.
    pub fn new(embed_dim: usize, depth: usize, band_scheme: &str) -> ModelConfig {
        ModelConfig {
            embed_dim,
            depth,
            band_scheme: band_scheme.to_string(),
            d_state: default_d_state(),
            expansion: default_expansion(),
            conv_kernel: default_conv_kernel(),
            encoder_kernel_bands: default_encoder_kb(),
            encoder_kernel_time: default_encoder_kt(),
            dilated_kernel: default_dilated_kernel(),
            dilations: default_dilations(),
            decoder_hidden_mult: default_decoder_hidden_mult(),
            out_channels: default_out_channels(),
            compression_exponent: default_compression(),
        }
    }

    /// One of the seven named width-depth configurations ("64-4" ... "256-6").
    pub fn named(name: &str) -> Result<ModelConfig> {
        let (n, l) = match name {
            "64-4" => (64, 4),
            "64-6" => (64, 6),
            "128-4" => (128, 4),
            "128-6" => (128, 6),
            "256-2" => (256, 2),
            "256-4" => (256, 4),
            "256-6" => (256, 6),
            _ => {
                return Err(Error::UnknownConfig {
                    name: name.to_string(),
                    valid: NAMED_CONFIGS.join(", "),
                })
            }
        };
        Ok(ModelConfig::new(n, l, "coarse3"))
    }

    /// Tiny configuration for tests and desk-scale training experiments.
    pub fn micro() -> ModelConfig {
        ModelConfig::new(8, 1, "fullband")
    }

    pub fn layout(&self) -> Result<BandLayout> {
        make_band_layout(NUM_BINS, &self.band_scheme)
    }

    pub fn decoder_hidden(&self) -> usize {
        self.decoder_hidden_mult * self.embed_dim
    }
}

/// Branch encoder: interaction, then a causal 2-D convolution over
/// (band, time) that preserves both the band count and channel width.
struct Encoder {
    inter: Interaction,
    conv: Conv2dBt,
    norm: LayerNorm,
    act: PRelu,
}

impl Encoder {
    fn new(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Encoder {
        let n = cfg.embed_dim;
        Encoder {
            inter: Interaction::new(rng, n),
            conv: Conv2dBt::new(rng, n, n, cfg.encoder_kernel_bands, cfg.encoder_kernel_time),
            norm: LayerNorm::new(n),
            act: PRelu::new(n),
        }
    }

    fn forward(&self, own: &Tensor, other: &Tensor) -> Result<Tensor> {
        let x = self.inter.forward(own, other)?;
        Ok(self.act.forward(&self.norm.forward(&self.conv.forward(&x))))
    }

    fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        self.inter.collect_params(&format!("{prefix}.inter"), out);
        self.conv.collect_params(&format!("{prefix}.conv"), out);
        self.norm.collect_params(&format!("{prefix}.norm"), out);
        self.act.collect_params(&format!("{prefix}.act"), out);
    }

    fn param_count(cfg: &ModelConfig) -> usize {
        let n = cfg.embed_dim;
        Interaction::param_count(n)
            + Conv2dBt::param_count(n, n, cfg.encoder_kernel_bands, cfg.encoder_kernel_time)
            + LayerNorm::param_count(n)
            + PRelu::param_count(n)
    }
}

/// Two stacked channel-preserving causal convolutions along time with an
/// increasing dilation schedule; enlarges the temporal receptive field.
struct DilatedBlock {
    convs: Vec<Conv1dTime>,
}

impl DilatedBlock {
    fn new(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> DilatedBlock {
        let n = cfg.embed_dim;
        DilatedBlock {
            convs: cfg
                .dilations
                .iter()
                .map(|&d| Conv1dTime::new(rng, n, n, cfg.dilated_kernel, d))
                .collect(),
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for conv in &self.convs {
            out = conv.forward(&out);
        }
        out
    }

    fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        for (i, conv) in self.convs.iter().enumerate() {
            conv.collect_params(&format!("{prefix}.conv{i}"), out);
        }
    }

    fn param_count(cfg: &ModelConfig) -> usize {
        let n = cfg.embed_dim;
        cfg.dilations.len() * Conv1dTime::param_count(n, n, cfg.dilated_kernel)
    }
}

/// Magnitude head: dilated block, norm, PReLU, then a sigmoid/tanh gate pair
/// whose product multiplies the band-split magnitude embedding.
struct MenHead {
    dconv: DilatedBlock,
    norm: LayerNorm,
    act: PRelu,
    gate_sig: crate::layers::Linear,
    gate_tanh: crate::layers::Linear,
}

impl MenHead {
    fn new(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> MenHead {
        let n = cfg.embed_dim;
        MenHead {
            dconv: DilatedBlock::new(rng, cfg),
            norm: LayerNorm::new(n),
            act: PRelu::new(n),
            gate_sig: crate::layers::Linear::new(rng, n, n, true),
            gate_tanh: crate::layers::Linear::new(rng, n, n, true),
        }
    }

    fn forward(&self, features: &Tensor, a_mag: &Tensor) -> Result<Tensor> {
        if features.shape() != a_mag.shape() {
            return Err(Error::ShapeMismatch(format!(
                "men_head: features {:?} vs a_mag {:?}",
                features.shape(),
                a_mag.shape()
            )));
        }
        let d = self.act.forward(&self.norm.forward(&self.dconv.forward(features)));
        let gate = tensor::mul(
            &tensor::sigmoid(&self.gate_sig.forward(&d)),
            &tensor::tanh(&self.gate_tanh.forward(&d)),
        );
        Ok(tensor::mul(a_mag, &gate))
    }

    fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        self.dconv.collect_params(&format!("{prefix}.dconv"), out);
        self.norm.collect_params(&format!("{prefix}.norm"), out);
        self.act.collect_params(&format!("{prefix}.act"), out);
        self.gate_sig.collect_params(&format!("{prefix}.gate_sig"), out);
        self.gate_tanh.collect_params(&format!("{prefix}.gate_tanh"), out);
    }

    fn param_count(cfg: &ModelConfig) -> usize {
        let n = cfg.embed_dim;
        DilatedBlock::param_count(cfg)
            + LayerNorm::param_count(n)
            + PRelu::param_count(n)
            + 2 * crate::layers::Linear::param_count(n, n, true)
    }
}

/// Complex head: independent real and imaginary decoders summed together.
struct CenHead {
    dconv_r: DilatedBlock,
    norm_r: LayerNorm,
    act_r: PRelu,
    dconv_i: DilatedBlock,
    norm_i: LayerNorm,
    act_i: PRelu,
}

impl CenHead {
    fn new(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> CenHead {
        let n = cfg.embed_dim;
        CenHead {
            dconv_r: DilatedBlock::new(rng, cfg),
            norm_r: LayerNorm::new(n),
            act_r: PRelu::new(n),
            dconv_i: DilatedBlock::new(rng, cfg),
            norm_i: LayerNorm::new(n),
            act_i: PRelu::new(n),
        }
    }

    fn forward(&self, features: &Tensor) -> Tensor {
        let er = self.act_r.forward(&self.norm_r.forward(&self.dconv_r.forward(features)));
        let ei = self.act_i.forward(&self.norm_i.forward(&self.dconv_i.forward(features)));
        tensor::add(&er, &ei)
    }

    fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        self.dconv_r.collect_params(&format!("{prefix}.real.dconv"), out);
        self.norm_r.collect_params(&format!("{prefix}.real.norm"), out);
        self.act_r.collect_params(&format!("{prefix}.real.act"), out);
        self.dconv_i.collect_params(&format!("{prefix}.imag.dconv"), out);
        self.norm_i.collect_params(&format!("{prefix}.imag.norm"), out);
        self.act_i.collect_params(&format!("{prefix}.imag.act"), out);
    }

    fn param_count(cfg: &ModelConfig) -> usize {
        let n = cfg.embed_dim;
        2 * (DilatedBlock::param_count(cfg) + LayerNorm::param_count(n) + PRelu::param_count(n))
    }
}

/// Network output: branch activations, the decoded complex mask and the
/// masked spectrum, all in the compressed domain.
#[derive(Debug)]
pub struct EnhancedOutput {
    pub men_out: Tensor,
    pub cen_out: Tensor,
    pub mask_re: Tensor,
    pub mask_im: Tensor,
    pub est_re: Tensor,
    pub est_im: Tensor,
    pub frames: usize,
    pub bins: usize,
    pub compression_exponent: f64,
}

impl EnhancedOutput {
    /// Copies the masked estimate into a spectrogram (compressed domain).
    pub fn to_spectrogram(&self) -> ComplexSpectrogram {
        ComplexSpectrogram {
            re: self.est_re.to_vec(),
            im: self.est_im.to_vec(),
            frames: self.frames,
            bins: self.bins,
            compression_exponent: self.compression_exponent,
        }
    }
}

pub struct Model {
    pub config: ModelConfig,
    pub layout: BandLayout,
    split_mag: BandSplit,
    split_ri: BandSplit,
    enc_mag: Encoder,
    enc_ri: Encoder,
    blocks_mag: Vec<TfMambaBlock>,
    blocks_ri: Vec<TfMambaBlock>,
    men: MenHead,
    cen: CenHead,
    decoder: MaskDecoder,
}

impl Model {
    /// Builds a freshly initialized model; identical `(config, seed)` pairs
    /// produce bit-identical parameters.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Model> {
        let layout = config.layout()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.embed_dim;
        let split_mag = BandSplit::new(&mut rng, layout.clone(), 1, n);
        let split_ri = BandSplit::new(&mut rng, layout.clone(), 2, n);
        let enc_mag = Encoder::new(&mut rng, config);
        let enc_ri = Encoder::new(&mut rng, config);
        let mut blocks_mag = Vec::with_capacity(config.depth);
        let mut blocks_ri = Vec::with_capacity(config.depth);
        for _ in 0..config.depth {
            blocks_mag.push(TfMambaBlock::new(
                &mut rng,
                n,
                config.expansion,
                config.d_state,
                config.conv_kernel,
            ));
            blocks_ri.push(TfMambaBlock::new(
                &mut rng,
                n,
                config.expansion,
                config.d_state,
                config.conv_kernel,
            ));
        }
        let men = MenHead::new(&mut rng, config);
        let cen = CenHead::new(&mut rng, config);
        let decoder = MaskDecoder::new(
            &mut rng,
            layout.clone(),
            n,
            config.decoder_hidden(),
            config.out_channels,
        );
        Ok(Model {
            config: config.clone(),
            layout,
            split_mag,
            split_ri,
            enc_mag,
            enc_ri,
            blocks_mag,
            blocks_ri,
            men,
            cen,
            decoder,
        })
    }

    /// Full forward pass over a power-compressed noisy spectrogram.
    pub fn forward(&self, noisy: &ComplexSpectrogram) -> Result<EnhancedOutput> {
        if (noisy.compression_exponent - self.config.compression_exponent).abs() > 1e-9 {
            return Err(Error::Compression(format!(
                "forward expects input compressed with exponent {}, got {}",
                self.config.compression_exponent, noisy.compression_exponent
            )));
        }
        if noisy.bins != self.layout.total_bins() {
            return Err(Error::ShapeMismatch(format!(
                "forward: {} bins, model expects {}",
                noisy.bins,
                self.layout.total_bins()
            )));
        }
        let t = noisy.frames;
        let f = noisy.bins;
        let views = decouple(noisy);
        let mag = Tensor::new(views.magnitude, &[t, f]);
        let ri = Tensor::new(views.ri, &[t, f * 2]);

        let z_mag = self.split_mag.forward(&mag)?;
        let z_ri = self.split_ri.forward(&ri)?;
        let mut c_m = self.enc_mag.forward(&z_mag, &z_ri)?;
        let mut c_r = self.enc_ri.forward(&z_ri, &z_mag)?;
        for l in 0..self.config.depth {
            let next_m = self.blocks_mag[l].forward(&c_m, &c_r)?;
            let next_r = self.blocks_ri[l].forward(&c_r, &c_m)?;
            c_m = next_m;
            c_r = next_r;
        }
        let men_out = self.men.forward(&c_m, &z_mag)?;
        let cen_out = self.cen.forward(&c_r);
        let fused = tensor::add(&men_out, &cen_out);
        let mask = self.decoder.forward(&fused)?; // [T, F*2], channel innermost
        let mask_re = tensor::stride_slice_last(&mask, 0, 2);
        let mask_im = tensor::stride_slice_last(&mask, 1, 2);
        let noisy_re = Tensor::new(noisy.re.clone(), &[t, f]);
        let noisy_im = Tensor::new(noisy.im.clone(), &[t, f]);
        let est_re = tensor::sub(
            &tensor::mul(&mask_re, &noisy_re),
            &tensor::mul(&mask_im, &noisy_im),
        );
        let est_im = tensor::add(
            &tensor::mul(&mask_re, &noisy_im),
            &tensor::mul(&mask_im, &noisy_re),
        );
        Ok(EnhancedOutput {
            men_out,
            cen_out,
            mask_re,
            mask_im,
            est_re,
            est_im,
            frames: t,
            bins: f,
            compression_exponent: noisy.compression_exponent,
        })
    }

    /// Ordered named parameter registry; the order and names are stable and
    /// define the checkpoint layout.
    pub fn params(&self) -> ParamList {
        let mut out = ParamList::new();
        self.split_mag.collect_params("split.mag", &mut out);
        self.split_ri.collect_params("split.ri", &mut out);
        self.enc_mag.collect_params("encoder.mag", &mut out);
        self.enc_ri.collect_params("encoder.ri", &mut out);
        for l in 0..self.config.depth {
            self.blocks_mag[l].collect_params(&format!("block{l}.mag"), &mut out);
            self.blocks_ri[l].collect_params(&format!("block{l}.ri"), &mut out);
        }
        self.men.collect_params("head.men", &mut out);
        self.cen.collect_params("head.cen", &mut out);
        self.decoder.collect_params("decoder", &mut out);
        out
    }

    /// Exact number of learnable scalars in a built model.
    pub fn parameter_total(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Swaps the encoders' temporal padding. `TimePad::Centered` deliberately
    /// breaks causality; the probe's mutation self-test relies on it.
    pub fn set_encoder_time_padding(&mut self, pad: TimePad) {
        self.enc_mag.conv.pad = pad;
        self.enc_ri.conv.pad = pad;
    }
}

/// Analytic parameter count for a configuration; must agree with
/// [`Model::parameter_total`] (checked in tests).
pub fn count_parameters(config: &ModelConfig) -> Result<usize> {
    let layout = config.layout()?;
    let n = config.embed_dim;
    let split = BandSplit::param_count(&layout, 1, n) + BandSplit::param_count(&layout, 2, n);
    let encoders = 2 * Encoder::param_count(config);
    let blocks = 2
        * config.depth
        * TfMambaBlock::param_count(n, config.expansion, config.d_state, config.conv_kernel);
    let heads = MenHead::param_count(config) + CenHead::param_count(config);
    let decoder =
        MaskDecoder::param_count(&layout, n, config.decoder_hidden(), config.out_channels);
    Ok(split + encoders + blocks + heads + decoder)
}

//! Analytic complexity accounting and the comparison report.
//!
//! MAC convention (stated so deviations from the published figures stay
//! interpretable): one multiply-accumulate = 1 MAC; affine maps cost
//! `in * out` per application; convolutions cost kernel-size times the
//! channel product per output element; the selective scan costs `d * n` per
//! step per direction; biases, normalizations and pointwise activations are
//! not counted.

use crate::dsp::{frame_count, SAMPLE_RATE};
use crate::error::Result;
use crate::mamba::dt_rank_for;
use crate::model::{count_parameters, ModelConfig, NAMED_CONFIGS};

/// Reference complexity figures for the named configurations (G MACs per
/// second of audio, in the canonical order), used for side-by-side display.
pub const REFERENCE_MACS_G: &[(&str, f64)] = &[
    ("64-4", 0.88),
    ("64-6", 0.98),
    ("128-4", 1.34),
    ("128-6", 1.68),
    ("256-2", 1.87),
    ("256-4", 3.06),
    ("256-6", 4.26),
];

/// Published parameter count for the reference "128-6" configuration.
pub const REFERENCE_PARAMS_128_6: f64 = 9.78e6;

/// Acceptance window for `count_parameters("128-6")`.
pub const PARAM_WINDOW_128_6: (f64, f64) = (8.3e6, 11.3e6);
/// Acceptance window for `count_macs("128-6", 1s)`.
pub const MACS_WINDOW_128_6: (f64, f64) = (1.1e9, 2.5e9);

/// Analysis frames produced by `seconds` of 16 kHz audio (no padding).
pub fn frames_for_seconds(seconds: f64) -> usize {
    frame_count((seconds * SAMPLE_RATE as f64).round() as usize)
}

/// Analytic multiply-accumulate tally for one forward pass over
/// `audio_seconds` of audio.
pub fn count_macs(config: &ModelConfig, audio_seconds: f64) -> Result<f64> {
    let layout = config.layout()?;
    let t = frames_for_seconds(audio_seconds) as f64;
    let k = layout.k() as f64;
    let f_total = layout.total_bins() as f64;
    let n = config.embed_dim as f64;
    let tokens = k * t;
    let d_inner = (config.embed_dim * config.expansion) as f64;
    let state = config.d_state as f64;
    let dt_rank = dt_rank_for(config.embed_dim * config.expansion) as f64;
    let c_out = config.out_channels as f64;

    // Band split, both branches (C_in = 1 and 2), per frame.
    let split = t * (f_total * n + 2.0 * f_total * n);

    // One directional sequence unit, per token.
    let mamba_unit = n * 2.0 * d_inner                  // input projection
        + d_inner * config.conv_kernel as f64           // depthwise conv
        + 2.0 * d_inner * state                         // b/c heads
        + 2.0 * d_inner * dt_rank                       // step-size head
        + d_inner * state                               // scan step
        + d_inner * n; // output projection

    // Per block and branch: interaction, frequency stage (in/out kernel-1
    // projections, two directions, concat merge), time stage.
    let inter = 2.0 * n * n;
    let freq_stage = n * n + 2.0 * mamba_unit + 2.0 * n * n + n * n;
    let time_stage = n * n + mamba_unit + n * n;
    let block_branch = inter + freq_stage + time_stage;
    let blocks = tokens * 2.0 * config.depth as f64 * block_branch;

    // Encoders: interaction plus the (band x time) convolution.
    let enc_conv = (config.encoder_kernel_bands * config.encoder_kernel_time) as f64 * n * n;
    let encoders = 2.0 * tokens * (inter + enc_conv);

    // Heads: one dilated block plus the two gate projections for the
    // magnitude branch, two dilated blocks for the complex branch.
    let dilated = config.dilations.len() as f64 * config.dilated_kernel as f64 * n * n;
    let heads = tokens * (dilated + 2.0 * n * n) + tokens * 2.0 * dilated;

    // Mask decoder, per frame; the output linear feeds the GLU so its width
    // is twice the per-band mask size.
    let hidden = config.decoder_hidden() as f64;
    let decoder = t * (k * n * hidden + hidden * 2.0 * c_out * f_total);

    // Complex mask application: 4 multiplies per bin.
    let mask_apply = t * f_total * 4.0;

    Ok(split + blocks + encoders + heads + decoder + mask_apply)
}

/// One row of the complexity report.
#[derive(Debug, Clone)]
pub struct ComplexityRow {
    pub name: String,
    pub params: usize,
    pub macs_per_second: f64,
    pub reference_macs_g: Option<f64>,
    pub reference_params_m: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ComplexityReport {
    pub rows: Vec<ComplexityRow>,
}

/// Builds the report for the given configuration names (in the given order).
pub fn complexity_report(names: &[String]) -> Result<ComplexityReport> {
    let mut rows = Vec::with_capacity(names.len());
    for name in names {
        let config = ModelConfig::named(name)?;
        let params = count_parameters(&config)?;
        let macs = count_macs(&config, 1.0)?;
        rows.push(ComplexityRow {
            name: name.clone(),
            params,
            macs_per_second: macs,
            reference_macs_g: REFERENCE_MACS_G
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| *v),
            reference_params_m: (name == "128-6").then_some(REFERENCE_PARAMS_128_6 / 1e6),
        });
    }
    Ok(ComplexityReport { rows })
}

impl ComplexityReport {
    /// Aligned plain-text rendering with relative deviation from the
    /// reference MAC figures. PESQ/STOI/ESTOI are intentionally absent: they
    /// are standardized external metrics, use dedicated tools for them.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:<8} {:>12} {:>12} {:>12} {:>12} {:>10}\n",
            "config", "params", "macs (G/s)", "ref params", "ref macs", "dev"
        ));
        for r in &self.rows {
            let ref_p = r
                .reference_params_m
                .map(|v| format!("{v:.2}M"))
                .unwrap_or_else(|| "-".into());
            let ref_m = r
                .reference_macs_g
                .map(|v| format!("{v:.2}"))
                .unwrap_or_else(|| "-".into());
            let dev = r
                .reference_macs_g
                .map(|v| format!("{:+.0}%", (r.macs_per_second / 1e9 / v - 1.0) * 100.0))
                .unwrap_or_else(|| "-".into());
            s.push_str(&format!(
                "{:<8} {:>12} {:>12.3} {:>12} {:>12} {:>10}\n",
                r.name,
                format!("{:.2}M", r.params as f64 / 1e6),
                r.macs_per_second / 1e9,
                ref_p,
                ref_m,
                dev
            ));
        }
        s
    }

    /// Comma-separated rendering: `name,params,macs_per_second,ref_macs_g`.
    pub fn render_csv(&self) -> String {
        let mut s = String::from("config,params,macs_per_second,reference_macs_g\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.0},{}\n",
                r.name,
                r.params,
                r.macs_per_second,
                r.reference_macs_g.map(|v| format!("{v}")).unwrap_or_default()
            ));
        }
        s
    }

    /// Verifies the embedded acceptance targets: the parameter and MAC
    /// windows for "128-6" and the strict MAC ordering over all seven named
    /// configurations. Returns the list of violations.
    pub fn check(&self) -> Vec<String> {
        let mut failures = Vec::new();
        if let Some(row) = self.rows.iter().find(|r| r.name == "128-6") {
            let (lo, hi) = PARAM_WINDOW_128_6;
            if (row.params as f64) < lo || (row.params as f64) > hi {
                failures.push(format!(
                    "params(128-6) = {} outside [{lo:.0}, {hi:.0}]",
                    row.params
                ));
            }
            let (lo, hi) = MACS_WINDOW_128_6;
            if row.macs_per_second < lo || row.macs_per_second > hi {
                failures.push(format!(
                    "macs(128-6) = {:.3e} outside [{lo:.1e}, {hi:.1e}]",
                    row.macs_per_second
                ));
            }
        }
        // Ordering is checked over the rows present, in canonical order.
        let canonical: Vec<&ComplexityRow> = NAMED_CONFIGS
            .iter()
            .filter_map(|n| self.rows.iter().find(|r| &r.name == n))
            .collect();
        for pair in canonical.windows(2) {
            if pair[0].macs_per_second >= pair[1].macs_per_second {
                failures.push(format!(
                    "MAC ordering violated: {} ({:.3e}) >= {} ({:.3e})",
                    pair[0].name, pair[0].macs_per_second, pair[1].name, pair[1].macs_per_second
                ));
            }
        }
        failures
    }
}

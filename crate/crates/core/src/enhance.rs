//! End-to-end waveform enhancement: analysis, compression, masking,
//! decompression, synthesis. Output length always equals input length; a
//! trailing partial frame is zero-padded before analysis and trimmed after
//! synthesis.

use crate::dsp::{istft, power_compress, stft, Waveform, FRAME_HOP, FRAME_LEN};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::no_grad;

/// Zero-pads one full frame on each side plus the trailing partial frame.
///
/// The leading/trailing pads absorb the synthesis edges, where single-frame
/// window coverage makes overlap-add normalization ill-conditioned for
/// modified spectra; they are trimmed away afterwards. Zero pads carry no
/// future signal content, so causality at the waveform level is preserved.
fn pad_for_analysis(wave: &Waveform) -> Waveform {
    let body = wave.len().max(FRAME_LEN) + 2 * FRAME_LEN;
    let hops = (body - FRAME_LEN).div_ceil(FRAME_HOP);
    let padded = FRAME_LEN + hops * FRAME_HOP;
    let mut samples = vec![0.0; FRAME_LEN];
    samples.extend_from_slice(&wave.samples);
    samples.resize(padded, 0.0);
    Waveform::new(samples, wave.sample_rate)
}

/// Runs the full pipeline. With `identity_mask` the network is bypassed and
/// the spectrum passes through unmasked, which reduces the pipeline to an
/// analysis/synthesis round trip (a useful debugging baseline).
pub fn enhance_waveform(model: &Model, input: &Waveform, identity_mask: bool) -> Result<Waveform> {
    if input.is_empty() {
        return Err(Error::SignalTooShort { len: 0, min: 1 });
    }
    let padded = pad_for_analysis(input);
    let spec = stft(&padded)?;
    let enhanced = if identity_mask {
        spec
    } else {
        let exponent = model.config.compression_exponent;
        let compressed = power_compress(&spec, exponent)?;
        let out = no_grad(|| model.forward(&compressed))?;
        power_compress(&out.to_spectrogram(), 1.0 / exponent)?
    };
    let wave = istft(&enhanced)?;
    let samples = wave.samples[FRAME_LEN..FRAME_LEN + input.len()].to_vec();
    Ok(Waveform::new(samples, wave.sample_rate))
}

//! Waveform/spectrogram conversions: framed STFT, overlap-add inverse,
//! power compression and magnitude/complex decoupling.
//!
//! Framing is fixed at the model's operating point: 16 kHz mono audio, 20 ms
//! periodic Hann window (320 samples), 50% overlap (hop 160), 320-point FFT,
//! 161 retained bins. No center padding is applied anywhere: frames only ever
//! see past samples, which keeps the whole pipeline causal.

use crate::error::{Error, Result};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_LEN: usize = 320;
pub const FRAME_HOP: usize = 160;
pub const FFT_SIZE: usize = 320;
/// Number of retained frequency bins: `FFT_SIZE / 2 + 1`.
pub const NUM_BINS: usize = 161;

/// Mono waveform with a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Waveform {
        Waveform { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::SampleRate { expected: SAMPLE_RATE, got: self.sample_rate });
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample(i));
        }
        Ok(())
    }

    /// Energy of the waveform, `sum(x^2)`.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }
}

/// Complex time-frequency representation, row-major `[frame][bin]`.
///
/// `compression_exponent` tracks the accumulated magnitude exponent: 1.0
/// means the raw STFT, 0.5 the usual compressed domain the network operates
/// in.
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub frames: usize,
    pub bins: usize,
    pub compression_exponent: f64,
}

impl ComplexSpectrogram {
    pub fn zeros(frames: usize, bins: usize) -> ComplexSpectrogram {
        ComplexSpectrogram {
            re: vec![0.0; frames * bins],
            im: vec![0.0; frames * bins],
            frames,
            bins,
            compression_exponent: 1.0,
        }
    }

    pub fn idx(&self, t: usize, f: usize) -> usize {
        t * self.bins + f
    }

    pub fn same_shape(&self, other: &ComplexSpectrogram) -> bool {
        self.frames == other.frames && self.bins == other.bins
    }

    pub fn is_compressed(&self) -> bool {
        (self.compression_exponent - 1.0).abs() > 1e-12
    }
}

/// Magnitude and real/imaginary views of a spectrogram.
///
/// `magnitude` is `[T*F]`, `ri` is `[T*F*2]` with the channel innermost.
#[derive(Debug, Clone)]
pub struct SpectralViews {
    pub magnitude: Vec<f64>,
    pub ri: Vec<f64>,
    pub frames: usize,
    pub bins: usize,
}

fn hann_window() -> Vec<f64> {
    // Periodic Hann: w[n] = 0.5 - 0.5 cos(2 pi n / N)
    (0..FRAME_LEN)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / FRAME_LEN as f64).cos())
        .collect()
}

/// Number of analysis frames for a signal of `len` samples (no padding).
pub fn frame_count(len: usize) -> usize {
    if len < FRAME_LEN {
        0
    } else {
        1 + (len - FRAME_LEN) / FRAME_HOP
    }
}

/// Forward STFT. Rejects signals shorter than one frame; output is
/// uncompressed.
pub fn stft(wave: &Waveform) -> Result<ComplexSpectrogram> {
    wave.validate()?;
    if wave.len() < FRAME_LEN {
        return Err(Error::SignalTooShort { len: wave.len(), min: FRAME_LEN });
    }
    let window = hann_window();
    let frames = frame_count(wave.len());
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(FFT_SIZE);
    let mut spec = ComplexSpectrogram::zeros(frames, NUM_BINS);
    let mut buf = vec![Complex64::new(0.0, 0.0); FFT_SIZE];
    for t in 0..frames {
        let start = t * FRAME_HOP;
        for n in 0..FRAME_LEN {
            buf[n] = Complex64::new(wave.samples[start + n] * window[n], 0.0);
        }
        fft.process(&mut buf);
        for f in 0..NUM_BINS {
            let i = spec.idx(t, f);
            spec.re[i] = buf[f].re;
            spec.im[i] = buf[f].im;
        }
    }
    Ok(spec)
}

/// Inverse STFT by weighted overlap-add with window-square normalization.
///
/// Rejects compressed input: a compressed spectrogram reaching synthesis is a
/// pipeline-ordering bug and decompression must happen first.
pub fn istft(spec: &ComplexSpectrogram) -> Result<Waveform> {
    if spec.is_compressed() {
        return Err(Error::Compression(format!(
            "istft requires an uncompressed spectrogram (compression_exponent = {}); decompress first",
            spec.compression_exponent
        )));
    }
    if spec.bins != NUM_BINS {
        return Err(Error::ShapeMismatch(format!(
            "istft expects {} bins, got {}",
            NUM_BINS, spec.bins
        )));
    }
    if spec.frames == 0 {
        return Err(Error::ShapeMismatch("istft: empty spectrogram".into()));
    }
    let window = hann_window();
    let len = FRAME_LEN + (spec.frames - 1) * FRAME_HOP;
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(FFT_SIZE);
    let mut buf = vec![Complex64::new(0.0, 0.0); FFT_SIZE];
    for t in 0..spec.frames {
        for f in 0..NUM_BINS {
            let i = spec.idx(t, f);
            buf[f] = Complex64::new(spec.re[i], spec.im[i]);
        }
        // Hermitian completion of the upper half.
        for f in NUM_BINS..FFT_SIZE {
            let mirror = FFT_SIZE - f;
            let i = spec.idx(t, mirror);
            buf[f] = Complex64::new(spec.re[i], -spec.im[i]);
        }
        ifft.process(&mut buf);
        let start = t * FRAME_HOP;
        for n in 0..FRAME_LEN {
            let sample = buf[n].re / FFT_SIZE as f64;
            out[start + n] += sample * window[n];
            norm[start + n] += window[n] * window[n];
        }
    }
    for (o, w) in out.iter_mut().zip(&norm) {
        if *w > 1e-12 {
            *o /= *w;
        }
    }
    Ok(Waveform::new(out, SAMPLE_RATE))
}

/// Maps bin magnitudes through `|X| -> |X|^exponent`, leaving phase intact.
/// Zero-magnitude bins stay exactly zero. The spectrogram's accumulated
/// `compression_exponent` is multiplied by `exponent`, so decompression is
/// the same call with the reciprocal.
pub fn power_compress(spec: &ComplexSpectrogram, exponent: f64) -> Result<ComplexSpectrogram> {
    if !(exponent > 0.0) {
        return Err(Error::Compression(format!(
            "compression exponent must be positive, got {exponent}"
        )));
    }
    let mut out = spec.clone();
    if (exponent - 1.0).abs() < 1e-15 {
        return Ok(out);
    }
    for i in 0..spec.re.len() {
        let m = spec.re[i].hypot(spec.im[i]);
        if m > 0.0 {
            let factor = m.powf(exponent - 1.0);
            out.re[i] = spec.re[i] * factor;
            out.im[i] = spec.im[i] * factor;
        } else {
            out.re[i] = 0.0;
            out.im[i] = 0.0;
        }
    }
    out.compression_exponent = spec.compression_exponent * exponent;
    Ok(out)
}

/// Splits a spectrogram into its magnitude and stacked real/imaginary views.
pub fn decouple(spec: &ComplexSpectrogram) -> SpectralViews {
    let n = spec.re.len();
    let mut magnitude = vec![0.0; n];
    let mut ri = vec![0.0; n * 2];
    for i in 0..n {
        magnitude[i] = spec.re[i].hypot(spec.im[i]);
        ri[2 * i] = spec.re[i];
        ri[2 * i + 1] = spec.im[i];
    }
    SpectralViews { magnitude, ri, frames: spec.frames, bins: spec.bins }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(len: usize, freq: f64, amp: f64) -> Waveform {
        let samples = (0..len)
            .map(|n| amp * (2.0 * std::f64::consts::PI * freq * n as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        Waveform::new(samples, SAMPLE_RATE)
    }

    #[test]
    fn one_second_gives_99_frames() {
        let spec = stft(&tone(16_000, 440.0, 0.5)).unwrap();
        assert_eq!(spec.frames, 99);
        assert_eq!(spec.bins, 161);
        assert_eq!(spec.compression_exponent, 1.0);
    }

    #[test]
    fn single_frame_input() {
        let spec = stft(&tone(320, 440.0, 0.5)).unwrap();
        assert_eq!(spec.frames, 1);
        assert_eq!(spec.bins, 161);
    }

    #[test]
    fn too_short_rejected() {
        let err = stft(&tone(319, 440.0, 0.5)).unwrap_err();
        assert!(matches!(err, Error::SignalTooShort { len: 319, min: 320 }));
    }

    #[test]
    fn wrong_sample_rate_rejected() {
        let wave = Waveform::new(vec![0.0; 16000], 44_100);
        assert!(matches!(stft(&wave).unwrap_err(), Error::SampleRate { .. }));
    }

    #[test]
    fn dc_energy_lands_in_bin_zero() {
        // A constant signal through the Hann window concentrates in the DC
        // bin, with the window's own spectrum contributing only to bin 1;
        // everything above that is numerically zero.
        let wave = Waveform::new(vec![0.25; 1600], SAMPLE_RATE);
        let spec = stft(&wave).unwrap();
        for t in 0..spec.frames {
            let mag =
                |f: usize| spec.re[spec.idx(t, f)].hypot(spec.im[spec.idx(t, f)]);
            let dc = mag(0);
            for f in 1..NUM_BINS {
                assert!(dc > mag(f), "frame {t}: bin {f} ({}) >= dc ({dc})", mag(f));
            }
            let tail: f64 = (2..NUM_BINS).map(mag).sum();
            assert!(tail < 1e-9 * dc, "frame {t}: tail {tail}");
        }
    }

    fn reconstruction_snr_db(orig: &[f64], rec: &[f64]) -> f64 {
        // Edges of the overlap-add lack full window coverage; judge the interior.
        let lo = FRAME_HOP;
        let hi = orig.len().min(rec.len()) - FRAME_HOP;
        let mut sig = 0.0;
        let mut err = 0.0;
        for i in lo..hi {
            sig += orig[i] * orig[i];
            err += (orig[i] - rec[i]) * (orig[i] - rec[i]);
        }
        10.0 * (sig / err.max(1e-300)).log10()
    }

    #[test]
    fn roundtrip_reconstruction_above_50_db() {
        let wave = tone(16_000, 613.0, 0.7);
        let rec = istft(&stft(&wave).unwrap()).unwrap();
        assert_eq!(rec.len(), 16_000);
        let snr = reconstruction_snr_db(&wave.samples, &rec.samples);
        assert!(snr > 50.0, "reconstruction SNR {snr} dB");
    }

    #[test]
    fn istft_inverse_frame_arithmetic() {
        let spec = ComplexSpectrogram::zeros(99, NUM_BINS);
        let wave = istft(&spec).unwrap();
        assert_eq!(wave.len(), 16_000);
        assert!(wave.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn istft_rejects_compressed_input() {
        let spec = stft(&tone(1600, 500.0, 0.5)).unwrap();
        let compressed = power_compress(&spec, 0.5).unwrap();
        assert!(matches!(istft(&compressed).unwrap_err(), Error::Compression(_)));
    }

    #[test]
    fn compress_known_bin() {
        let mut spec = ComplexSpectrogram::zeros(1, NUM_BINS);
        let phase = std::f64::consts::PI / 3.0;
        spec.re[5] = 4.0 * phase.cos();
        spec.im[5] = 4.0 * phase.sin();
        let out = power_compress(&spec, 0.5).unwrap();
        let mag = out.re[5].hypot(out.im[5]);
        let ang = out.im[5].atan2(out.re[5]);
        assert!((mag - 2.0).abs() < 1e-12);
        assert!((ang - phase).abs() < 1e-12);
        assert_eq!(out.compression_exponent, 0.5);
    }

    #[test]
    fn compress_exponent_one_is_identity() {
        let spec = stft(&tone(1600, 500.0, 0.5)).unwrap();
        let out = power_compress(&spec, 1.0).unwrap();
        assert_eq!(out.re, spec.re);
        assert_eq!(out.im, spec.im);
        assert_eq!(out.compression_exponent, 1.0);
    }

    #[test]
    fn compress_then_decompress_is_identity() {
        let spec = stft(&tone(3200, 777.0, 0.3)).unwrap();
        let back = power_compress(&power_compress(&spec, 0.5).unwrap(), 2.0).unwrap();
        assert!((back.compression_exponent - 1.0).abs() < 1e-12);
        for i in 0..spec.re.len() {
            assert!((back.re[i] - spec.re[i]).abs() < 1e-6 * (1.0 + spec.re[i].abs()));
            assert!((back.im[i] - spec.im[i]).abs() < 1e-6 * (1.0 + spec.im[i].abs()));
        }
    }

    #[test]
    fn non_positive_exponent_rejected() {
        let spec = ComplexSpectrogram::zeros(1, NUM_BINS);
        assert!(power_compress(&spec, 0.0).is_err());
        assert!(power_compress(&spec, -0.5).is_err());
    }

    #[test]
    fn decouple_three_four_five() {
        let mut spec = ComplexSpectrogram::zeros(1, NUM_BINS);
        spec.re[7] = 3.0;
        spec.im[7] = 4.0;
        let views = decouple(&spec);
        assert_eq!(views.magnitude[7], 5.0);
        assert_eq!(views.ri[14], 3.0);
        assert_eq!(views.ri[15], 4.0);
    }

    #[test]
    fn decouple_recombines_exactly() {
        let spec = stft(&tone(1600, 901.0, 0.4)).unwrap();
        let views = decouple(&spec);
        for i in 0..spec.re.len() {
            assert_eq!(views.ri[2 * i], spec.re[i]);
            assert_eq!(views.ri[2 * i + 1], spec.im[i]);
            let m = (views.ri[2 * i].powi(2) + views.ri[2 * i + 1].powi(2)).sqrt();
            assert!((views.magnitude[i] - m).abs() <= 1e-6 * m.max(1e-9));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn stft_is_linear(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let n = 1600;
            let x: Vec<f64> = (0..n).map(|i| (((i as u64 + seed) * 2654435761 % 10007) as f64 / 10007.0) - 0.5).collect();
            let y: Vec<f64> = (0..n).map(|i| (((i as u64 + seed) * 40503 % 9973) as f64 / 9973.0) - 0.5).collect();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(xv, yv)| a * xv + b * yv).collect();
            let sx = stft(&Waveform::new(x, SAMPLE_RATE)).unwrap();
            let sy = stft(&Waveform::new(y, SAMPLE_RATE)).unwrap();
            let sm = stft(&Waveform::new(mix, SAMPLE_RATE)).unwrap();
            let scale: f64 = sm.re.iter().map(|v| v.abs()).fold(1.0, f64::max);
            for i in 0..sm.re.len() {
                prop_assert!((sm.re[i] - (a * sx.re[i] + b * sy.re[i])).abs() < 1e-6 * scale);
                prop_assert!((sm.im[i] - (a * sx.im[i] + b * sy.im[i])).abs() < 1e-6 * scale);
            }
        }

        #[test]
        fn compression_preserves_phase(seed in 0u64..1000, exponent in 0.2f64..1.5) {
            let n = 960;
            let x: Vec<f64> = (0..n).map(|i| (((i as u64 * 31 + seed * 17) % 8191) as f64 / 8191.0) - 0.5).collect();
            let spec = stft(&Waveform::new(x, SAMPLE_RATE)).unwrap();
            let comp = power_compress(&spec, exponent).unwrap();
            for i in 0..spec.re.len() {
                let m = spec.re[i].hypot(spec.im[i]);
                if m > 1e-9 {
                    let a0 = spec.im[i].atan2(spec.re[i]);
                    let a1 = comp.im[i].atan2(comp.re[i]);
                    prop_assert!((a0 - a1).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn roundtrip_relative_error_small(seed in 0u64..200) {
            let n = 4800;
            let x: Vec<f64> = (0..n)
                .map(|i| 0.5 * ((2.0 * std::f64::consts::PI * (150.0 + seed as f64) * i as f64 / 16000.0).sin()))
                .collect();
            let wave = Waveform::new(x, SAMPLE_RATE);
            let rec = istft(&stft(&wave).unwrap()).unwrap();
            let lo = FRAME_HOP;
            let hi = wave.len() - FRAME_HOP;
            let num: f64 = (lo..hi).map(|i| (rec.samples[i] - wave.samples[i]).powi(2)).sum();
            let den: f64 = (lo..hi).map(|i| wave.samples[i].powi(2)).sum();
            prop_assert!((num / den).sqrt() < 3e-3);
        }
    }

    #[test]
    fn parseval_energy_consistency() {
        // Windowed frame energy equals spectrum energy / FFT_SIZE (real FFT
        // with Hermitian half: interior bins count twice).
        let wave = tone(640, 412.0, 0.6);
        let window = hann_window();
        let spec = stft(&wave).unwrap();
        for t in 0..spec.frames {
            let start = t * FRAME_HOP;
            let frame_energy: f64 = (0..FRAME_LEN)
                .map(|n| (wave.samples[start + n] * window[n]).powi(2))
                .sum();
            let mut spec_energy = 0.0;
            for f in 0..NUM_BINS {
                let p = spec.re[spec.idx(t, f)].powi(2) + spec.im[spec.idx(t, f)].powi(2);
                let w = if f == 0 || f == NUM_BINS - 1 { 1.0 } else { 2.0 };
                spec_energy += w * p;
            }
            spec_energy /= FFT_SIZE as f64;
            assert!(
                (frame_energy - spec_energy).abs() < 1e-9 * frame_energy.max(1e-12),
                "frame {t}: {frame_energy} vs {spec_energy}"
            );
        }
    }
}

//! Evaluation instruments: scale-invariant SDR and the causality probe.

use crate::dsp::{ComplexSpectrogram, Waveform, NUM_BINS};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::no_grad;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// Cap applied when the projection residual underflows.
pub const SI_SDR_CAP_DB: f64 = 100.0;

/// Scale-invariant signal-to-distortion ratio in dB.
///
/// The estimate is projected onto the reference; the ratio of projected
/// energy to residual energy is reported, capped at +100 dB.
pub fn si_sdr(est: &Waveform, reference: &Waveform) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::ShapeMismatch(format!(
            "si_sdr: lengths differ ({} vs {})",
            est.len(),
            reference.len()
        )));
    }
    let ref_energy: f64 = reference.samples.iter().map(|v| v * v).sum();
    if ref_energy <= 0.0 {
        return Err(Error::SilentSignal("si_sdr: reference has zero energy".into()));
    }
    let dot: f64 = est
        .samples
        .iter()
        .zip(&reference.samples)
        .map(|(e, r)| e * r)
        .sum();
    let alpha = dot / ref_energy;
    let mut target_energy = 0.0;
    let mut residual_energy = 0.0;
    for (e, r) in est.samples.iter().zip(&reference.samples) {
        let t = alpha * r;
        target_energy += t * t;
        residual_energy += (e - t) * (e - t);
    }
    if residual_energy <= target_energy * 1e-10 || residual_energy == 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target_energy / residual_energy).log10()).min(SI_SDR_CAP_DB))
}

/// Result of a causality probe run.
#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub trials: usize,
    pub max_violation: f64,
}

/// Draws random compressed inputs, perturbs every frame after a random cut
/// point and reports the largest change observed in any earlier output
/// frame. A causal model yields values at floating-point noise level; a
/// model that peeks ahead is flagged loudly.
pub fn causality_probe(model: &Model, trials: usize, frames: usize, seed: u64) -> ProbeReport {
    assert!(frames >= 2, "probe needs at least two frames");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_violation: f64 = 0.0;
    for _ in 0..trials {
        let mut spec = ComplexSpectrogram::zeros(frames, NUM_BINS);
        for i in 0..spec.re.len() {
            spec.re[i] = rng.random_range(-1.0..1.0);
            spec.im[i] = rng.random_range(-1.0..1.0);
        }
        spec.compression_exponent = model.config.compression_exponent;
        let cut = rng.random_range(1..frames);
        let mut perturbed = spec.clone();
        for t in cut..frames {
            for f in 0..NUM_BINS {
                let i = perturbed.idx(t, f);
                perturbed.re[i] = rng.random_range(-1.0..1.0);
                perturbed.im[i] = rng.random_range(-1.0..1.0);
            }
        }
        let (a, b) = no_grad(|| {
            (
                model.forward(&spec).expect("probe forward"),
                model.forward(&perturbed).expect("probe forward"),
            )
        });
        let (ar, br) = (a.est_re.data(), b.est_re.data());
        let (ai, bi) = (a.est_im.data(), b.est_im.data());
        for t in 0..cut {
            for f in 0..NUM_BINS {
                let i = t * NUM_BINS + f;
                max_violation = max_violation.max((ar[i] - br[i]).abs());
                max_violation = max_violation.max((ai[i] - bi[i]).abs());
            }
        }
    }
    ProbeReport { trials, max_violation }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SAMPLE_RATE;
    use crate::model::ModelConfig;
    use crate::tensor::TimePad;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, SAMPLE_RATE)
    }

    #[test]
    fn identical_signals_hit_the_cap() {
        let x = wave((0..256).map(|i| (i as f64 * 0.1).sin()).collect());
        assert_eq!(si_sdr(&x, &x).unwrap(), SI_SDR_CAP_DB);
    }

    #[test]
    fn scale_invariance() {
        let x = wave((0..256).map(|i| (i as f64 * 0.1).sin()).collect());
        let y = wave((0..256).map(|i| (i as f64 * 0.1).sin() + 0.1 * (i as f64 * 0.31).cos()).collect());
        let a = si_sdr(&y, &x).unwrap();
        let scaled = wave(y.samples.iter().map(|v| v * 2.0).collect());
        let b = si_sdr(&scaled, &x).unwrap();
        assert!((a - b).abs() < 1e-9);
        let scaled = wave(y.samples.iter().map(|v| v * -0.37).collect());
        let c = si_sdr(&scaled, &x).unwrap();
        assert!((a - c).abs() < 1e-9);
    }

    #[test]
    fn hand_projection_case_is_zero_db() {
        // ref [1, 0], est [1, 1]: projection [1, 0], error [0, 1] -> 0 dB.
        let r = wave(vec![1.0, 0.0]);
        let e = wave(vec![1.0, 1.0]);
        assert!(si_sdr(&e, &r).unwrap().abs() < 1e-12);
    }

    #[test]
    fn silent_reference_rejected() {
        let r = wave(vec![0.0; 16]);
        let e = wave(vec![1.0; 16]);
        assert!(matches!(si_sdr(&e, &r).unwrap_err(), Error::SilentSignal(_)));
    }

    #[test]
    fn length_mismatch_rejected() {
        let r = wave(vec![1.0; 16]);
        let e = wave(vec![1.0; 17]);
        assert!(si_sdr(&e, &r).is_err());
    }

    #[test]
    fn probe_passes_reference_model_and_flags_mutant() {
        let cfg = ModelConfig::micro();
        let mut model = Model::new(&cfg, 5).unwrap();
        let clean = causality_probe(&model, 8, 12, 42);
        assert!(
            clean.max_violation < 1e-5,
            "reference model violated causality: {}",
            clean.max_violation
        );
        model.set_encoder_time_padding(TimePad::Centered);
        let dirty = causality_probe(&model, 8, 12, 42);
        assert!(
            dirty.max_violation > 1e-3,
            "mutated model not flagged: {}",
            dirty.max_violation
        );
    }

    #[test]
    fn zero_perturbation_control_is_exactly_zero() {
        // Forward determinism: the same input twice differs by exactly 0.
        let cfg = ModelConfig::micro();
        let model = Model::new(&cfg, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut spec = ComplexSpectrogram::zeros(8, NUM_BINS);
        for i in 0..spec.re.len() {
            spec.re[i] = rng.random_range(-1.0..1.0);
            spec.im[i] = rng.random_range(-1.0..1.0);
        }
        spec.compression_exponent = 0.5;
        let (a, b) = no_grad(|| (model.forward(&spec).unwrap(), model.forward(&spec).unwrap()));
        assert_eq!(a.est_re.to_vec(), b.est_re.to_vec());
        assert_eq!(a.est_im.to_vec(), b.est_im.to_vec());
    }
}

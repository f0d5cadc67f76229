//! The combined real/imaginary + magnitude training objective, computed in
//! the compressed spectral domain.
//!
//! `l_ri` is the summed squared error over both complex channels; `l_mag`
//! penalizes the squared difference of bin magnitudes; they are blended by
//! `beta`. Both terms are plain sums (no averaging), so the single-bin hand
//! cases come out exact.

use crate::dsp::ComplexSpectrogram;
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { beta: 0.5 }
    }
}

impl LossConfig {
    pub fn new(beta: f64) -> Result<LossConfig> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidArgument(format!("beta must lie in [0, 1], got {beta}")));
        }
        Ok(LossConfig { beta })
    }
}

fn validate_pair(est: &ComplexSpectrogram, target: &ComplexSpectrogram) -> Result<()> {
    if !est.same_shape(target) {
        return Err(Error::ShapeMismatch(format!(
            "loss: {}x{} vs {}x{}",
            est.frames, est.bins, target.frames, target.bins
        )));
    }
    if (est.compression_exponent - target.compression_exponent).abs() > 1e-9 {
        return Err(Error::Compression(format!(
            "loss: compression exponents differ ({} vs {})",
            est.compression_exponent, target.compression_exponent
        )));
    }
    Ok(())
}

/// Scalar loss between two spectrograms: `(total, l_ri, l_mag)`.
pub fn loss_total(
    est: &ComplexSpectrogram,
    target: &ComplexSpectrogram,
    cfg: &LossConfig,
) -> Result<(f64, f64, f64)> {
    validate_pair(est, target)?;
    let mut l_ri = 0.0;
    let mut l_mag = 0.0;
    for i in 0..est.re.len() {
        let dr = est.re[i] - target.re[i];
        let di = est.im[i] - target.im[i];
        l_ri += dr * dr + di * di;
        let dm = est.re[i].hypot(est.im[i]) - target.re[i].hypot(target.im[i]);
        l_mag += dm * dm;
    }
    Ok((cfg.beta * l_ri + (1.0 - cfg.beta) * l_mag, l_ri, l_mag))
}

/// Differentiable version over the network's output tensors; the target is a
/// constant. Returns the total along with the component values.
pub fn loss_tensors(
    est_re: &Tensor,
    est_im: &Tensor,
    target_re: &Tensor,
    target_im: &Tensor,
    cfg: &LossConfig,
) -> (Tensor, f64, f64) {
    let dr = tensor::sub(est_re, target_re);
    let di = tensor::sub(est_im, target_im);
    let l_ri = tensor::add(
        &tensor::sum_all(&tensor::square(&dr)),
        &tensor::sum_all(&tensor::square(&di)),
    );
    let dm = tensor::sub(
        &tensor::magnitude(est_re, est_im),
        &tensor::magnitude(target_re, target_im),
    );
    let l_mag = tensor::sum_all(&tensor::square(&dm));
    let total = tensor::add(
        &tensor::scale(&l_ri, cfg.beta),
        &tensor::scale(&l_mag, 1.0 - cfg.beta),
    );
    let (ri, mag) = (l_ri.item(), l_mag.item());
    (total, ri, mag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::NUM_BINS;
    use proptest::prelude::*;

    fn spec_from(re: Vec<f64>, im: Vec<f64>, frames: usize, bins: usize) -> ComplexSpectrogram {
        ComplexSpectrogram { re, im, frames, bins, compression_exponent: 0.5 }
    }

    #[test]
    fn identical_spectra_give_zero() {
        let s = spec_from(vec![0.3, -0.2], vec![0.1, 0.4], 1, 2);
        let (total, ri, mag) = loss_total(&s, &s, &LossConfig::default()).unwrap();
        assert_eq!((total, ri, mag), (0.0, 0.0, 0.0));
    }

    #[test]
    fn single_bin_hand_case() {
        // est = 0, target = 3 + 4i, beta = 0.5:
        // l_ri = 9 + 16 = 25, l_mag = (0 - 5)^2 = 25, total = 25.
        let est = spec_from(vec![0.0], vec![0.0], 1, 1);
        let tgt = spec_from(vec![3.0], vec![4.0], 1, 1);
        let (total, ri, mag) = loss_total(&est, &tgt, &LossConfig::default()).unwrap();
        assert_eq!(ri, 25.0);
        assert_eq!(mag, 25.0);
        assert_eq!(total, 25.0);
    }

    #[test]
    fn beta_endpoints() {
        let est = spec_from(vec![1.0], vec![0.0], 1, 1);
        let tgt = spec_from(vec![0.0], vec![2.0], 1, 1);
        let (t1, ri, _) = loss_total(&est, &tgt, &LossConfig::new(1.0).unwrap()).unwrap();
        assert_eq!(t1, ri);
        let (t0, _, mag) = loss_total(&est, &tgt, &LossConfig::new(0.0).unwrap()).unwrap();
        assert_eq!(t0, mag);
    }

    #[test]
    fn invalid_beta_rejected() {
        assert!(LossConfig::new(-0.1).is_err());
        assert!(LossConfig::new(1.1).is_err());
    }

    #[test]
    fn mismatches_rejected() {
        let a = spec_from(vec![0.0; 4], vec![0.0; 4], 2, 2);
        let b = spec_from(vec![0.0; 6], vec![0.0; 6], 3, 2);
        assert!(loss_total(&a, &b, &LossConfig::default()).is_err());
        let mut c = a.clone();
        c.compression_exponent = 1.0;
        assert!(loss_total(&a, &c, &LossConfig::default()).is_err());
    }

    #[test]
    fn tensor_path_agrees_with_scalar_path() {
        let n = NUM_BINS;
        let re_e: Vec<f64> = (0..2 * n).map(|i| ((i * 13 % 37) as f64 / 37.0) - 0.4).collect();
        let im_e: Vec<f64> = (0..2 * n).map(|i| ((i * 7 % 29) as f64 / 29.0) - 0.5).collect();
        let re_t: Vec<f64> = (0..2 * n).map(|i| ((i * 11 % 31) as f64 / 31.0) - 0.3).collect();
        let im_t: Vec<f64> = (0..2 * n).map(|i| ((i * 5 % 23) as f64 / 23.0) - 0.6).collect();
        let est = spec_from(re_e.clone(), im_e.clone(), 2, n);
        let tgt = spec_from(re_t.clone(), im_t.clone(), 2, n);
        let cfg = LossConfig::default();
        let (total, ri, mag) = loss_total(&est, &tgt, &cfg).unwrap();
        let (tt, tri, tmag) = loss_tensors(
            &Tensor::new(re_e, &[2, n]),
            &Tensor::new(im_e, &[2, n]),
            &Tensor::new(re_t, &[2, n]),
            &Tensor::new(im_t, &[2, n]),
            &cfg,
        );
        assert!((tt.item() - total).abs() < 1e-9 * total.max(1.0));
        assert!((tri - ri).abs() < 1e-9 * ri.max(1.0));
        assert!((tmag - mag).abs() < 1e-9 * mag.max(1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn loss_is_nonnegative(seed in 0u64..1000) {
            let n = 8;
            let f = |salt: u64| -> Vec<f64> {
                (0..n).map(|i| (((i as u64 + salt * 31 + seed) * 2654435761 % 997) as f64 / 997.0) - 0.5).collect()
            };
            let est = spec_from(f(1), f(2), 2, 4);
            let tgt = spec_from(f(3), f(4), 2, 4);
            let (total, ri, mag) = loss_total(&est, &tgt, &LossConfig::default()).unwrap();
            prop_assert!(total >= 0.0 && ri >= 0.0 && mag >= 0.0);
        }

        #[test]
        fn l_mag_invariant_under_global_phase_rotation(theta in 0.0f64..6.28) {
            let n = 6;
            let re: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
            let im: Vec<f64> = (0..n).map(|i| (i as f64 * 1.1).cos()).collect();
            let rot = |re: &[f64], im: &[f64]| -> (Vec<f64>, Vec<f64>) {
                let (c, s) = (theta.cos(), theta.sin());
                (
                    re.iter().zip(im).map(|(r, i)| r * c - i * s).collect(),
                    re.iter().zip(im).map(|(r, i)| r * s + i * c).collect(),
                )
            };
            let re_t: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos()).collect();
            let im_t: Vec<f64> = (0..n).map(|i| (i as f64 * 0.9).sin()).collect();
            let base = loss_total(
                &spec_from(re.clone(), im.clone(), 1, n),
                &spec_from(re_t.clone(), im_t.clone(), 1, n),
                &LossConfig::default(),
            ).unwrap();
            let (re_r, im_r) = rot(&re, &im);
            let (ret_r, imt_r) = rot(&re_t, &im_t);
            let rotated = loss_total(
                &spec_from(re_r, im_r, 1, n),
                &spec_from(ret_r, imt_r, 1, n),
                &LossConfig::default(),
            ).unwrap();
            // Magnitudes are untouched by a global rotation of both spectra.
            prop_assert!((base.2 - rotated.2).abs() < 1e-9);
        }
    }
}

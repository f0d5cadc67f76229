//! Causal band-split dual-branch speech enhancement.
//!
//! The toolkit covers the full desk-scale workflow for a low-complexity
//! monaural denoiser:
//!
//! * [`dsp`] — STFT/iSTFT framing, power compression, magnitude/complex
//!   decoupling (16 kHz, 20 ms Hann, 50% overlap, 320-point FFT, causal).
//! * [`bands`] — band-split embedding of the frequency axis and the per-band
//!   mask decoder.
//! * [`interact`] — sigmoid-gated cross-branch fusion.
//! * [`mamba`] — selective state-space scan (ZOH discretization,
//!   input-dependent step/couplings), bidirectional band modeling,
//!   unidirectional time modeling.
//! * [`model`] — the dual-branch network (magnitude + complex branches) with
//!   gated magnitude head, two-path complex head and complex ratio masking.
//! * [`train`], [`loss`], [`data`], [`optim`] — the compressed-domain
//!   RI+magnitude objective, exact-SNR mixing, Adam with halve-on-plateau.
//! * [`metrics`], [`profile`] — SI-SDR, the causality probe and analytic
//!   parameter/MAC accounting for the named configurations.
//!
//! Everything runs in `f64` on a small tape-based autodiff engine
//! ([`tensor`]); forward passes are deterministic given parameters and
//! input.

pub mod bands;
pub mod checkpoint;
pub mod data;
pub mod dsp;
pub mod enhance;
pub mod error;
pub mod interact;
pub mod layers;
pub mod loss;
pub mod mamba;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod profile;
pub mod tensor;
pub mod train;
pub mod wav;

pub use error::{Error, Result};

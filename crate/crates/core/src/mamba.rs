//! Selective state-space sequence modeling.
//!
//! The core recurrence is the diagonal selective SSM: per channel `i` and
//! state `j`,
//!
//! ```text
//! abar[t,i,j] = exp(delta[t,i] * a[i,j])          (zero-order hold)
//! bbar[t,i,j] = delta[t,i] * b[t,j]               (Euler simplification)
//! h[t,i,j]    = abar * h[t-1,i,j] + bbar * x[t,i]
//! y[t,i]      = <c[t,:], h[t,i,:]> + d_skip[i] * x[t,i]
//! ```
//!
//! `delta`, `b` and `c` are input-dependent heads; `a` is a learned diagonal
//! matrix kept strictly negative through `a = -exp(a_log)`. The scan is a
//! single fused operation with a hand-derived backward pass so training does
//! not build one graph node per step. The sequential loop is the reference
//! implementation; the per-step oracle in the tests pins its semantics.

use crate::error::{Error, Result};
use crate::interact::Interaction;
use crate::layers::{DepthwiseConv1d, LayerNorm, Linear, ParamList};
use crate::tensor::{self, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Zero-order-hold discretization of one step: `abar = exp(delta ⊙ a)`,
/// `bbar = delta ⊙ b`, with `delta` broadcast over the state dimension.
///
/// `delta` has length `d`; `a` and `b` are `d*n` row-major.
pub fn discretize(delta: &[f64], a: &[f64], b: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = delta.len();
    if a.len() != d * n || b.len() != d * n {
        return Err(Error::ShapeMismatch(format!(
            "discretize: a/b must be {}x{n}, got {} and {}",
            d,
            a.len(),
            b.len()
        )));
    }
    if let Some(v) = delta.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "discretize: step size must be positive, got {v}"
        )));
    }
    let mut abar = vec![0.0; d * n];
    let mut bbar = vec![0.0; d * n];
    for i in 0..d {
        for j in 0..n {
            abar[i * n + j] = (delta[i] * a[i * n + j]).exp();
            bbar[i * n + j] = delta[i] * b[i * n + j];
        }
    }
    Ok((abar, bbar))
}

/// Fused selective scan over `[B, L, d]` input.
///
/// * `delta`: `[B, L, d]`, strictly positive step sizes
/// * `a`: `[d, n]` state matrix diagonal
/// * `b`, `c`: `[B, L, n]` input/output couplings per step
/// * `x`: `[B, L, d]` driving sequence
/// * `d_skip`: `[d]` skip coefficients
pub fn selective_scan(
    delta: &Tensor,
    a: &Tensor,
    b: &Tensor,
    c: &Tensor,
    x: &Tensor,
    d_skip: &Tensor,
) -> Tensor {
    let s = x.shape().to_vec();
    assert_eq!(s.len(), 3, "selective_scan: x must be [B, L, d]");
    let (bsz, l, d) = (s[0], s[1], s[2]);
    assert_eq!(delta.shape(), &[bsz, l, d], "selective_scan: delta shape");
    let n = a.shape()[1];
    assert_eq!(a.shape(), &[d, n], "selective_scan: a shape");
    assert_eq!(b.shape(), &[bsz, l, n], "selective_scan: b shape");
    assert_eq!(c.shape(), &[bsz, l, n], "selective_scan: c shape");
    assert_eq!(d_skip.shape(), &[d], "selective_scan: d_skip shape");

    let dd = delta.data();
    let ad = a.data();
    let bd = b.data();
    let cd = c.data();
    let xd = x.data();
    let sd = d_skip.data();

    let track = tensor::grad_tracking_enabled()
        && [delta, a, b, c, x, d_skip].iter().any(|t| t.requires_grad());
    // Hidden-state history is only needed for the backward pass.
    let mut h_hist: Vec<f64> = if track { vec![0.0; bsz * l * d * n] } else { Vec::new() };
    let mut y = vec![0.0; bsz * l * d];
    let mut h = vec![0.0; d * n];
    for bb in 0..bsz {
        h.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..l {
            let step = bb * l + t;
            let drow = &dd[step * d..(step + 1) * d];
            let brow = &bd[step * n..step * n + n];
            let crow = &cd[step * n..step * n + n];
            let xrow = &xd[step * d..step * d + d];
            for i in 0..d {
                let dt = drow[i];
                let xv = xrow[i];
                let hrow = &mut h[i * n..(i + 1) * n];
                let arow = &ad[i * n..(i + 1) * n];
                let mut acc = 0.0;
                for j in 0..n {
                    let abar = (dt * arow[j]).exp();
                    hrow[j] = abar * hrow[j] + dt * brow[j] * xv;
                    acc += crow[j] * hrow[j];
                }
                y[step * d + i] = acc + sd[i] * xv;
            }
            if track {
                h_hist[step * d * n..(step + 1) * d * n].copy_from_slice(&h);
            }
        }
    }
    drop(dd);
    drop(ad);
    drop(bd);
    drop(cd);
    drop(xd);
    drop(sd);

    Tensor::from_op(
        y,
        &[bsz, l, d],
        vec![delta.clone(), a.clone(), b.clone(), c.clone(), x.clone(), d_skip.clone()],
        Box::new(move |gy, parents| {
            let (delta, a, b, c, x, d_skip) =
                (&parents[0], &parents[1], &parents[2], &parents[3], &parents[4], &parents[5]);
            let dd = delta.to_vec();
            let ad = a.to_vec();
            let bd = b.to_vec();
            let cd = c.to_vec();
            let xd = x.to_vec();
            let sd = d_skip.to_vec();
            let mut g_delta = vec![0.0; dd.len()];
            let mut g_a = vec![0.0; ad.len()];
            let mut g_b = vec![0.0; bd.len()];
            let mut g_c = vec![0.0; cd.len()];
            let mut g_x = vec![0.0; xd.len()];
            let mut g_s = vec![0.0; sd.len()];
            let mut gh = vec![0.0; d * n];
            for bb in 0..bsz {
                gh.iter_mut().for_each(|v| *v = 0.0);
                for t in (0..l).rev() {
                    let step = bb * l + t;
                    let brow = &bd[step * n..step * n + n];
                    let crow = &cd[step * n..step * n + n];
                    for i in 0..d {
                        let gyv = gy[step * d + i];
                        let dt = dd[step * d + i];
                        let xv = xd[step * d + i];
                        let hrow = &h_hist[step * d * n + i * n..step * d * n + (i + 1) * n];
                        let arow = &ad[i * n..(i + 1) * n];
                        let ghrow = &mut gh[i * n..(i + 1) * n];
                        // y[t,i] = <c, h> + d_skip * x
                        g_x[step * d + i] += gyv * sd[i];
                        g_s[i] += gyv * xv;
                        for j in 0..n {
                            g_c[step * n + j] += gyv * hrow[j];
                            ghrow[j] += gyv * crow[j];
                        }
                        // h[t] = abar * h[t-1] + dt * b * x
                        let hprev_base = step * d * n + i * n;
                        for j in 0..n {
                            let abar = (dt * arow[j]).exp();
                            let hprev = if t == 0 {
                                0.0
                            } else {
                                h_hist[hprev_base - d * n + j]
                            };
                            let g = ghrow[j];
                            g_delta[step * d + i] += g * (hprev * arow[j] * abar + brow[j] * xv);
                            g_a[i * n + j] += g * hprev * dt * abar;
                            g_b[step * n + j] += g * dt * xv;
                            g_x[step * d + i] += g * dt * brow[j];
                            ghrow[j] = g * abar;
                        }
                    }
                }
            }
            delta.accumulate_grad(&g_delta);
            a.accumulate_grad(&g_a);
            b.accumulate_grad(&g_b);
            c.accumulate_grad(&g_c);
            x.accumulate_grad(&g_x);
            d_skip.accumulate_grad(&g_s);
        }),
    )
}

/// Input-dependent heads plus the diagonal state matrix and skip path.
///
/// The step size uses a low-rank head followed by softplus so it stays
/// strictly positive; the state diagonal is stored as `a_log` with
/// `a = -exp(a_log)`, which keeps it strictly negative.
pub struct SsmCore {
    pub dim: usize,
    pub state: usize,
    pub dt_rank: usize,
    a_log: Tensor,
    d_skip: Tensor,
    b_proj: Linear,
    c_proj: Linear,
    dt_lo: Linear,
    dt_up: Linear,
}

impl SsmCore {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, state: usize, dt_rank: usize) -> SsmCore {
        let mut a_log = vec![0.0; dim * state];
        for i in 0..dim {
            for j in 0..state {
                a_log[i * state + j] = ((j + 1) as f64).ln();
            }
        }
        let dt_up = {
            let lin = Linear::new(rng, dt_rank, dim, true);
            // Bias the step size into [1e-3, 1e-1] (log-uniform) at init.
            let bias = lin.b.as_ref().expect("dt head has a bias");
            let mut bd = bias.data_mut();
            for v in bd.iter_mut() {
                let dt = (1e-3f64).ln() + rng.random_range(0.0..1.0) * ((1e-1f64).ln() - (1e-3f64).ln());
                let dt = dt.exp();
                *v = (dt.exp_m1()).ln(); // inverse softplus
            }
            drop(bd);
            lin
        };
        SsmCore {
            dim,
            state,
            dt_rank,
            a_log: Tensor::param(a_log, &[dim, state]),
            d_skip: Tensor::param(vec![1.0; dim], &[dim]),
            b_proj: Linear::new(rng, dim, state, true),
            c_proj: Linear::new(rng, dim, state, true),
            dt_lo: Linear::new(rng, dim, dt_rank, false),
            dt_up,
        }
    }

    /// Applies the selective scan to `[B, L, d]` input, deriving the step
    /// size and couplings from the input itself.
    pub fn scan(&self, x: &Tensor) -> Tensor {
        let delta = tensor::softplus(&self.dt_up.forward(&self.dt_lo.forward(x)));
        let b = self.b_proj.forward(x);
        let c = self.c_proj.forward(x);
        let a = tensor::neg(&tensor::exp(&self.a_log));
        selective_scan(&delta, &a, &b, &c, x, &self.d_skip)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        out.push((format!("{prefix}.a_log"), self.a_log.clone()));
        out.push((format!("{prefix}.d_skip"), self.d_skip.clone()));
        self.b_proj.collect_params(&format!("{prefix}.b_proj"), out);
        self.c_proj.collect_params(&format!("{prefix}.c_proj"), out);
        self.dt_lo.collect_params(&format!("{prefix}.dt_lo"), out);
        self.dt_up.collect_params(&format!("{prefix}.dt_up"), out);
    }

    pub fn param_count(dim: usize, state: usize, dt_rank: usize) -> usize {
        dim * state
            + dim
            + 2 * Linear::param_count(dim, state, true)
            + Linear::param_count(dim, dt_rank, false)
            + Linear::param_count(dt_rank, dim, true)
    }
}

/// One directional sequence-modeling unit: input projection with expansion,
/// short depthwise causal convolution, selective scan, multiplicative gate,
/// output projection.
pub struct MambaLayer {
    pub d_model: usize,
    pub d_inner: usize,
    in_proj: Linear,
    conv: DepthwiseConv1d,
    pub core: SsmCore,
    out_proj: Linear,
}

pub fn dt_rank_for(d_inner: usize) -> usize {
    (d_inner / 16).max(1)
}

impl MambaLayer {
    pub fn new(
        rng: &mut ChaCha8Rng,
        d_model: usize,
        expansion: usize,
        state: usize,
        conv_kernel: usize,
    ) -> MambaLayer {
        let d_inner = d_model * expansion;
        MambaLayer {
            d_model,
            d_inner,
            in_proj: Linear::new(rng, d_model, 2 * d_inner, true),
            conv: DepthwiseConv1d::new(rng, d_inner, conv_kernel),
            core: SsmCore::new(rng, d_inner, state, dt_rank_for(d_inner)),
            out_proj: Linear::new(rng, d_inner, d_model, true),
        }
    }

    /// `[B, L, d_model] -> [B, L, d_model]`, strictly causal along axis 1.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let xz = self.in_proj.forward(x);
        let xs = tensor::slice_last(&xz, 0, self.d_inner);
        let res = tensor::slice_last(&xz, self.d_inner, 2 * self.d_inner);
        let xs = tensor::silu(&self.conv.forward(&xs));
        let y = self.core.scan(&xs);
        let gated = tensor::mul(&y, &tensor::silu(&res));
        self.out_proj.forward(&gated)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        self.in_proj.collect_params(&format!("{prefix}.in_proj"), out);
        self.conv.collect_params(&format!("{prefix}.conv"), out);
        self.core.collect_params(&format!("{prefix}.core"), out);
        self.out_proj.collect_params(&format!("{prefix}.out_proj"), out);
    }

    pub fn param_count(d_model: usize, expansion: usize, state: usize, conv_kernel: usize) -> usize {
        let d_inner = d_model * expansion;
        Linear::param_count(d_model, 2 * d_inner, true)
            + DepthwiseConv1d::param_count(d_inner, conv_kernel)
            + SsmCore::param_count(d_inner, state, dt_rank_for(d_inner))
            + Linear::param_count(d_inner, d_model, true)
    }
}

/// Bidirectional wrapper: forward and reversed passes are concatenated along
/// channels and projected back to the model width.
pub struct BidirectionalMamba {
    pub fwd: MambaLayer,
    pub bwd: MambaLayer,
    pub merge: Linear,
}

impl BidirectionalMamba {
    pub fn new(
        rng: &mut ChaCha8Rng,
        d_model: usize,
        expansion: usize,
        state: usize,
        conv_kernel: usize,
    ) -> BidirectionalMamba {
        BidirectionalMamba {
            fwd: MambaLayer::new(rng, d_model, expansion, state, conv_kernel),
            bwd: MambaLayer::new(rng, d_model, expansion, state, conv_kernel),
            merge: Linear::new(rng, 2 * d_model, d_model, true),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let f = self.fwd.forward(x);
        let b = tensor::reverse1(&self.bwd.forward(&tensor::reverse1(x)));
        self.merge.forward(&tensor::concat_last(&[f, b]))
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        self.fwd.collect_params(&format!("{prefix}.fwd"), out);
        self.bwd.collect_params(&format!("{prefix}.bwd"), out);
        self.merge.collect_params(&format!("{prefix}.merge"), out);
    }

    pub fn param_count(d_model: usize, expansion: usize, state: usize, conv_kernel: usize) -> usize {
        2 * MambaLayer::param_count(d_model, expansion, state, conv_kernel)
            + Linear::param_count(2 * d_model, d_model, true)
    }
}

/// Full time-frequency block: cross-branch interaction, bidirectional
/// modeling along the band axis, causal modeling along the time axis, each
/// stage wrapped in kernel-1 in/out projections and a residual connection.
pub struct TfMambaBlock {
    pub dim: usize,
    inter: Interaction,
    freq_norm: LayerNorm,
    freq_in: Linear,
    freq: BidirectionalMamba,
    freq_out: Linear,
    time_in: Linear,
    time: MambaLayer,
    time_out: Linear,
}

impl TfMambaBlock {
    pub fn new(
        rng: &mut ChaCha8Rng,
        dim: usize,
        expansion: usize,
        state: usize,
        conv_kernel: usize,
    ) -> TfMambaBlock {
        TfMambaBlock {
            dim,
            inter: Interaction::new(rng, dim),
            freq_norm: LayerNorm::new(dim),
            freq_in: Linear::new(rng, dim, dim, true),
            freq: BidirectionalMamba::new(rng, dim, expansion, state, conv_kernel),
            freq_out: Linear::new(rng, dim, dim, true),
            time_in: Linear::new(rng, dim, dim, true),
            time: MambaLayer::new(rng, dim, expansion, state, conv_kernel),
            time_out: Linear::new(rng, dim, dim, true),
        }
    }

    /// `host` and `companion` are `[K, T, N]`; output preserves the shape.
    pub fn forward(&self, host: &Tensor, companion: &Tensor) -> Result<Tensor> {
        let x_in = self.inter.forward(host, companion)?;
        // Frequency stage: fold time into the batch axis, scan along bands.
        let f = tensor::transpose01(&self.freq_norm.forward(&x_in));
        let f = self.freq_out.forward(&self.freq.forward(&self.freq_in.forward(&f)));
        let f_out = tensor::add(&x_in, &tensor::transpose01(&f));
        // Time stage: bands are already the batch axis, scan along frames.
        let t = self.time_out.forward(&self.time.forward(&self.time_in.forward(&f_out)));
        Ok(tensor::add(&f_out, &t))
    }

    pub fn collect_params(&self, prefix: &str, out: &mut ParamList) {
        self.inter.collect_params(&format!("{prefix}.inter"), out);
        self.freq_norm.collect_params(&format!("{prefix}.freq.norm"), out);
        self.freq_in.collect_params(&format!("{prefix}.freq.proj_in"), out);
        self.freq.collect_params(&format!("{prefix}.freq.mamba"), out);
        self.freq_out.collect_params(&format!("{prefix}.freq.proj_out"), out);
        self.time_in.collect_params(&format!("{prefix}.time.proj_in"), out);
        self.time.collect_params(&format!("{prefix}.time.mamba"), out);
        self.time_out.collect_params(&format!("{prefix}.time.proj_out"), out);
    }

    pub fn param_count(dim: usize, expansion: usize, state: usize, conv_kernel: usize) -> usize {
        Interaction::param_count(dim)
            + LayerNorm::param_count(dim)
            + 4 * Linear::param_count(dim, dim, true)
            + BidirectionalMamba::param_count(dim, expansion, state, conv_kernel)
            + MambaLayer::param_count(dim, expansion, state, conv_kernel)
    }
}

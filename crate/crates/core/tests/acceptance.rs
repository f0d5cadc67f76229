//! Acceptance suite: one test per criterion, each printing a pass line with
//! the measured value (run with `--nocapture` to see them all).

use denoise_core::data::{mix_at_snr, toy_dataset};
use denoise_core::dsp::{istft, power_compress, stft, ComplexSpectrogram, Waveform, NUM_BINS, SAMPLE_RATE};
use denoise_core::enhance::enhance_waveform;
use denoise_core::loss::{loss_total, loss_tensors, LossConfig};
use denoise_core::mamba::selective_scan;
use denoise_core::metrics::{causality_probe, si_sdr};
use denoise_core::model::{count_parameters, Model, ModelConfig, NAMED_CONFIGS};
use denoise_core::optim::PlateauSchedule;
use denoise_core::profile::{count_macs, MACS_WINDOW_128_6, PARAM_WINDOW_128_6};
use denoise_core::tensor::{self, no_grad, Tensor, TimePad};
use denoise_core::train::{train, DataConfig, ModelSection, OptimConfig, RunSection, TrainConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn criterion_01_parameter_reproduction() {
    let start = std::time::Instant::now();
    let cfg = ModelConfig::named("128-6").unwrap();
    let params = count_parameters(&cfg).unwrap() as f64;
    let (lo, hi) = PARAM_WINDOW_128_6;
    assert!(
        (lo..=hi).contains(&params),
        "criterion 1 FAIL: params(128-6) = {params} outside [{lo}, {hi}]"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "criterion 1 FAIL: took {elapsed:?}");
    println!(
        "criterion 1 PASS: count_parameters(128-6) = {:.3}M in [{:.1}M, {:.1}M] ({elapsed:?})",
        params / 1e6,
        lo / 1e6,
        hi / 1e6
    );
}

#[test]
fn criterion_02_mac_ordering_and_window() {
    let start = std::time::Instant::now();
    let mut macs = Vec::new();
    for name in NAMED_CONFIGS {
        let cfg = ModelConfig::named(name).unwrap();
        macs.push((*name, count_macs(&cfg, 1.0).unwrap()));
    }
    for pair in macs.windows(2) {
        assert!(
            pair[0].1 < pair[1].1,
            "criterion 2 FAIL: {} ({:.3e}) >= {} ({:.3e})",
            pair[0].0,
            pair[0].1,
            pair[1].0,
            pair[1].1
        );
    }
    let m128_6 = macs.iter().find(|(n, _)| *n == "128-6").unwrap().1;
    let (lo, hi) = MACS_WINDOW_128_6;
    assert!(
        (lo..=hi).contains(&m128_6),
        "criterion 2 FAIL: macs(128-6) = {m128_6:.3e} outside [{lo:.1e}, {hi:.1e}]"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "criterion 2 FAIL: took {elapsed:?}");
    let rendered: Vec<String> =
        macs.iter().map(|(n, m)| format!("{n}={:.2}G", m / 1e9)).collect();
    println!(
        "criterion 2 PASS: strict ordering {} ; 128-6 in window ({elapsed:?})",
        rendered.join(" < ")
    );
}

#[test]
fn criterion_03_causality_probe_and_mutation() {
    let cfg = ModelConfig::named("64-4").unwrap();
    let mut model = Model::new(&cfg, 41).unwrap();
    let clean = causality_probe(&model, 100, 30, 2024);
    assert!(
        clean.max_violation < 1e-5,
        "criterion 3 FAIL: reference model violation {:.3e}",
        clean.max_violation
    );
    model.set_encoder_time_padding(TimePad::Centered);
    let dirty = causality_probe(&model, 10, 30, 2024);
    assert!(
        dirty.max_violation > 1e-3,
        "criterion 3 FAIL: mutated model not flagged ({:.3e})",
        dirty.max_violation
    );
    println!(
        "criterion 3 PASS: 100 trials max violation {:.3e} < 1e-5; center-padded mutant flagged at {:.3e}",
        clean.max_violation, dirty.max_violation
    );
}

/// Plain per-step recurrence, written independently of the fused kernel.
fn naive_scan(
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    x: &[f64],
    d_skip: &[f64],
    l: usize,
    d: usize,
    n: usize,
) -> Vec<f64> {
    let mut h = vec![0.0; d * n];
    let mut y = vec![0.0; l * d];
    for t in 0..l {
        for i in 0..d {
            let dt = delta[t * d + i];
            let xv = x[t * d + i];
            let mut acc = 0.0;
            for j in 0..n {
                let abar = (dt * a[i * n + j]).exp();
                let bbar = dt * b[t * n + j];
                h[i * n + j] = abar * h[i * n + j] + bbar * xv;
                acc += c[t * n + j] * h[i * n + j];
            }
            y[t * d + i] = acc + d_skip[i] * xv;
        }
    }
    y
}

#[test]
fn criterion_04_scan_matches_recurrence_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let l = rng.random_range(1..=32);
        let d = rng.random_range(1..=4);
        let n = rng.random_range(1..=8);
        let delta: Vec<f64> = (0..l * d).map(|_| rng.random_range(0.01..1.0)).collect();
        let a: Vec<f64> = (0..d * n).map(|_| rng.random_range(-2.0..-0.05)).collect();
        let b: Vec<f64> = (0..l * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..l * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..l * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dsk: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let want = naive_scan(&delta, &a, &b, &c, &x, &dsk, l, d, n);
        let got = no_grad(|| {
            selective_scan(
                &Tensor::new(delta.clone(), &[1, l, d]),
                &Tensor::new(a.clone(), &[d, n]),
                &Tensor::new(b.clone(), &[1, l, n]),
                &Tensor::new(c.clone(), &[1, l, n]),
                &Tensor::new(x.clone(), &[1, l, d]),
                &Tensor::new(dsk.clone(), &[d]),
            )
        })
        .to_vec();
        for (g, w) in got.iter().zip(&want) {
            let rel = (g - w).abs() / w.abs().max(1e-9);
            worst = worst.max(rel);
            assert!(rel < 1e-5, "criterion 4 FAIL: case {case}: {g} vs {w} (rel {rel:.2e})");
        }
    }
    println!("criterion 4 PASS: 200 random instances, worst relative error {worst:.2e} < 1e-5");
}

#[test]
fn criterion_05_gradient_check_micro() {
    let start = std::time::Instant::now();
    let cfg = ModelConfig::micro();
    let model = Model::new(&cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let frames = 10;
    let mut noisy = ComplexSpectrogram::zeros(frames, NUM_BINS);
    for i in 0..noisy.re.len() {
        noisy.re[i] = rng.random_range(-1.0..1.0);
        noisy.im[i] = rng.random_range(-1.0..1.0);
    }
    noisy.compression_exponent = 0.5;
    let target_re = Tensor::new(
        (0..frames * NUM_BINS).map(|_| rng.random_range(-1.0..1.0)).collect(),
        &[frames, NUM_BINS],
    );
    let target_im = Tensor::new(
        (0..frames * NUM_BINS).map(|_| rng.random_range(-1.0..1.0)).collect(),
        &[frames, NUM_BINS],
    );
    let loss_cfg = LossConfig::default();
    let compute_loss = |with_grad: bool| -> (f64, Option<()>) {
        let run = || {
            let out = model.forward(&noisy).unwrap();
            let (total, _, _) =
                loss_tensors(&out.est_re, &out.est_im, &target_re, &target_im, &loss_cfg);
            total
        };
        if with_grad {
            let total = run();
            total.backward();
            (total.item(), Some(()))
        } else {
            (no_grad(run).item(), None)
        }
    };

    let params = model.params();
    for (_, t) in &params {
        t.zero_grad();
    }
    compute_loss(true);

    // Sample 50 parameters across the registry.
    let total_params: usize = params.iter().map(|(_, t)| t.len()).sum();
    let mut picks = Vec::new();
    while picks.len() < 50 {
        let mut flat = rng.random_range(0..total_params);
        for (pi, (_, t)) in params.iter().enumerate() {
            if flat < t.len() {
                picks.push((pi, flat));
                break;
            }
            flat -= t.len();
        }
    }
    // Central differences at h = 1e-5 on a loss of magnitude ~1e3 carry an
    // irreducible floating-point noise floor of roughly eps*|loss|/h ~ 1e-8,
    // so gradients below that scale are compared with an absolute floor; all
    // measurable gradients must meet the 1e-4 relative bound.
    let h = 1e-5;
    let atol = 1e-6;
    let mut worst_rel: f64 = 0.0;
    let mut floor_passes = 0usize;
    for (pi, idx) in picks {
        let (name, t) = &params[pi];
        let analytic = t.grad().expect("parameter missing gradient")[idx];
        let orig = t.data()[idx];
        t.data_mut()[idx] = orig + h;
        let up = compute_loss(false).0;
        t.data_mut()[idx] = orig - h;
        let dn = compute_loss(false).0;
        t.data_mut()[idx] = orig;
        let numeric = (up - dn) / (2.0 * h);
        let err = (analytic - numeric).abs();
        let rel = err / analytic.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
        if rel < 1e-4 {
            worst_rel = worst_rel.max(rel);
        } else {
            assert!(
                err < atol,
                "criterion 5 FAIL: {name}[{idx}]: analytic {analytic:.6e} vs numeric {numeric:.6e} (rel {rel:.2e}, abs {err:.2e})"
            );
            floor_passes += 1;
        }
    }
    // The floor exists for gradients at the FD resolution limit; it must
    // remain the exception, not the rule.
    assert!(
        floor_passes <= 5,
        "criterion 5 FAIL: {floor_passes} of 50 gradients were unmeasurably small"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "criterion 5 FAIL: took {elapsed:?}");
    println!(
        "criterion 5 PASS: 50 sampled parameters; {} met rel < 1e-4 (worst {worst_rel:.2e}), {floor_passes} sat at the f64 noise floor (< {atol:.0e} absolute) ({elapsed:?})",
        50 - floor_passes
    );
}

#[test]
fn criterion_06_round_trips() {
    let wave = Waveform::new(
        (0..16_000)
            .map(|n| {
                0.4 * (2.0 * std::f64::consts::PI * 530.0 * n as f64 / 16_000.0).sin()
                    + 0.2 * (2.0 * std::f64::consts::PI * 1735.0 * n as f64 / 16_000.0).cos()
            })
            .collect(),
        SAMPLE_RATE,
    );
    let spec = stft(&wave).unwrap();
    let rec = istft(&spec).unwrap();
    let lo = 160;
    let hi = wave.len() - 160;
    let mut sig = 0.0;
    let mut err = 0.0;
    for i in lo..hi {
        sig += wave.samples[i] * wave.samples[i];
        err += (wave.samples[i] - rec.samples[i]) * (wave.samples[i] - rec.samples[i]);
    }
    let snr = 10.0 * (sig / err.max(1e-300)).log10();
    assert!(snr > 50.0, "criterion 6 FAIL: reconstruction SNR {snr:.1} dB");

    let compressed = power_compress(&spec, 0.5).unwrap();
    let back = power_compress(&compressed, 2.0).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..spec.re.len() {
        worst = worst.max((back.re[i] - spec.re[i]).abs() / (1.0 + spec.re[i].abs()));
        worst = worst.max((back.im[i] - spec.im[i]).abs() / (1.0 + spec.im[i].abs()));
    }
    assert!(worst < 1e-6, "criterion 6 FAIL: compression round trip error {worst:.2e}");
    assert!((back.compression_exponent - 1.0).abs() < 1e-12);
    println!(
        "criterion 6 PASS: STFT/iSTFT SNR {snr:.1} dB > 50 dB; compress(0.5)∘compress(2) error {worst:.2e} < 1e-6"
    );
}

#[test]
fn criterion_07_loss_correctness() {
    let mk = |re: Vec<f64>, im: Vec<f64>| ComplexSpectrogram {
        re,
        im,
        frames: 1,
        bins: 1,
        compression_exponent: 0.5,
    };
    let s = mk(vec![0.7], vec![-0.3]);
    let (t0, r0, m0) = loss_total(&s, &s, &LossConfig::default()).unwrap();
    assert_eq!((t0, r0, m0), (0.0, 0.0, 0.0), "criterion 7 FAIL: identity not zero");

    let est = mk(vec![0.0], vec![0.0]);
    let tgt = mk(vec![3.0], vec![4.0]);
    let (total, l_ri, l_mag) = loss_total(&est, &tgt, &LossConfig::default()).unwrap();
    assert_eq!(l_ri, 25.0, "criterion 7 FAIL: l_ri = {l_ri}");
    assert_eq!(l_mag, 25.0, "criterion 7 FAIL: l_mag = {l_mag}");
    assert_eq!(total, 25.0, "criterion 7 FAIL: total = {total}");
    println!("criterion 7 PASS: identity loss is (0,0,0); single-bin case gives exactly 25");
}

#[test]
fn criterion_08_desk_scale_learning() {
    let start = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        model: ModelSection { name: Some("micro".into()), ..Default::default() },
        optim: OptimConfig { max_steps: 500, val_every: 50, ..Default::default() },
        data: DataConfig { toy: true, ..Default::default() },
        run: RunSection { dir: Some(dir.path().to_path_buf()) },
    };
    let report = train(&cfg, None).unwrap();
    let ratio = report.final_loss / report.initial_loss;
    assert!(
        ratio <= 0.10,
        "criterion 8 FAIL: loss only fell to {:.1}% of initial ({:.4e} -> {:.4e})",
        ratio * 100.0,
        report.initial_loss,
        report.final_loss
    );

    let clips = toy_dataset(cfg.optim.seed);
    let mut improvements = Vec::new();
    for clip in &clips {
        let enhanced = enhance_waveform(&report.model, &clip.noisy, false).unwrap();
        let before = si_sdr(&clip.noisy, &clip.clean).unwrap();
        let after = si_sdr(&enhanced, &clip.clean).unwrap();
        improvements.push(after - before);
    }
    let mean_gain: f64 = improvements.iter().sum::<f64>() / improvements.len() as f64;
    assert!(
        mean_gain >= 5.0,
        "criterion 8 FAIL: mean SI-SDR gain {mean_gain:.2} dB (per clip: {improvements:?})"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 900.0, "criterion 8 FAIL: took {elapsed:?}");
    println!(
        "criterion 8 PASS: loss to {:.1}% of initial within 500 steps; mean SI-SDR gain {mean_gain:.2} dB >= 5 dB ({elapsed:?})",
        ratio * 100.0
    );
}

#[test]
fn criterion_09_mixer_fidelity() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 48_000;
    let clean = Waveform::new(
        (0..n).map(|i| (2.0 * std::f64::consts::PI * 430.0 * i as f64 / 16_000.0).sin() * 0.3).collect(),
        SAMPLE_RATE,
    );
    let noise = Waveform::new((0..n).map(|_| rng.random_range(-0.3..0.3)).collect(), SAMPLE_RATE);
    let mut worst_snr_err: f64 = 0.0;
    let mut worst_sdr_err: f64 = 0.0;
    for target in [-5.0, 0.0, 5.0] {
        let mix = mix_at_snr(&clean, &noise, target).unwrap();
        let resid: Vec<f64> =
            mix.samples.iter().zip(&clean.samples).map(|(m, c)| m - c).collect();
        let e_c = clean.energy();
        let e_n: f64 = resid.iter().map(|v| v * v).sum();
        let measured = 10.0 * (e_c / e_n).log10();
        worst_snr_err = worst_snr_err.max((measured - target).abs());
        let sdr = si_sdr(&mix, &clean).unwrap();
        worst_sdr_err = worst_sdr_err.max((sdr - target).abs());
    }
    assert!(worst_snr_err < 0.01, "criterion 9 FAIL: measured SNR off by {worst_snr_err:.4} dB");
    assert!(worst_sdr_err < 0.5, "criterion 9 FAIL: SI-SDR off by {worst_sdr_err:.3} dB");
    println!(
        "criterion 9 PASS: SNR exact to {worst_snr_err:.2e} dB (< 0.01); SI-SDR within {worst_sdr_err:.3} dB (< 0.5) of the −5/0/5 grid"
    );
}

#[test]
fn criterion_10_plateau_schedule_halves() {
    // The exact schedule semantics: initial 5e-4, patience 2, factor 0.5.
    // Two stagnant validations halve the rate exactly once.
    let mut schedule = PlateauSchedule::new(5e-4, 0.5, 2);
    schedule.observe(1.00);
    assert_eq!(schedule.lr, 5e-4);
    schedule.observe(1.01);
    assert_eq!(schedule.lr, 5e-4, "criterion 10 FAIL: halved after one stagnant eval");
    schedule.observe(1.02);
    assert_eq!(schedule.lr, 2.5e-4, "criterion 10 FAIL: lr is {}", schedule.lr);

    // A real run with two stagnating validations: resume from a checkpoint
    // whose schedule already holds an unbeatable best, so both subsequent
    // validations are stale by construction and the trainer must emit
    // exactly one halving, 5e-4 -> 2.5e-4.
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        model: ModelSection { name: Some("micro".into()), ..Default::default() },
        optim: OptimConfig { max_steps: 4, val_every: 2, ..Default::default() },
        data: DataConfig { toy: true, ..Default::default() },
        run: RunSection { dir: Some(dir.path().to_path_buf()) },
    };
    let model = Model::new(&cfg.model.resolve().unwrap(), cfg.optim.seed).unwrap();
    let mut rigged = PlateauSchedule::new(5e-4, 0.5, 2);
    rigged.best = Some(0.0);
    let seed_ckpt = dir.path().join("seed.ckpt");
    denoise_core::checkpoint::save_model(
        &seed_ckpt,
        &model,
        Some(&denoise_core::checkpoint::TrainerMeta {
            schedule: rigged,
            adam_step: 0,
            global_step: 0,
        }),
    )
    .unwrap();
    let report = train(&cfg, Some(&seed_ckpt)).unwrap();
    assert_eq!(report.lr_trace.len(), 2, "criterion 10 FAIL: expected two validations");
    assert_eq!(
        report.lr_trace[0].1, 5e-4,
        "criterion 10 FAIL: lr changed after a single stagnant validation"
    );
    assert_eq!(
        report.lr_trace[1].1, 2.5e-4,
        "criterion 10 FAIL: lr is {} after two stagnant validations",
        report.lr_trace[1].1
    );
    println!(
        "criterion 10 PASS: a run with two stagnating validations halves the lr exactly 5e-4 -> 2.5e-4"
    );
}

// Determinism spot check spanning the whole stack (not a numbered
// criterion, but the per-command contract).
#[test]
fn forward_is_deterministic_across_model_rebuilds() {
    let cfg = ModelConfig::micro();
    let a = Model::new(&cfg, 77).unwrap();
    let b = Model::new(&cfg, 77).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut spec = ComplexSpectrogram::zeros(8, NUM_BINS);
    for i in 0..spec.re.len() {
        spec.re[i] = rng.random_range(-1.0..1.0);
        spec.im[i] = rng.random_range(-1.0..1.0);
    }
    spec.compression_exponent = 0.5;
    let (ya, yb) = no_grad(|| (a.forward(&spec).unwrap(), b.forward(&spec).unwrap()));
    assert_eq!(ya.est_re.to_vec(), yb.est_re.to_vec());
    let _ = tensor::sum_all(&ya.est_im); // exercise the public surface
}

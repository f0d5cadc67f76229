//! Training: config file schema, the optimization loop, metrics history and
//! checkpoint management.
//!
//! Losses are computed in the compressed spectral domain against compressed
//! clean targets. Runs are fully determined by `(config, seed)`.

use crate::checkpoint::{self, TrainerMeta};
use crate::data::{self, ClipPair};
use crate::dsp::{power_compress, stft, ComplexSpectrogram};
use crate::error::{Error, Result};
use crate::loss::{loss_tensors, LossConfig};
use crate::model::{Model, ModelConfig};
use crate::optim::{Adam, PlateauSchedule};
use crate::tensor::{self, no_grad, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub optim: OptimConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub run: RunSection,
}

/// Model selection: a named config ("64-4" ... "256-6", "micro") and/or
/// explicit field overrides.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: Option<String>,
    pub embed_dim: Option<usize>,
    pub depth: Option<usize>,
    pub band_scheme: Option<String>,
    pub d_state: Option<usize>,
    pub expansion: Option<usize>,
    pub conv_kernel: Option<usize>,
    pub decoder_hidden_mult: Option<usize>,
}

impl ModelSection {
    pub fn resolve(&self) -> Result<ModelConfig> {
        let mut cfg = match self.name.as_deref() {
            Some("micro") => ModelConfig::micro(),
            Some(name) => ModelConfig::named(name)?,
            None => {
                let (Some(n), Some(l)) = (self.embed_dim, self.depth) else {
                    return Err(Error::Config(
                        "model section needs either `name` or both `embed_dim` and `depth`".into(),
                    ));
                };
                ModelConfig::new(n, l, self.band_scheme.as_deref().unwrap_or("uniform8"))
            }
        };
        if let Some(v) = self.embed_dim {
            cfg.embed_dim = v;
        }
        if let Some(v) = self.depth {
            cfg.depth = v;
        }
        if let Some(v) = &self.band_scheme {
            cfg.band_scheme = v.clone();
        }
        if let Some(v) = self.d_state {
            cfg.d_state = v;
        }
        if let Some(v) = self.expansion {
            cfg.expansion = v;
        }
        if let Some(v) = self.conv_kernel {
            cfg.conv_kernel = v;
        }
        if let Some(v) = self.decoder_hidden_mult {
            cfg.decoder_hidden_mult = v;
        }
        cfg.layout()?; // validate the scheme early
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub initial_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub loss_beta: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub val_every: usize,
    pub plateau_patience: usize,
    pub lr_factor: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            initial_lr: 5e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            loss_beta: 0.5,
            batch_size: 4,
            max_steps: 500,
            val_every: 50,
            plateau_patience: 2,
            lr_factor: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Use the built-in eight-clip toy set instead of corpora on disk.
    pub toy: bool,
    pub clean_dir: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
    pub snrs_db: Vec<f64>,
    pub segment_seconds: f64,
    pub train_clips: usize,
    pub val_clips: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            toy: false,
            clean_dir: None,
            noise_dir: None,
            snrs_db: data::TOY_SNRS_DB.to_vec(),
            segment_seconds: 1.0,
            train_clips: 24,
            val_clips: 6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Output directory; when absent the CLI falls back to
    /// `$DENOISE_RUN_DIR/<config-stem>`.
    pub dir: Option<PathBuf>,
}

/// Parses a TOML training config; unknown keys are rejected by name.
pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Validates referenced paths before any compute happens.
pub fn validate_data_paths(cfg: &TrainConfig) -> Result<()> {
    if cfg.data.toy {
        return Ok(());
    }
    let (Some(clean), Some(noise)) = (&cfg.data.clean_dir, &cfg.data.noise_dir) else {
        return Err(Error::Config(
            "data section needs `toy = true` or both `clean_dir` and `noise_dir`".into(),
        ));
    };
    for dir in [clean, noise] {
        if !dir.is_dir() {
            return Err(Error::Config(format!("dataset path {} does not exist", dir.display())));
        }
    }
    Ok(())
}

struct PreparedClip {
    noisy: ComplexSpectrogram,
    target_re: Tensor,
    target_im: Tensor,
}

fn prepare_clip(pair: &ClipPair, exponent: f64) -> Result<PreparedClip> {
    let noisy = power_compress(&stft(&pair.noisy)?, exponent)?;
    let clean = power_compress(&stft(&pair.clean)?, exponent)?;
    let t = clean.frames;
    let f = clean.bins;
    Ok(PreparedClip {
        noisy,
        target_re: Tensor::new(clean.re, &[t, f]),
        target_im: Tensor::new(clean.im, &[t, f]),
    })
}

fn mean_loss(
    model: &Model,
    clips: &[PreparedClip],
    indices: &[usize],
    loss_cfg: &LossConfig,
) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for &i in indices {
        let clip = &clips[i];
        let out = model.forward(&clip.noisy)?;
        let (total, _, _) =
            loss_tensors(&out.est_re, &out.est_im, &clip.target_re, &clip.target_im, loss_cfg);
        acc = Some(match acc {
            None => total,
            Some(prev) => tensor::add(&prev, &total),
        });
    }
    let acc = acc.ok_or_else(|| Error::Config("empty batch".into()))?;
    Ok(tensor::scale(&acc, 1.0 / indices.len() as f64))
}

fn eval_loss(model: &Model, clips: &[PreparedClip], loss_cfg: &LossConfig) -> Result<f64> {
    let indices: Vec<usize> = (0..clips.len()).collect();
    no_grad(|| mean_loss(model, clips, &indices, loss_cfg).map(|t| t.item()))
}

/// Outcome of a training run.
pub struct TrainReport {
    pub model: Model,
    pub steps_run: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Learning rate after each validation, `(step, lr)`.
    pub lr_trace: Vec<(usize, f64)>,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub history_path: PathBuf,
}

fn trainer_checkpoint(
    path: &Path,
    model: &Model,
    adam: &Adam,
    meta: &TrainerMeta,
) -> Result<()> {
    let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = model
        .params()
        .iter()
        .map(|(name, t)| (name.clone(), t.shape().to_vec(), t.to_vec()))
        .collect();
    for (name, m, v) in adam.export_state() {
        tensors.push((format!("optim.m.{name}"), vec![m.len()], m));
        tensors.push((format!("optim.v.{name}"), vec![v.len()], v));
    }
    checkpoint::save(path, &model.config, &tensors, Some(meta))
}

/// Runs training as described by `cfg`, optionally resuming from a trainer
/// checkpoint (parameters, Adam moments and schedule state all continue).
pub fn train(cfg: &TrainConfig, resume: Option<&Path>) -> Result<TrainReport> {
    validate_data_paths(cfg)?;
    let model_cfg = cfg.model.resolve()?;
    let loss_cfg = LossConfig::new(cfg.optim.loss_beta)?;
    let run_dir = cfg.run.dir.as_ref().ok_or_else(|| {
        Error::Config("no run directory: set `run.dir` or the DENOISE_RUN_DIR env var".into())
    })?;
    fs::create_dir_all(run_dir)?;

    // Dataset: the toy set trains and validates on the same eight clips (it
    // is an overfitting experiment); corpora get a held-out split.
    let (train_pairs, val_pairs) = if cfg.data.toy {
        let pairs = data::toy_dataset(cfg.optim.seed);
        (pairs.clone(), pairs)
    } else {
        let clean = data::load_wav_dir(cfg.data.clean_dir.as_ref().unwrap())?;
        let noise = data::load_wav_dir(cfg.data.noise_dir.as_ref().unwrap())?;
        let segment = (cfg.data.segment_seconds * crate::dsp::SAMPLE_RATE as f64) as usize;
        let train = data::synthesize_pairs(
            &clean,
            &noise,
            &cfg.data.snrs_db,
            segment,
            cfg.data.train_clips,
            cfg.optim.seed,
        )?;
        let val = data::synthesize_pairs(
            &clean,
            &noise,
            &cfg.data.snrs_db,
            segment,
            cfg.data.val_clips,
            cfg.optim.seed.wrapping_add(1),
        )?;
        (train, val)
    };
    let train_clips: Vec<PreparedClip> = train_pairs
        .iter()
        .map(|p| prepare_clip(p, model_cfg.compression_exponent))
        .collect::<Result<_>>()?;
    let val_clips: Vec<PreparedClip> = val_pairs
        .iter()
        .map(|p| prepare_clip(p, model_cfg.compression_exponent))
        .collect::<Result<_>>()?;

    let model = Model::new(&model_cfg, cfg.optim.seed)?;
    let mut adam = Adam::new(
        model.params(),
        cfg.optim.initial_lr,
        cfg.optim.adam_beta1,
        cfg.optim.adam_beta2,
    );
    let mut schedule =
        PlateauSchedule::new(cfg.optim.initial_lr, cfg.optim.lr_factor, cfg.optim.plateau_patience);
    let mut start_step = 0usize;
    if let Some(resume_path) = resume {
        let ckpt = checkpoint::load(resume_path)?;
        if ckpt.config != model_cfg {
            return Err(Error::Checkpoint(
                "resume checkpoint was trained with a different model config".into(),
            ));
        }
        checkpoint::load_into_model(&ckpt, &model)?;
        let meta = ckpt.trainer.ok_or_else(|| {
            Error::Checkpoint("resume checkpoint carries no trainer state".into())
        })?;
        let moments: Vec<(String, Vec<f64>, Vec<f64>)> = model
            .params()
            .iter()
            .filter_map(|(name, _)| {
                let m = ckpt.tensors.iter().find(|(n, _, _)| n == &format!("optim.m.{name}"))?;
                let v = ckpt.tensors.iter().find(|(n, _, _)| n == &format!("optim.v.{name}"))?;
                Some((name.clone(), m.2.clone(), v.2.clone()))
            })
            .collect();
        adam.restore_state(&moments, meta.adam_step);
        schedule = meta.schedule;
        adam.set_lr(schedule.lr);
        start_step = meta.global_step;
    }

    let history_path = run_dir.join("history.csv");
    let mut history = fs::File::create(&history_path)?;
    writeln!(history, "step,train_loss,val_loss,lr")?;
    let best_path = run_dir.join("best.ckpt");
    let last_path = run_dir.join("last.ckpt");

    let initial_loss = eval_loss(&model, &train_clips, &loss_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.optim.seed.wrapping_add(start_step as u64));
    let mut order: Vec<usize> = (0..train_clips.len()).collect();
    let mut cursor = order.len(); // force an initial shuffle
    let mut lr_trace = Vec::new();

    for step in (start_step + 1)..=(start_step + cfg.optim.max_steps) {
        let mut batch = Vec::with_capacity(cfg.optim.batch_size);
        for _ in 0..cfg.optim.batch_size.min(train_clips.len()) {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        adam.zero_grads();
        let loss = mean_loss(&model, &train_clips, &batch, &loss_cfg)?;
        let loss_val = loss.item();
        if !loss_val.is_finite() {
            return Err(Error::Diverged { step });
        }
        loss.backward();
        adam.step();

        let mut val_field = String::new();
        if step % cfg.optim.val_every == 0 || step == start_step + cfg.optim.max_steps {
            let val_loss = eval_loss(&model, &val_clips, &loss_cfg)?;
            if !val_loss.is_finite() {
                return Err(Error::Diverged { step });
            }
            val_field = format!("{val_loss:.6e}");
            let (improved, _) = schedule.observe(val_loss);
            adam.set_lr(schedule.lr);
            lr_trace.push((step, schedule.lr));
            let meta = TrainerMeta {
                schedule: schedule.clone(),
                adam_step: adam.step_count(),
                global_step: step,
            };
            if improved {
                trainer_checkpoint(&best_path, &model, &adam, &meta)?;
            }
            trainer_checkpoint(&last_path, &model, &adam, &meta)?;
        }
        writeln!(history, "{step},{loss_val:.6e},{val_field},{:.6e}", adam.lr())?;
    }
    history.flush()?;
    let final_loss = eval_loss(&model, &train_clips, &loss_cfg)?;
    if !best_path.exists() {
        // Degenerate runs (max_steps < val_every) still leave a checkpoint.
        let meta = TrainerMeta {
            schedule: schedule.clone(),
            adam_step: adam.step_count(),
            global_step: start_step + cfg.optim.max_steps,
        };
        trainer_checkpoint(&best_path, &model, &adam, &meta)?;
        trainer_checkpoint(&last_path, &model, &adam, &meta)?;
    }
    Ok(TrainReport {
        model,
        steps_run: cfg.optim.max_steps,
        initial_loss,
        final_loss,
        lr_trace,
        best_checkpoint: best_path,
        last_checkpoint: last_path,
        history_path,
    })
}

//! L1 training with Adam, step-halving schedules and checkpointing.
//!
//! Batches are a pure function of `(seed, iteration)`, so the sequence of
//! samples does not depend on how many data workers produce them.

mod optim;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::Tape;
use crate::data::{collate, extract_patch, sample_patch, Augmentation, DataError, Dataset};
use crate::model::{Cfsr, ModelError, StoreError, StoreMode};
use crate::tensor::{Tensor, TensorError};

pub use optim::{adam_step, clip_grad_norm, grad_norm, AdamConfig, OptimizerState};

pub const LOG_FILE: &str = "train_log.csv";
pub const LOG_HEADER: &str = "iter,loss,lr,elapsed_s";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no gradient for parameter {0}")]
    MissingGradient(String),
    #[error("non-finite loss {value} at iteration {iter}")]
    NonFiniteLoss { iter: usize, value: f64 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Halve the rate once after each listed number of completed iterations.
    HalveAt(Vec<usize>),
}

impl LrSchedule {
    /// Halving after 50%, 75% and 90% of `total` iterations.
    pub fn default_for(total: usize) -> Self {
        LrSchedule::HalveAt(vec![total / 2, total * 3 / 4, total * 9 / 10])
    }

    /// Rate used by 1-based iteration `iter`.
    pub fn lr_at(&self, lr_init: f64, iter: usize) -> f64 {
        match self {
            LrSchedule::Constant => lr_init,
            LrSchedule::HalveAt(ms) => {
                let halvings = ms.iter().filter(|&&m| iter > m).count();
                lr_init * 0.5f64.powi(halvings as i32)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// LR patch side.
    pub patch_size: usize,
    pub lr_init: f64,
    pub adam: AdamConfig,
    pub total_iters: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    /// Checkpoint period in iterations; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub clip_norm: Option<f64>,
    pub augment: bool,
    pub workers: usize,
}

impl TrainConfig {
    pub fn new(total_iters: usize) -> Self {
        Self {
            batch_size: 16,
            patch_size: 64,
            lr_init: 2e-4,
            adam: AdamConfig::default(),
            total_iters,
            schedule: LrSchedule::default_for(total_iters),
            seed: 0,
            checkpoint_every: 0,
            clip_norm: None,
            augment: true,
            workers: 1,
        }
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patch_size == 0 {
            return bad("patch_size must be at least 1");
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return bad("lr_init must be positive");
        }
        let AdamConfig { beta1, beta2, eps } = self.adam;
        if !(0.0 < beta1 && beta1 < 1.0 && 0.0 < beta2 && beta2 < 1.0) {
            return bad("betas must lie in (0, 1)");
        }
        if !(eps > 0.0) {
            return bad("eps must be positive");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip norm must be positive");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        Ok(())
    }
}

/// Deterministic batch for 1-based iteration `iter`.
pub fn draw_batch(dataset: &Dataset, cfg: &TrainConfig, iter: usize) -> Result<(Tensor, Tensor), DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(iter as u64);
    let r = dataset.scale();
    let p = cfg.patch_size;
    let mut samples = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let pair = &dataset.pairs()[rng.gen_range(0..dataset.len())];
        let s = if cfg.augment {
            sample_patch(&pair.hr, &pair.lr, p, r, &mut rng)?
        } else {
            let y = rng.gen_range(0..=pair.lr.height().saturating_sub(p));
            let x = rng.gen_range(0..=pair.lr.width().saturating_sub(p));
            extract_patch(&pair.hr, &pair.lr, p, r, (y, x), Augmentation::IDENTITY)?
        };
        samples.push(s);
    }
    collate(&samples)
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Loss of each iteration before its update.
    pub losses: Vec<f64>,
    pub lrs: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_name(iter: usize) -> String {
    format!("ckpt_{iter}.cfsrwt")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

struct Output {
    dir: PathBuf,
    log: BufWriter<File>,
    log_path: PathBuf,
}

impl Output {
    fn create(dir: &Path) -> Result<Self, TrainError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let log_path = dir.join(LOG_FILE);
        let mut log = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);
        writeln!(log, "{LOG_HEADER}").map_err(io_err(&log_path))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log,
            log_path,
        })
    }

    fn checkpoint(&mut self, model: &Cfsr, iter: usize) -> Result<PathBuf, TrainError> {
        self.log.flush().map_err(io_err(&self.log_path))?;
        let path = self.dir.join(checkpoint_name(iter));
        model.to_store().save(&path)?;
        Ok(path)
    }
}

/// Trains `model` in place. With `out_dir`, writes `train_log.csv` and
/// checkpoints `ckpt_{iter}.cfsrwt` every `checkpoint_every` iterations and
/// after the last one.
pub fn train_loop(
    model: &mut Cfsr,
    dataset: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if model.mode() != StoreMode::Branched {
        return Err(ModelError::State("training requires branched weights".into()).into());
    }
    if dataset.scale() != model.config().scale {
        return Err(TrainError::InvalidConfig(format!(
            "dataset scale {} does not match model scale {}",
            dataset.scale(),
            model.config().scale
        )));
    }
    let smallest = dataset.min_lr_side();
    if cfg.patch_size > smallest {
        return Err(DataError::PatchTooLarge {
            patch: cfg.patch_size,
            lr: (smallest, smallest),
        }
        .into());
    }

    let mut out = out_dir.map(Output::create).transpose()?;
    let mut report = TrainReport::default();
    if cfg.total_iters == 0 {
        if let Some(o) = out.as_mut() {
            report.checkpoints.push(o.checkpoint(model, 0)?);
        }
        return Ok(report);
    }

    let start = Instant::now();
    let mut state = OptimizerState::new();
    let n = cfg.workers.min(cfg.total_iters);
    std::thread::scope(|scope| -> Result<(), TrainError> {
        let receivers: Vec<_> = (0..n)
            .map(|w| {
                let (tx, rx) = mpsc::sync_channel(2);
                scope.spawn(move || {
                    for iter in (w + 1..=cfg.total_iters).step_by(n) {
                        if tx.send(draw_batch(dataset, cfg, iter)).is_err() {
                            break;
                        }
                    }
                });
                rx
            })
            .collect();

        for iter in 1..=cfg.total_iters {
            let (lr_batch, hr_batch) = receivers[(iter - 1) % n]
                .recv()
                .expect("data worker terminated early")?;
            let mut tape = Tape::<f32>::new();
            let x = tape.constant(lr_batch);
            let y = model.forward(&mut tape, x)?;
            let target = tape.constant(hr_batch);
            let loss = tape.l1_loss(y, target)?;
            let value = tape.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { iter, value });
            }
            tape.backward(loss)?;
            let mut grads = tape.param_grads();
            drop(tape);
            if let Some(max) = cfg.clip_norm {
                clip_grad_norm(&mut grads, max);
            }
            let lr = cfg.schedule.lr_at(cfg.lr_init, iter);
            adam_step(model, &grads, &mut state, lr, cfg.adam)?;
            report.losses.push(value);
            report.lrs.push(lr);

            if let Some(o) = out.as_mut() {
                let elapsed = start.elapsed().as_secs_f64();
                writeln!(o.log, "{iter},{value:.8},{lr:e},{elapsed:.3}").map_err(io_err(&o.log_path))?;
                let periodic = cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0;
                if periodic || iter == cfg.total_iters {
                    report.checkpoints.push(o.checkpoint(model, iter)?);
                }
            }
            if iter % 100 == 0 {
                log::info!("iter {iter}: loss {value:.6} lr {lr:e}");
            }
        }
        Ok(())
    })?;
    Ok(report)
}

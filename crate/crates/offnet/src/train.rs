//! SGD-with-momentum training with deterministic seeding, validation
//! selection, and checkpointing.
//!
//! One seed governs the whole run: parameter initialization happens when the
//! model is built (same seed), and each epoch shuffles with an independent
//! stream split off that seed, so a fixed seed reproduces the entire
//! trajectory bit for bit.

use std::path::PathBuf;
use std::rc::Rc;

use thiserror::Error;

use crate::dataset::{prepare_sample, DatasetError, FrameRecord, Sample};
use crate::eval::{evaluate_samples, EvalError};
use crate::model::{batch_mean, bce_loss, ModelError, OffNet};
use crate::rng::SplitMix64;
use crate::tensor::{Parameter, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("train config error: {0}")]
    Config(String),
    #[error("missing gradient for parameter {0}; run backward() first")]
    MissingGrad(String),
    #[error("frame {sequence}/{frame}: {source}")]
    Frame {
        sequence: String,
        frame: String,
        #[source]
        source: DatasetError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
}

impl TrainConfig {
    pub fn new(epochs: usize, checkpoint_dir: PathBuf) -> Self {
        TrainConfig {
            learning_rate: 0.001,
            momentum: 0.9,
            batch_size: 8,
            epochs,
            seed: 0,
            checkpoint_dir,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(TrainError::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "learning_rate = {}\nmomentum = {}\nbatch_size = {}\nepochs = {}\nseed = {}\ncheckpoint_dir = {}\n",
            self.learning_rate,
            self.momentum,
            self.batch_size,
            self.epochs,
            self.seed,
            self.checkpoint_dir.display()
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::new(1, PathBuf::from("checkpoints"));
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                TrainError::Config(format!("line {}: expected 'key = value'", idx + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad =
                |what: &str| TrainError::Config(format!("line {}: bad {what} {value:?}", idx + 1));
            match key {
                "learning_rate" => cfg.learning_rate = value.parse().map_err(|_| bad("float"))?,
                "momentum" => cfg.momentum = value.parse().map_err(|_| bad("float"))?,
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad("integer"))?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad("integer"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("integer"))?,
                "checkpoint_dir" => cfg.checkpoint_dir = PathBuf::from(value),
                other => {
                    return Err(TrainError::Config(format!(
                        "line {}: unknown key {other:?}",
                        idx + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One optimizer update: `v <- momentum * v + grad; theta <- theta - lr * v`,
/// then gradients are zeroed. Every parameter must carry a gradient.
pub fn sgdm_step(params: &[Rc<Parameter>], lr: f32, momentum: f32) -> Result<()> {
    for p in params {
        let grad = p
            .tensor()
            .grad()
            .ok_or_else(|| TrainError::MissingGrad(p.name().to_string()))?;
        let mut theta = p.tensor().to_vec();
        {
            let mut v = p.velocity_mut();
            for i in 0..theta.len() {
                v[i] = momentum * v[i] + grad[i];
                theta[i] -= lr * v[i];
            }
        }
        p.tensor().set_data(&theta)?;
        p.tensor().zero_grad();
    }
    Ok(())
}

/// Load and preprocess every frame of a split up front; training then
/// iterates in memory. Failures abort with the frame identity.
pub fn prepare_samples(records: &[FrameRecord], w: usize, h: usize) -> Result<Vec<Sample>> {
    records
        .iter()
        .map(|r| {
            prepare_sample(r, w, h).map_err(|source| TrainError::Frame {
                sequence: r.sequence_id.clone(),
                frame: r.frame_id.clone(),
                source,
            })
        })
        .collect()
}

/// One pass over the samples in seeded-shuffled mini-batches; returns the
/// mean batch loss. The last incomplete batch is kept.
pub fn train_epoch(
    model: &OffNet,
    samples: &[Sample],
    config: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(TrainError::Config("train split is empty".into()));
    }
    let params = model.parameters();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    SplitMix64::new(config.seed)
        .split(epoch as u64 + 1)
        .shuffle(&mut order);

    let mut total = 0.0f64;
    let mut batches = 0usize;
    for chunk in order.chunks(config.batch_size) {
        let mut losses = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let sample = &samples[i];
            let probs = model.forward(&sample.image, &sample.normals)?;
            losses.push(bce_loss(&probs, &sample.gt)?);
        }
        let loss = batch_mean(&losses)?;
        total += loss.item()? as f64;
        loss.backward()?;
        sgdm_step(&params, config.learning_rate, config.momentum)?;
        batches += 1;
    }
    Ok(total / batches as f64)
}

/// Tracks the best validation score; ties keep the earlier epoch.
#[derive(Debug, Default)]
pub struct BestTracker {
    pub best_epoch: Option<usize>,
    pub best_score: f64,
}

impl BestTracker {
    pub fn update(&mut self, epoch: usize, score: f64) -> bool {
        if self.best_epoch.is_none() || score > self.best_score {
            self.best_epoch = Some(epoch);
            self.best_score = score;
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_fscore: f64,
}

#[derive(Debug)]
pub struct FitOutcome {
    pub best_path: PathBuf,
    pub last_path: PathBuf,
    pub best_epoch: usize,
    pub best_val_fscore: f64,
    pub history: Vec<EpochRecord>,
}

/// Full training run: epochs of [`train_epoch`], validation F-score after
/// each, a `best.ckpt` (max validation F-score, earlier epoch on ties), a
/// `last.ckpt`, and a plain-text metrics log.
pub fn fit(
    model: &OffNet,
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
) -> Result<FitOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Config(
            "fit requires non-empty train and val splits".into(),
        ));
    }
    std::fs::create_dir_all(&config.checkpoint_dir).map_err(|source| TrainError::Io {
        path: config.checkpoint_dir.display().to_string(),
        source,
    })?;
    let best_path = config.checkpoint_dir.join("best.ckpt");
    let last_path = config.checkpoint_dir.join("last.ckpt");
    let log_path = config.checkpoint_dir.join("metrics.log");
    let mut log = String::new();

    let mut tracker = BestTracker::default();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let train_loss = train_epoch(model, train, config, epoch)?;
        let val_fscore = evaluate_samples(model, val, 0.5)?.pooled.f_score;
        log.push_str(&format!(
            "epoch {epoch} train_loss {train_loss:.6} val_fscore {val_fscore:.6}\n"
        ));
        if tracker.update(epoch, val_fscore) {
            model.save(&best_path)?;
        }
        model.save(&last_path)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_fscore,
        });
    }
    std::fs::write(&log_path, log).map_err(|source| TrainError::Io {
        path: log_path.display().to_string(),
        source,
    })?;
    Ok(FitOutcome {
        best_path,
        last_path,
        best_epoch: tracker.best_epoch.unwrap_or(0),
        best_val_fscore: tracker.best_score,
        history,
    })
}

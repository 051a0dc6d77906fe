//! The training loop.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{heading_loss_graph, latent_loss_graph};
use super::{Batch, InputFrame, Objective, TrainConfig, TrainError, WindowData};
use crate::autodiff::{Adam, ParamStore, PlateauScheduler, Tape, Var};
use crate::models::{Model, TrainingMeta};
use crate::par::Exec;
use crate::seqdata::SampleWindow;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's updates; `None` if every batch
    /// was masked out.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model,
    pub meta: TrainingMeta,
    pub log: Vec<EpochRecord>,
}

/// Writes `epoch,train_loss,val_loss,lr` rows.
pub fn write_log_csv(log: &[EpochRecord], path: impl AsRef<Path>) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss", "lr"])?;
    for r in log {
        let train = r.train_loss.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.epoch.to_string(), train, r.val_loss.to_string(), r.lr.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// A model together with its optimizer and objective.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Model,
    cfg: TrainConfig,
    adam: Adam,
    exec: Exec,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig, exec: Exec) -> Result<Self, TrainError> {
        cfg.validate()?;
        if model.config() != &cfg.model {
            return Err(TrainError::InvalidConfig("model does not match the training config".into()));
        }
        let adam = Adam::new(cfg.lr);
        Ok(Self { model, cfg, adam, exec })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn lr(&self) -> f64 {
        self.adam.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.adam.lr = lr;
    }

    /// Builds the loss graph for `batch` with parameters from `store`.
    pub fn loss_graph(
        model: &Model,
        cfg: &TrainConfig,
        dt: f64,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &Batch,
    ) -> Result<Var, TrainError> {
        let x = tape.constant(batch.x.clone());
        let target = tape.constant(batch.target.clone());
        let loss = match cfg.objective {
            Objective::Strided | Objective::DenseVelocity => {
                let y = model.forward_window_with(tape, store, x)?;
                tape.mse(y, target)?
            }
            Objective::Latent => {
                let (y, _) = model.forward_seq_with(tape, store, x, None)?;
                let s = cfg.loss_frames();
                let mut v = tape.slice(y, 2, cfg.window - s, s)?;
                if let (InputFrame::Local, Some(rot)) = (cfg.frame, &batch.rotations) {
                    v = tape.frame_transform(v, rot.clone(), 2)?;
                }
                let latent = tape.scale(v, dt);
                latent_loss_graph(tape, latent, target)?
            }
            Objective::DirectMse => {
                let (y, _) = model.forward_seq_with(tape, store, x, None)?;
                let s = cfg.loss_frames();
                let v = tape.slice(y, 2, cfg.window - s, s)?;
                tape.mse(v, target)?
            }
            Objective::Heading => {
                let (y, _) = model.forward_seq_with(tape, store, x, None)?;
                heading_loss_graph(tape, y, target, cfg.lambda_norm)?
            }
        };
        Ok(loss)
    }

    /// One optimizer update from `windows`. Heading windows failing the
    /// update mask are dropped first; if none remain nothing changes and
    /// `None` is returned. Otherwise returns the batch loss.
    pub fn step(&mut self, data: &WindowData<'_>, windows: &[SampleWindow], tape_seed: u64) -> Result<Option<f64>, TrainError> {
        let kept: Vec<SampleWindow> = if self.cfg.objective == Objective::Heading {
            windows.iter().filter(|w| data.update_mask(w)).copied().collect()
        } else {
            windows.to_vec()
        };
        if kept.is_empty() {
            return Ok(None);
        }
        let batch = Batch::assemble(data, &kept, &self.cfg, self.exec)?;
        let mut tape = Tape::new(true, tape_seed).with_exec(self.exec);
        let loss = Self::loss_graph(&self.model, &self.cfg, data.dt(), &mut tape, self.model.store(), &batch)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(TrainError::DivergedLoss { epoch: 0, batch: 0 });
        }
        let store = self.model.store_mut();
        store.zero_grad();
        tape.backward(loss, store)?;
        if !store.clip_grad_norm(self.cfg.clip_norm).is_finite() {
            return Err(TrainError::DivergedLoss { epoch: 0, batch: 0 });
        }
        self.adam.step(store);
        tape.apply_buffer_updates(store);
        Ok(Some(value))
    }

    /// Eval-mode loss summed over `windows` (no masking), and the number
    /// of windows.
    pub fn evaluate(&self, data: &WindowData<'_>, windows: &[SampleWindow]) -> Result<f64, TrainError> {
        let mut total = 0.0;
        for chunk in windows.chunks(self.cfg.batch_size) {
            let batch = Batch::assemble(data, chunk, &self.cfg, self.exec)?;
            let mut tape = Tape::new(false, 0).with_exec(self.exec);
            let loss = Self::loss_graph(&self.model, &self.cfg, data.dt(), &mut tape, self.model.store(), &batch)?;
            total += tape.value(loss).item() * chunk.len() as f64;
        }
        Ok(total / windows.len().max(1) as f64)
    }
}

fn tape_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((epoch as u64) << 32 | batch as u64)
}

/// Trains `model` on `train`, selecting the epoch with the lowest loss on
/// `val`. Deterministic in `cfg.seed` and independent of `exec`.
///
/// Each epoch draws fresh windows and yaws from a generator seeded by
/// `(seed, epoch)` and shuffles them; validation windows are drawn once.
pub fn fit(
    model: Model,
    train: &[crate::seqdata::SensorSequence],
    val: &[crate::seqdata::SensorSequence],
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(model, cfg.clone(), exec)?;
    let train_data = WindowData::new(train, cfg, exec)?;
    let val_data = WindowData::new(val, cfg, exec)?;
    if (train_data.dt() - val_data.dt()).abs() > 1e-12 && !val.is_empty() && !train.is_empty() {
        return Err(TrainError::InvalidConfig("train and validation rates differ".into()));
    }
    let cap = cfg.max_batches_per_epoch.map(|b| b * cfg.batch_size);

    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut val_windows = val_data.sample(cfg, &mut val_rng);
    if let Some(c) = cap {
        val_windows.truncate(c);
    }
    if val_windows.is_empty() {
        return Err(TrainError::EmptyDataset("no validation windows".into()));
    }

    let mut scheduler = PlateauScheduler::new(cfg.plateau_factor, cfg.patience);
    let mut log = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    for epoch in 0..cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut windows = train_data.sample(cfg, &mut rng);
        if let Some(c) = cap {
            windows.truncate(c);
        }
        if windows.is_empty() {
            return Err(TrainError::EmptyDataset("no training windows".into()));
        }
        let lr = trainer.lr();
        let (mut sum, mut count) = (0.0, 0usize);
        for (b, chunk) in windows.chunks(cfg.batch_size).enumerate() {
            match trainer.step(&train_data, chunk, tape_seed(cfg.seed, epoch, b)) {
                Ok(Some(l)) => {
                    sum += l;
                    count += 1;
                }
                Ok(None) => {}
                Err(TrainError::DivergedLoss { .. }) => return Err(TrainError::DivergedLoss { epoch, batch: b }),
                Err(e) => return Err(e),
            }
        }
        let val_loss = trainer.evaluate(&val_data, &val_windows)?;
        if !val_loss.is_finite() {
            return Err(TrainError::DivergedLoss { epoch, batch: 0 });
        }
        log.push(EpochRecord { epoch, train_loss: (count > 0).then(|| sum / count as f64), val_loss, lr });
        if best.as_ref().map_or(true, |(v, _, _)| val_loss < *v) {
            best = Some((val_loss, epoch, trainer.model().clone()));
        }
        let next = scheduler.observe(val_loss, lr);
        trainer.set_lr(next);
    }
    let (model, meta) = match best {
        Some((v, e, m)) => (m, TrainingMeta { epoch: e, val_loss: Some(v), seed: cfg.seed }),
        None => (trainer.into_model(), TrainingMeta { epoch: 0, val_loss: None, seed: cfg.seed }),
    };
    Ok(TrainOutcome { model, meta, log })
}

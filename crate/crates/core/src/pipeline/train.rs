//! The training loop.
//!
//! Each step: forward a batch of triples, loss = mean of the two heads' BCE
//! against the outer masks, backward, SGD step, running-statistic update.
//! The learning rate is fixed within an epoch. At the end of an epoch the
//! validation set (if any) is scored and a checkpoint is written.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{evaluate_model, means};
use crate::model::{stack_frames, FrameTriple, Model, ModelConfig};
use crate::nn::{Mode, Session, NORM_MOMENTUM};
use crate::pipeline::checkpoint::{save_checkpoint, Checkpoint};
use crate::pipeline::config::TrainConfig;
use crate::pipeline::loader::{apply_plan, augment_plan, epoch_order, triples};
use crate::pipeline::optim::{lr_at_epoch_every, sgd_step, Momentum};
use crate::synth::read_dataset;
use crate::tensor::{Graph, Real, Tensor, Var};
use crate::video::Video;

/// Mean binary cross-entropy over all elements, from logits.
pub fn bce_loss<T: Real>(g: &mut Graph<T>, logits: Var, target: &Tensor<T>) -> Result<Var> {
    g.bce_with_logits(logits, target)
}

pub const LOG_HEADER: &str = "epoch,step,lr,loss,val_iou,val_f1";

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub val: Option<(f64, f64)>,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},{},{:e},{:.9}", self.epoch, self.step, self.lr, self.loss);
        match self.val {
            Some((iou, f1)) => {
                let _ = write!(s, ",{iou:.6},{f1:.6}");
            }
            None => s.push_str(",,"),
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub cfg: TrainConfig,
    pub model: Model<T>,
    pub momentum: Momentum<T>,
    /// Epochs completed.
    pub epoch: usize,
    /// Optimizer steps taken.
    pub step: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(cfg: TrainConfig, model: Model<T>) -> Result<Self> {
        cfg.validate()?;
        if cfg.resize != (model.cfg.input_h, model.cfg.input_w) {
            return Err(Error::Config(format!(
                "resize {:?} differs from model input {}x{}",
                cfg.resize, model.cfg.input_h, model.cfg.input_w
            )));
        }
        Ok(Trainer { cfg, model, momentum: BTreeMap::new(), epoch: 0, step: 0 })
    }

    pub fn from_checkpoint(c: Checkpoint<T>) -> Result<Self> {
        let mut t = Trainer::new(c.train_cfg.clone(), c.model())?;
        t.momentum = c.momentum;
        t.epoch = c.epoch;
        t.step = c.step;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            model_cfg: self.model.cfg.clone(),
            train_cfg: self.cfg.clone(),
            epoch: self.epoch,
            step: self.step,
            store: self.model.store.clone(),
            momentum: self.momentum.clone(),
        }
    }

    pub fn lr(&self) -> f64 {
        lr_at_epoch_every(self.epoch, self.cfg.lr0, self.cfg.lr_halve_every)
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.cfg.epochs || (self.cfg.max_steps > 0 && self.step >= self.cfg.max_steps)
    }

    /// Loss and parameter gradients of one batch, without updating anything.
    pub fn loss_and_grads(
        &self,
        batch: &[&FrameTriple<T>],
    ) -> Result<(f64, BTreeMap<String, Tensor<T>>, Vec<crate::nn::StatUpdate<T>>)> {
        let (h, w) = (self.model.cfg.input_h, self.model.cfg.input_w);
        let mut g = Graph::new();
        let mut s = Session::new(&mut g, &self.model.store, Mode::Train, true);
        let mut inputs = Vec::with_capacity(3);
        for pos in 0..3 {
            let frames: Vec<&Tensor<T>> = batch.iter().map(|t| &t.frames[pos]).collect();
            inputs.push(s.g.constant(stack_frames(&frames, h, w)?));
        }
        let (la, lc, _) = self.model.forward_logits(&mut s, [inputs[0], inputs[1], inputs[2]])?;
        let target = |pos: usize| -> Result<Tensor<T>> {
            let data = batch.iter().flat_map(|t| t.masks[pos].to_tensor::<T>().into_data()).collect();
            Tensor::from_vec(&[batch.len(), 1, h, w], data)
        };
        let loss_a = bce_loss(s.g, la, &target(0)?)?;
        let loss_c = bce_loss(s.g, lc, &target(2)?)?;
        let both = s.g.add(loss_a, loss_c)?;
        let loss = s.g.scale(both, T::of(0.5));
        let bindings = s.bindings().clone();
        let stats = s.take_stats();
        g.backward(loss)?;
        let grads = bindings.into_iter().map(|(name, v)| (name, g.grad(v).expect("parameter gradient"))).collect();
        Ok((g.value(loss).data()[0].as_f64(), grads, stats))
    }

    /// One optimizer step on a batch.
    pub fn train_step(&mut self, batch: &[&FrameTriple<T>]) -> Result<StepStats> {
        let lr = self.lr();
        let (loss, grads, stats) = self.loss_and_grads(batch)?;
        let grad_norm = grads.values().flat_map(|t| t.data().iter().map(|v| v.as_f64().powi(2))).sum::<f64>().sqrt();
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NonFinite { step: self.step, lr, grad_norm, what: format!("loss {loss}") });
        }
        sgd_step(&mut self.model.store, &grads, &mut self.momentum, lr, self.cfg.momentum, self.cfg.weight_decay)?;
        for st in stats {
            self.model.store.update_running_stats(&st.norm, &st.mean, &st.var, NORM_MOMENTUM);
        }
        self.step += 1;
        Ok(StepStats { loss, grad_norm })
    }

    /// Runs one epoch over `data` (already augmented). Returns one log row
    /// per step; the last row carries validation scores when `val` is set.
    /// Stops early once `max_steps` is reached; the epoch still counts.
    pub fn run_epoch(&mut self, data: &[FrameTriple<T>], val: Option<&[Video<T>]>) -> Result<Vec<LogRow>> {
        if data.is_empty() {
            return Err(Error::Config("no training triples".into()));
        }
        let lr = self.lr();
        let order = epoch_order(data.len(), self.cfg.seed, self.epoch);
        let mut rows = Vec::new();
        for chunk in order.chunks(self.cfg.batch) {
            if self.cfg.max_steps > 0 && self.step >= self.cfg.max_steps {
                break;
            }
            let batch: Vec<&FrameTriple<T>> = chunk.iter().map(|&i| &data[i]).collect();
            let st = self.train_step(&batch)?;
            log::debug!("epoch {} step {} loss {:.6}", self.epoch, self.step, st.loss);
            rows.push(LogRow { epoch: self.epoch, step: self.step, lr, loss: st.loss, val: None });
        }
        if let (Some(v), Some(last)) = (val, rows.last_mut()) {
            last.val = Some(means(&evaluate_model(&self.model, v)?));
        }
        self.epoch += 1;
        Ok(rows)
    }
}

/// Builds the training set: natural triples with the run's fixed
/// augmentation plan applied.
pub fn prepare_data<T: Real>(videos: &[Video<T>], cfg: &TrainConfig) -> Result<Vec<FrameTriple<T>>> {
    let mut data = triples(videos);
    let plan = augment_plan(data.len(), cfg.augment_fraction, &cfg.quality_levels, cfg.seed);
    apply_plan(&mut data, &plan)?;
    Ok(data)
}

/// Files written by [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutput<T> {
    pub trainer: Trainer<T>,
    pub log_path: PathBuf,
    pub last_checkpoint: PathBuf,
    pub rows: Vec<LogRow>,
}

pub fn epoch_checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join(format!("epoch_{epoch:03}.ckpt"))
}

/// Trains from scratch (model seeded by `train_cfg.seed`) or continues
/// `resume`, writing `train_log.csv`, one checkpoint per epoch and
/// `last.ckpt` into `out_dir`.
pub fn train<T: Real>(
    train_cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    dataset_root: &Path,
    out_dir: &Path,
    resume: Option<Checkpoint<T>>,
) -> Result<TrainOutput<T>> {
    let mut trainer = match resume {
        Some(c) => Trainer::from_checkpoint(c)?,
        None => Trainer::new(train_cfg.clone(), Model::new(model_cfg.clone(), train_cfg.seed)?)?,
    };
    let cfg = trainer.cfg.clone();
    let videos = read_dataset::<T>(dataset_root, Some(cfg.resize))?;
    let data = prepare_data(&videos, &cfg)?;
    let val = match &cfg.val_data {
        Some(p) => Some(read_dataset::<T>(p, Some(cfg.resize))?),
        None => None,
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join("train_log.csv");
    let mut log = if trainer.epoch == 0 {
        format!("{LOG_HEADER}\n")
    } else {
        fs::read_to_string(&log_path).unwrap_or_else(|_| format!("{LOG_HEADER}\n"))
    };
    let mut all_rows = Vec::new();
    while !trainer.finished() {
        let rows = trainer.run_epoch(&data, val.as_deref())?;
        for r in &rows {
            log.push_str(&r.to_csv());
            log.push('\n');
        }
        if let Some(last) = rows.last() {
            log::info!("epoch {} done: step {}, loss {:.5}, val {:?}", last.epoch, last.step, last.loss, last.val);
        }
        all_rows.extend(rows);
        fs::write(&log_path, &log).map_err(|e| Error::io(&log_path, e))?;
        save_checkpoint(&trainer.checkpoint(), &epoch_checkpoint_path(out_dir, trainer.epoch))?;
    }
    let last_checkpoint = out_dir.join("last.ckpt");
    save_checkpoint(&trainer.checkpoint(), &last_checkpoint)?;
    Ok(TrainOutput { trainer, log_path, last_checkpoint, rows: all_rows })
}

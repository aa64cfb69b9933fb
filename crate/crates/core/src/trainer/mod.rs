//! Classifier training and evaluation over YIMG datasets.

mod config;
mod data;
mod metrics;
mod model;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use config::{Arch, Head, LossKind, OptimizerKind, Regime, TrainConfig};
pub use data::{
    batch_tensor, class_prior, round_to_scaled, target, Dataset, MemoryDataset, StoreDataset,
    Target,
};
pub use metrics::{
    emit_curves, parse_metrics_csv, plot_history, read_metrics_csv, write_metrics_csv,
    EpochMetrics, METRICS_COLUMNS,
};
pub use model::{build_model, BackboneConfig, Model, Network, HEAD_PREFIX};

use crate::engine::weights::{load_weights, save_weights};
use crate::engine::{Graph, Scalar, Tensor, Var};
use crate::optim::{
    hp_search, Adam, ClassWeights, Optimizer, SearchOutcome, SearchSpace, SgdMomentum,
};
use crate::util;
use crate::{Error, Result};

/// Batch size used for every evaluation pass, so recorded metrics can be
/// reproduced exactly.
pub const EVAL_BATCH: usize = 32;

/// Loss and accuracy over one dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub top1: f64,
    pub count: usize,
}

/// Running sums over batches.
#[derive(Default)]
struct Tally {
    loss: f64,
    norm: f64,
    correct: usize,
    count: usize,
}

impl Tally {
    fn result(&self) -> EvalResult {
        EvalResult {
            loss: self.loss / self.norm,
            top1: self.correct as f64 / self.count as f64,
            count: self.count,
        }
    }
}

fn class_weights(config_weights: &[f32], head: Head) -> Result<ClassWeights> {
    if config_weights.is_empty() {
        Ok(ClassWeights::uniform(head.outputs()))
    } else {
        ClassWeights::new(config_weights.to_vec())
    }
}

/// Index of the largest value in `row`; the lowest index wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Appends the loss for a batch; returns the loss node and its normalizer.
fn batch_loss<T: Scalar>(
    g: &mut Graph<T>,
    out: Var,
    head: Head,
    targets: &[Target],
    weights: &ClassWeights,
) -> Result<(Var, f64)> {
    match head {
        Head::Regression => {
            let y: Vec<T> = targets
                .iter()
                .map(|t| match t {
                    Target::Value(v) => T::lit(*v),
                    Target::Class(c) => T::lit(*c as f64),
                })
                .collect();
            let n = y.len() as f64;
            Ok((g.mse(out, &y)?, n))
        }
        _ => {
            let cls: Vec<usize> = targets
                .iter()
                .map(|t| match t {
                    Target::Class(c) => *c,
                    Target::Value(v) => *v as usize,
                })
                .collect();
            let norm: f64 = cls.iter().map(|&c| weights.as_slice()[c] as f64).sum();
            Ok((g.cross_entropy(out, &cls, weights)?, norm))
        }
    }
}

fn count_correct<T: Scalar>(out: &Tensor<T>, head: Head, targets: &[Target]) -> usize {
    let k = head.outputs();
    out.data()
        .chunks(k)
        .zip(targets)
        .filter(|(row, t)| match (head, t) {
            (Head::Regression, Target::Value(v)) => round_to_scaled(row[0].as_f64()) == *v as u8,
            (_, Target::Class(c)) => argmax(row) == *c,
            _ => false,
        })
        .count()
}

/// Eval-mode loss and top-1 over all of `data`.
pub fn evaluate(
    model: &mut Model<f32>,
    data: &mut dyn Dataset,
    weights: &[f32],
) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot evaluate on an empty store".into(),
        ));
    }
    let head = model.net.head;
    let weights = class_weights(weights, head)?;
    let mut tally = Tally::default();
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let targets: Vec<Target> = chunk.iter().map(|&i| target(head, data.stars(i))).collect();
        let mut g = Graph::new();
        let x = g.input(batch_tensor(data, chunk)?);
        let out = model.forward(&mut g, x, false)?;
        let (loss, norm) = batch_loss(&mut g, out, head, &targets, &weights)?;
        tally.loss += g.value(loss).item() as f64 * norm;
        tally.norm += norm;
        tally.correct += count_correct(g.value(out), head, &targets);
        tally.count += chunk.len();
    }
    Ok(tally.result())
}

/// Sidecar metadata stored next to a checkpoint's weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Canonical `key = value` rendering of the training config.
    pub config: String,
    pub config_hash: String,
    pub epoch: usize,
    pub val_loss: f64,
    pub val_top1: f64,
    pub eval_batch: usize,
    pub steps_per_epoch: usize,
    pub history: Vec<EpochMetrics>,
}

pub fn meta_path(weights: &Path) -> PathBuf {
    weights.with_extension("meta")
}

const OPTIM_PREFIX: &str = "optim.";

/// Writes `path` (model tensors plus `optim.*` state) and its `.meta` sidecar.
pub fn save_checkpoint(
    path: &Path,
    model: &Model<f32>,
    optim_state: &[(String, Tensor<f32>)],
    meta: &CheckpointMeta,
) -> Result<()> {
    let optim: Vec<(String, &Tensor<f32>)> = optim_state
        .iter()
        .map(|(n, t)| (format!("{OPTIM_PREFIX}{n}"), t))
        .collect();
    let entries = model
        .store
        .named_tensors()
        .chain(optim.iter().map(|(n, t)| (n.as_str(), *t)));
    save_weights(path, entries)?;
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::Format(e.to_string()))?;
    let mp = meta_path(path);
    std::fs::write(&mp, json).map_err(|e| Error::io(&mp, e))
}

/// A reloaded checkpoint.
pub struct Checkpoint {
    pub model: Model<f32>,
    pub config: TrainConfig,
    pub meta: CheckpointMeta,
    pub optim_state: Vec<(String, Tensor<f32>)>,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mp = meta_path(path);
    let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", mp.display())))?;
    let config = TrainConfig::from_kv_text(&meta.config)?;
    if config.hash() != meta.config_hash {
        return Err(Error::Format(format!(
            "{}: config hash mismatch",
            mp.display()
        )));
    }
    let mut model = Model::new(
        BackboneConfig::for_arch(config.arch),
        config.head,
        config.regime,
        config.seed,
    );
    let entries = load_weights(path)?;
    let (optim, weights): (Vec<_>, Vec<_>) = entries
        .into_iter()
        .partition(|(n, _)| n.starts_with(OPTIM_PREFIX));
    let loaded = model
        .store
        .load_named(weights.iter().map(|(n, t)| (n.as_str(), t)))?;
    if loaded != model.store.len() {
        return Err(Error::Format(format!(
            "{}: checkpoint has {loaded} of the model's {} tensors",
            path.display(),
            model.store.len()
        )));
    }
    let optim_state = optim
        .into_iter()
        .map(|(n, t)| (n[OPTIM_PREFIX.len()..].to_string(), t))
        .collect();
    Ok(Checkpoint {
        model,
        config,
        meta,
        optim_state,
    })
}

/// Result of a training run.
pub struct TrainOutcome {
    pub history: Vec<EpochMetrics>,
    /// Epoch of the best validation result, if any epoch ran.
    pub best_epoch: Option<usize>,
    pub steps_per_epoch: usize,
    /// The model after the last epoch.
    pub model: Model<f32>,
    /// The model at the best epoch (the initial model if no epoch ran).
    pub best_model: Model<f32>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainOutcome {
    pub fn best_metrics(&self) -> Option<&EpochMetrics> {
        self.best_epoch
            .and_then(|e| self.history.iter().find(|m| m.epoch == e))
    }
}

fn make_optimizer(config: &TrainConfig) -> Result<Box<dyn Optimizer<f32>>> {
    Ok(match config.optimizer {
        OptimizerKind::SgdMomentum => Box::new(SgdMomentum::new(config.sgd())),
        OptimizerKind::Adam => Box::new(Adam::new(config.adam())?),
    })
}

/// Builds the configured model, initializes its head from the training
/// set's class prior, and trains.
pub fn train(
    config: &TrainConfig,
    train_data: &mut dyn Dataset,
    val_data: &mut dyn Dataset,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut model = build_model(config)?;
    let prior = class_prior(train_data, config.head);
    let bias: Vec<f64> = match config.head {
        Head::Regression => prior,
        _ => prior.iter().map(|p| p.max(1e-6).ln()).collect(),
    };
    model.init_head_bias(&bias)?;
    train_model(config, model, train_data, val_data)
}

/// Trains an already-built model.
pub fn train_model(
    config: &TrainConfig,
    mut model: Model<f32>,
    train_data: &mut dyn Dataset,
    val_data: &mut dyn Dataset,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_data.is_empty() {
        return Err(Error::InvalidArgument("training store is empty".into()));
    }
    if val_data.is_empty() {
        return Err(Error::InvalidArgument("validation store is empty".into()));
    }
    let head = model.net.head;
    let weights = class_weights(&config.class_weights, head)?;
    let mut opt = make_optimizer(config)?;
    let mut rng = util::rng(config.seed ^ 0x005e_ed0f_da7a);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let steps_per_epoch = order.len().div_ceil(config.batch_size);
    let mut history = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut best_model = model.clone();
    let ckpt_path = config.out_dir.as_ref().map(|d| d.join("best.ywts"));

    for epoch in 0..config.epochs {
        let lr = config.schedule.lr_at(epoch, config.lr);
        order.shuffle(&mut rng);
        let mut tally = Tally::default();
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let targets: Vec<Target> = chunk
                .iter()
                .map(|&i| target(head, train_data.stars(i)))
                .collect();
            let mut g = Graph::new();
            let x = g.input(batch_tensor(train_data, chunk)?);
            let out = model.forward(&mut g, x, true)?;
            let (loss, norm) = batch_loss(&mut g, out, head, &targets, &weights)?;
            let lv = g.value(loss).item() as f64;
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {lv} at epoch {epoch}, batch {bi}"
                )));
            }
            let grads = g.backward(loss)?;
            model.store.zero_grad();
            model.store.accumulate_grads(&g, &grads);
            opt.step(&mut model.store, lr)?;
            tally.loss += lv * norm;
            tally.norm += norm;
            tally.correct += count_correct(g.value(out), head, &targets);
            tally.count += chunk.len();
        }
        let tr = tally.result();
        let val = evaluate(&mut model, val_data, &config.class_weights)?;
        let m = EpochMetrics {
            epoch,
            train_loss: tr.loss,
            val_loss: val.loss,
            train_top1: tr.top1,
            val_top1: val.top1,
        };
        log::info!(
            "epoch {epoch}: lr {lr:e} train loss {:.5} top1 {:.4} | val loss {:.5} top1 {:.4}",
            m.train_loss,
            m.train_top1,
            m.val_loss,
            m.val_top1
        );
        history.push(m);

        let improved = match (head, best) {
            (_, None) => true,
            (Head::Regression, Some((_, b))) => m.val_loss < b,
            (_, Some((_, b))) => m.val_top1 > b,
        };
        if improved {
            best = Some((
                epoch,
                if head == Head::Regression {
                    m.val_loss
                } else {
                    m.val_top1
                },
            ));
            best_model = model.clone();
            if let Some(path) = &ckpt_path {
                let meta = CheckpointMeta {
                    config: config.to_kv_text(),
                    config_hash: config.hash(),
                    epoch,
                    val_loss: m.val_loss,
                    val_top1: m.val_top1,
                    eval_batch: EVAL_BATCH,
                    steps_per_epoch,
                    history: history.clone(),
                };
                save_checkpoint(path, &model, &opt.export_state(&model.store), &meta)?;
            }
        }
        if config.target_train_top1.is_some_and(|t| m.train_top1 >= t) {
            log::info!(
                "train top-1 {:.4} reached the target; stopping",
                m.train_top1
            );
            break;
        }
    }
    if let (Some(dir), false) = (&config.out_dir, history.is_empty()) {
        emit_curves(&history, dir)?;
    }
    Ok(TrainOutcome {
        history,
        best_epoch: best.map(|b| b.0),
        steps_per_epoch,
        model,
        best_model,
        checkpoint: ckpt_path.filter(|p| p.is_file()),
    })
}

/// Hyperparameter search over training configs. Each dimension name must be
/// a [`TrainConfig`] key; a trial's metric is `1 − best val top-1`, or the
/// best val loss for regression heads.
pub fn search_hyperparameters(
    base: &TrainConfig,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    train_data: &mut dyn Dataset,
    val_data: &mut dyn Dataset,
) -> Result<SearchOutcome> {
    for d in &space.dims {
        if !TrainConfig::KEYS.contains(&d.name.as_str()) {
            return Err(Error::Config(format!(
                "search dimension {:?} is not a config key",
                d.name
            )));
        }
    }
    hp_search(
        space,
        budget,
        |point| {
            let mut c = base.clone();
            c.out_dir = None;
            for (name, v) in point.names.iter().zip(&point.values) {
                c.set(name, &v.to_string())?;
            }
            let out = train(&c, train_data, val_data)?;
            let best = out
                .best_metrics()
                .ok_or_else(|| Error::Config("search trials need epochs >= 1".into()))?;
            Ok(if c.head == Head::Regression {
                best.val_loss
            } else {
                1.0 - best.val_top1
            })
        },
        seed,
    )
}

//! Mini-batch training loop shared by every detector and the classifier.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::optim::Adam;
use super::params::{collect_grads, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};

/// A loss whose running value exceeds this multiple of the initial loss
/// (floored at 1) counts as diverged.
pub const DIVERGENCE_RATIO: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Early-stopping patience in epochs on the validation loss.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size: 32,
            epochs: 20,
            patience: Some(5),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "learning rate must be positive and epochs, batch size at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Windows (and optional targets) presented to an objective.
#[derive(Debug, Clone)]
pub struct Dataset<'a> {
    pub inputs: Vec<&'a [f64]>,
    pub targets: Option<Vec<&'a [f64]>>,
    pub channels: usize,
    pub length: usize,
}

impl<'a> Dataset<'a> {
    pub fn new(inputs: Vec<&'a [f64]>, channels: usize, length: usize) -> Self {
        Self {
            inputs,
            targets: None,
            channels,
            length,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> Batch {
        let xs: Vec<&[f64]> = idx.iter().map(|&i| self.inputs[i]).collect();
        let y = self.targets.as_ref().map(|t| {
            let width = t[0].len();
            let mut data = Vec::with_capacity(idx.len() * width);
            for &i in idx {
                data.extend_from_slice(t[i]);
            }
            Tensor::new(alloc::vec![idx.len(), width], data)
        });
        Batch {
            x: Tensor::stack(&xs, self.channels, self.length),
            y,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub y: Option<Tensor>,
}

pub trait Objective {
    /// Scalar mean loss of `batch`; `rng` drives masks, noise or sampling.
    fn loss(&self, g: &mut Graph, params: &[Var], batch: &Batch, rng: &mut SeededRng) -> Var;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Running minimum of the validation loss (non-increasing).
    pub best_val_so_far: Vec<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> f64 {
        self.train_loss.last().copied().unwrap_or(f64::NAN)
    }

    pub fn best_val_loss(&self) -> Option<f64> {
        self.best_val_so_far.last().copied()
    }
}

/// Mean objective over `data`, in deterministic batch order with a fixed seed.
pub fn evaluate(store: &ParamStore, objective: &dyn Objective, data: &Dataset<'_>, batch_size: usize, seed: u64) -> f64 {
    let mut rng = rng::seeded(seed);
    let mut total = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let l = objective.loss(&mut g, &p, &batch, &mut rng);
        total += g.scalar(l) * chunk.len() as f64;
    }
    total / data.len().max(1) as f64
}

/// Trains `store` in place. Returns the per-epoch history; the parameters
/// left in `store` are those of the best validation epoch when a validation
/// set is given, otherwise those of the last epoch.
pub fn train(
    store: &mut ParamStore,
    objective: &dyn Objective,
    train_data: &Dataset<'_>,
    val_data: Option<&Dataset<'_>>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut rng = rng::seeded(cfg.seed);
    let val_seed = rng::derive_seed(cfg.seed, 0x5641_4c49_44);
    let mut opt = Adam::new(store, cfg.learning_rate, cfg.weight_decay);
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_val_so_far: Vec::new(),
        best_epoch: 0,
        epochs_run: 0,
    };
    let mut best_store: Option<ParamStore> = None;
    let mut best_val = f64::INFINITY;
    let mut since_best = 0usize;
    let mut reference: Option<f64> = None;

    for epoch in 0..cfg.epochs {
        let order = rng::permutation(&mut rng, train_data.len());
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_data.batch(chunk);
            let mut g = Graph::new();
            let p = store.bind(&mut g);
            let loss = objective.loss(&mut g, &p, &batch, &mut rng);
            let value = g.scalar(loss);
            let limit = DIVERGENCE_RATIO * reference.get_or_insert(value.abs()).max(1.0);
            if !value.is_finite() || value > limit {
                return Err(Error::Diverged { epoch, loss: value });
            }
            let grads = g.backward(loss);
            let grads = collect_grads(&p, &grads, store);
            if grads.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { epoch, loss: value });
            }
            opt.step(store, &grads);
            sum += value * chunk.len() as f64;
        }
        report.train_loss.push(sum / train_data.len() as f64);
        report.epochs_run = epoch + 1;

        if let Some(val) = val_data.filter(|v| !v.is_empty()) {
            let v = evaluate(store, objective, val, cfg.batch_size, val_seed);
            if !v.is_finite() {
                return Err(Error::Diverged { epoch, loss: v });
            }
            report.val_loss.push(v);
            if v < best_val {
                best_val = v;
                report.best_epoch = epoch;
                best_store = Some(store.clone());
                since_best = 0;
            } else {
                since_best += 1;
            }
            report.best_val_so_far.push(best_val);
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        } else {
            report.best_epoch = epoch;
        }
    }
    if let Some(best) = best_store {
        *store = best;
    }
    Ok(report)
}

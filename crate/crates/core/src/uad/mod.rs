//! The six anomaly detectors: objectives, training entry points and scores.
//!
//! Every score is oriented so that higher means more anomalous.

pub mod check;
pub mod ddpm;
pub mod flow;
pub mod mad;
pub mod recon;
pub mod svdd;

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::models::Network;
use crate::nn::{Checkpoint, Graph, NetworkSpec, ParamStore, Tensor, TrainConfig, TrainReport, TrainingMeta, Var};
use crate::rng;
use crate::signal::Superclass;

pub use ddpm::{DdpmConfig, DdpmObjective, DdpmSchedule};
pub use mad::MadConfig;

/// Windows scored per forward pass.
pub const SCORE_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    DeepSvdd,
    Mad,
    Ae,
    Vae,
    Ddpm,
    Nf,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::DeepSvdd,
        Method::Mad,
        Method::Ae,
        Method::Vae,
        Method::Ddpm,
        Method::Nf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::DeepSvdd => "DEEP_SVDD",
            Method::Mad => "MAD",
            Method::Ae => "AE",
            Method::Vae => "VAE",
            Method::Ddpm => "DDPM",
            Method::Nf => "NF",
        }
    }
}

/// Everything needed to train one detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DetectorConfig {
    DeepSvdd { spec: NetworkSpec, epsilon: f64 },
    Ae { spec: NetworkSpec },
    Vae { spec: NetworkSpec, beta: f64 },
    Mad { spec: NetworkSpec, mask: MadConfig },
    Ddpm { spec: NetworkSpec, schedule: DdpmConfig },
    Nf { spec: NetworkSpec },
}

impl DetectorConfig {
    pub fn method(&self) -> Method {
        match self {
            DetectorConfig::DeepSvdd { .. } => Method::DeepSvdd,
            DetectorConfig::Ae { .. } => Method::Ae,
            DetectorConfig::Vae { .. } => Method::Vae,
            DetectorConfig::Mad { .. } => Method::Mad,
            DetectorConfig::Ddpm { .. } => Method::Ddpm,
            DetectorConfig::Nf { .. } => Method::Nf,
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        match self {
            DetectorConfig::DeepSvdd { spec, .. }
            | DetectorConfig::Ae { spec }
            | DetectorConfig::Vae { spec, .. }
            | DetectorConfig::Mad { spec, .. }
            | DetectorConfig::Ddpm { spec, .. }
            | DetectorConfig::Nf { spec } => spec,
        }
    }

    pub fn param_count(&self) -> Result<usize> {
        crate::nn::count_params(self.spec())
    }
}

/// Method-specific state persisted next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MethodState {
    DeepSvdd { center: Vec<f64>, epsilon: f64 },
    Ae,
    Vae { beta: f64 },
    Mad { mask: MadConfig },
    Ddpm { schedule: DdpmConfig },
    Nf,
    Classifier { classes: Vec<Superclass>, threshold: f64 },
}

/// Builds the network and a freshly initialised parameter store.
pub(crate) fn instantiate(spec: &NetworkSpec, seed: u64) -> Result<(Network, ParamStore)> {
    let (net, defs) = Network::build(spec)?;
    let mut r = rng::seeded(rng::derive_seed(seed, 0x494e_4954));
    Ok((net, ParamStore::init(&defs, &mut r)))
}

pub(crate) fn meta(cfg: &TrainConfig, report: &TrainReport) -> TrainingMeta {
    TrainingMeta {
        seed: cfg.seed,
        epochs: report.epochs_run,
        final_train_loss: report.final_train_loss(),
        best_val_loss: report.best_val_loss(),
    }
}

pub(crate) fn check_windows(windows: &[&[f64]], spec: &NetworkSpec) -> Result<()> {
    let width = spec.in_channels * spec.length;
    if let Some(w) = windows.iter().find(|w| w.len() != width) {
        return Err(Error::InvalidInput(alloc::format!(
            "window of {} samples, network expects {width}",
            w.len()
        )));
    }
    Ok(())
}

/// Trains the configured detector on clean windows, using `val` for early stopping.
pub fn train_detector(
    cfg: &DetectorConfig,
    train: &[&[f64]],
    val: &[&[f64]],
    tc: &TrainConfig,
) -> Result<(Checkpoint, TrainReport)> {
    check_windows(train, cfg.spec())?;
    check_windows(val, cfg.spec())?;
    match cfg {
        DetectorConfig::DeepSvdd { spec, epsilon } => svdd::train(spec, *epsilon, train, val, tc),
        DetectorConfig::Ae { spec } => recon::train_ae(spec, train, val, tc),
        DetectorConfig::Vae { spec, beta } => recon::train_vae(spec, *beta, train, val, tc),
        DetectorConfig::Mad { spec, mask } => mad::train(spec, mask, train, val, tc),
        DetectorConfig::Ddpm { spec, schedule } => ddpm::train(spec, schedule, train, val, tc),
        DetectorConfig::Nf { spec } => flow::train(spec, train, val, tc),
    }
}

/// Anomaly scores of `windows` (higher = more anomalous). `seed` fixes the
/// random masks or diffusion noise used by MAD and DDPM scoring.
pub fn score(ckpt: &Checkpoint, windows: &[&[f64]], seed: u64) -> Result<Vec<f64>> {
    check_windows(windows, &ckpt.spec)?;
    let scores = match &ckpt.method {
        MethodState::DeepSvdd { .. } => svdd::score(ckpt, windows)?,
        MethodState::Ae | MethodState::Vae { .. } => recon::score(ckpt, windows)?,
        MethodState::Mad { .. } => mad::score(ckpt, windows, seed)?,
        MethodState::Ddpm { .. } => ddpm::score(ckpt, windows, seed)?,
        MethodState::Nf => flow::score(ckpt, windows)?,
        MethodState::Classifier { .. } => {
            return Err(Error::Config("classifier checkpoints do not produce anomaly scores".into()))
        }
    };
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(alloc::format!("non-finite score for window {i}")));
    }
    Ok(scores)
}

/// Rebuilds the network described by a checkpoint together with its weights.
pub fn restore(ckpt: &Checkpoint) -> Result<(Network, ParamStore)> {
    ckpt.validate()?;
    let (net, _) = Network::build(&ckpt.spec)?;
    Ok((net, ckpt.to_store()))
}

/// Runs `f` over `windows` in batches of [`SCORE_BATCH`], returning one
/// value per window as produced by `f` for each row of its batch.
pub(crate) fn map_batches<T, F>(windows: &[&[f64]], channels: usize, length: usize, store: &ParamStore, mut f: F) -> Vec<T>
where
    F: FnMut(&mut Graph, &[Var], Var, core::ops::Range<usize>) -> Vec<T>,
{
    let mut out = Vec::with_capacity(windows.len());
    for (k, chunk) in windows.chunks(SCORE_BATCH).enumerate() {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.input(Tensor::stack(chunk, channels, length));
        let start = k * SCORE_BATCH;
        out.extend(f(&mut g, &p, x, start..start + chunk.len()));
    }
    out
}

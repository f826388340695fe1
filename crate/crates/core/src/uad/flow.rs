//! Normalizing-flow detector: exact negative log-likelihood under Glow.

use alloc::vec::Vec;

use super::{instantiate, map_batches, meta, restore, MethodState};
use crate::error::{Error, Result};
use crate::nn::models::{Glow1d, Network};
use crate::nn::{
    train as fit, Architecture, Batch, Checkpoint, Dataset, Graph, NetworkSpec, Objective, Tensor, TrainConfig,
    TrainReport, Var,
};
use crate::rng::SeededRng;

/// Windows used for the data-dependent actnorm initialisation.
pub const ACTNORM_INIT_WINDOWS: usize = 64;

fn glow(net: &Network) -> &Glow1d {
    match net {
        Network::Glow(f) => f,
        _ => unreachable!("architecture checked before use"),
    }
}

fn check_arch(spec: &NetworkSpec) -> Result<()> {
    if !matches!(spec.arch, Architecture::Glow1d { .. }) {
        return Err(Error::Config("NF needs a GLOW1D network".into()));
    }
    Ok(())
}

pub(super) struct NllObjective<'a> {
    pub(super) flow: &'a Glow1d,
}

impl Objective for NllObjective<'_> {
    /// Mean negative log-likelihood per dimension.
    fn loss(&self, g: &mut Graph, p: &[Var], batch: &Batch, _rng: &mut SeededRng) -> Var {
        let x = g.input(batch.x.clone());
        let lp = self.flow.log_prob(g, p, x);
        let m = g.mean(lp);
        g.scale(m, -1.0 / self.flow.dims() as f64)
    }
}

pub(crate) fn train(spec: &NetworkSpec, tw: &[&[f64]], vw: &[&[f64]], tc: &TrainConfig) -> Result<(Checkpoint, TrainReport)> {
    check_arch(spec)?;
    if tw.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let (net, mut store) = instantiate(spec, tc.seed)?;
    let flow = glow(&net);
    let init = &tw[..tw.len().min(ACTNORM_INIT_WINDOWS)];
    flow.init_actnorm(&mut store, &Tensor::stack(init, spec.in_channels, spec.length));
    let obj = NllObjective { flow };
    let td = Dataset::new(tw.to_vec(), spec.in_channels, spec.length);
    let vd = Dataset::new(vw.to_vec(), spec.in_channels, spec.length);
    let report = fit(&mut store, &obj, &td, Some(&vd), tc)?;
    Ok((Checkpoint::from_store(spec.clone(), &store, meta(tc, &report), MethodState::Nf), report))
}

/// Per-window `log p(x)`.
pub fn log_prob(ckpt: &Checkpoint, windows: &[&[f64]]) -> Result<Vec<f64>> {
    check_arch(&ckpt.spec)?;
    super::check_windows(windows, &ckpt.spec)?;
    let (net, store) = restore(ckpt)?;
    let flow = glow(&net);
    Ok(map_batches(windows, ckpt.spec.in_channels, ckpt.spec.length, &store, |g, p, x, _| {
        let lp = flow.log_prob(g, p, x);
        g.value(lp).to_vec()
    }))
}

pub(crate) fn score(ckpt: &Checkpoint, windows: &[&[f64]]) -> Result<Vec<f64>> {
    Ok(log_prob(ckpt, windows)?.into_iter().map(|v| -v).collect())
}

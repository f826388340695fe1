//! Masked anomaly detection: infill randomly masked timesteps with a
//! transformer and score by sequential single-step infilling.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{instantiate, meta, restore, MethodState, SCORE_BATCH};
use crate::error::{Error, Result};
use crate::nn::models::{MaskedTransformer, Network};
use crate::nn::{
    train as fit, Architecture, Batch, Checkpoint, Dataset, Graph, NetworkSpec, Objective, ParamStore, Tensor,
    TrainConfig, TrainReport, Var,
};
use crate::rng::{self, SeededRng};

/// Masking used in training. Mask values are standard normal draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MadConfig {
    pub mask_ratio: f64,
}

impl Default for MadConfig {
    fn default() -> Self {
        Self { mask_ratio: 0.05 }
    }
}

impl MadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Config("mask ratio must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Masked timesteps per window of `length`.
    pub fn mask_count(&self, length: usize) -> usize {
        // guard against 0.05 * 512 landing a hair above an integer
        let raw = self.mask_ratio * length as f64;
        let n = libm::ceil(raw - 1e-9) as usize;
        n.clamp(1, length)
    }
}

/// Replacement values for single-step masking at scoring time, one per
/// `(channel, t)`, shared by every window scored under `seed`.
pub fn scoring_mask_values(seed: u64, channels: usize, length: usize) -> Vec<f64> {
    let mut r = rng::seeded(rng::derive_seed(seed, 0x4d41_534b));
    let mut v = vec![0.0; channels * length];
    rng::fill_normal(&mut r, &mut v);
    v
}

fn transformer(net: &Network) -> &MaskedTransformer {
    match net {
        Network::Transformer(t) => t,
        _ => unreachable!("architecture checked before use"),
    }
}

fn check_arch(spec: &NetworkSpec) -> Result<()> {
    if !matches!(spec.arch, Architecture::TransformerMad { .. }) {
        return Err(Error::Config("MAD needs a TRANSFORMER_MAD network".into()));
    }
    Ok(())
}

/// `x * keep + fill`, i.e. `x` with masked slots overwritten.
fn apply_mask(g: &mut Graph, x: Var, keep: Vec<f64>, fill: Vec<f64>) -> Var {
    let shape = g.shape(x).to_vec();
    let keep = g.input(Tensor::new(shape.clone(), keep));
    let fill = g.input(Tensor::new(shape, fill));
    let kept = g.mul(x, keep);
    g.add(kept, fill)
}

pub(super) struct MadObjective<'a> {
    pub(super) model: &'a MaskedTransformer,
    pub(super) mask: MadConfig,
    pub(super) channels: usize,
    pub(super) length: usize,
}

/// Training masks for a batch: `(keep, fill, selected)` per element.
fn draw_masks(rng: &mut SeededRng, b: usize, c: usize, l: usize, k: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut keep = vec![1.0; b * c * l];
    let mut fill = vec![0.0; b * c * l];
    let mut sel = vec![0.0; b * c * l];
    for bi in 0..b {
        for t in rng::sample_indices(rng, l, k) {
            for ci in 0..c {
                let i = (bi * c + ci) * l + t;
                keep[i] = 0.0;
                fill[i] = rng::normal(rng);
                sel[i] = 1.0;
            }
        }
    }
    (keep, fill, sel)
}

impl Objective for MadObjective<'_> {
    fn loss(&self, g: &mut Graph, p: &[Var], batch: &Batch, rng: &mut SeededRng) -> Var {
        let (c, l) = (self.channels, self.length);
        let b = batch.x.shape[0];
        let k = self.mask.mask_count(l);
        let (keep, fill, sel) = draw_masks(rng, b, c, l, k);
        let x = g.input(batch.x.clone());
        let masked = apply_mask(g, x, keep, fill);
        let out = self.model.forward(g, p, masked);
        let d = g.sub(out, x);
        let sel = g.input(Tensor::new(vec![b, c, l], sel));
        let d = g.mul(d, sel);
        let sq = g.square(d);
        let s = g.sum(sq);
        g.scale(s, 1.0 / (b * k * c) as f64)
    }
}

/// Training loss of a model that returns its (masked) input unchanged.
#[cfg(test)]
pub(super) fn copy_model_loss(x: &[f64], mask: &MadConfig, rng: &mut SeededRng) -> f64 {
    let l = x.len();
    let k = mask.mask_count(l);
    let (keep, fill, sel) = draw_masks(rng, 1, 1, l, k);
    (0..l)
        .map(|i| {
            let out = x[i] * keep[i] + fill[i];
            sel[i] * (out - x[i]) * (out - x[i])
        })
        .sum::<f64>()
        / k as f64
}

pub(crate) fn train(
    spec: &NetworkSpec,
    mask: &MadConfig,
    tw: &[&[f64]],
    vw: &[&[f64]],
    tc: &TrainConfig,
) -> Result<(Checkpoint, TrainReport)> {
    check_arch(spec)?;
    mask.validate()?;
    let (net, mut store) = instantiate(spec, tc.seed)?;
    let obj = MadObjective {
        model: transformer(&net),
        mask: *mask,
        channels: spec.in_channels,
        length: spec.length,
    };
    let td = Dataset::new(tw.to_vec(), spec.in_channels, spec.length);
    let vd = Dataset::new(vw.to_vec(), spec.in_channels, spec.length);
    let report = fit(&mut store, &obj, &td, Some(&vd), tc)?;
    let state = MethodState::Mad { mask: *mask };
    Ok((Checkpoint::from_store(spec.clone(), &store, meta(tc, &report), state), report))
}

/// Squared error at `t` of the reconstructions of `copies`, where copy `j`
/// of window `x` has exactly timestep `ts[j]` masked.
fn masked_errors(
    model: &MaskedTransformer,
    store: &ParamStore,
    x: &[f64],
    ts: &[usize],
    values: &[f64],
    c: usize,
    l: usize,
) -> f64 {
    let n = ts.len();
    let mut data = Vec::with_capacity(n * c * l);
    let mut keep = vec![1.0; n * c * l];
    let mut fill = vec![0.0; n * c * l];
    for (j, &t) in ts.iter().enumerate() {
        data.extend_from_slice(x);
        for ci in 0..c {
            let i = (j * c + ci) * l + t;
            keep[i] = 0.0;
            fill[i] = values[ci * l + t];
        }
    }
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let xv = g.input(Tensor::new(vec![n, c, l], data));
    let masked = apply_mask(&mut g, xv, keep, fill);
    let out = model.forward(&mut g, &p, masked);
    let y = g.value(out);
    let mut total = 0.0;
    for (j, &t) in ts.iter().enumerate() {
        for ci in 0..c {
            let e = x[ci * l + t] - y[(j * c + ci) * l + t];
            total += e * e;
        }
    }
    total
}

/// Reference scorer: one forward pass per masked timestep.
pub fn score_sequential(ckpt: &Checkpoint, windows: &[&[f64]], seed: u64) -> Result<Vec<f64>> {
    score_with(ckpt, windows, seed, 1)
}

pub(crate) fn score(ckpt: &Checkpoint, windows: &[&[f64]], seed: u64) -> Result<Vec<f64>> {
    score_with(ckpt, windows, seed, SCORE_BATCH)
}

fn score_with(ckpt: &Checkpoint, windows: &[&[f64]], seed: u64, chunk: usize) -> Result<Vec<f64>> {
    check_arch(&ckpt.spec)?;
    super::check_windows(windows, &ckpt.spec)?;
    let (net, store) = restore(ckpt)?;
    let model = transformer(&net);
    let (c, l) = (ckpt.spec.in_channels, ckpt.spec.length);
    let values = scoring_mask_values(seed, c, l);
    let steps: Vec<usize> = (0..l).collect();
    Ok(windows
        .iter()
        .map(|x| {
            steps
                .chunks(chunk)
                .map(|ts| masked_errors(model, &store, x, ts, &values, c, l))
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_count_rounds_up() {
        assert_eq!(MadConfig::default().mask_count(512), 26);
        assert_eq!(MadConfig { mask_ratio: 0.5 }.mask_count(10), 5);
        assert!(MadConfig { mask_ratio: 1.0 }.validate().is_err());
    }

    #[test]
    fn mask_values_depend_on_seed_only() {
        assert_eq!(scoring_mask_values(3, 1, 16), scoring_mask_values(3, 1, 16));
        assert_ne!(scoring_mask_values(3, 1, 16), scoring_mask_values(4, 1, 16));
    }
}

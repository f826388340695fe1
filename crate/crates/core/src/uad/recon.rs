//! Convolutional autoencoder and variational autoencoder detectors.

use alloc::vec::Vec;

use super::{instantiate, map_batches, meta, restore, MethodState};
use crate::error::{Error, Result};
use crate::nn::models::{ConvAutoencoder, Network};
use crate::nn::{
    train as fit, Architecture, Batch, Checkpoint, Dataset, Graph, NetworkSpec, Objective, Tensor, TrainConfig,
    TrainReport, Var,
};
use crate::rng::{self, SeededRng};

/// Per-window `Σ (x - x̂)^2`.
pub fn reconstruction_error(x: &[f64], x_hat: &[f64]) -> f64 {
    x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `½ Σ (μ² + σ² - log σ² - 1)` for a diagonal Gaussian given its log-variance.
pub fn gaussian_kl(mean: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mean
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + libm::exp(*lv) - lv - 1.0)
        .sum::<f64>()
}

fn autoencoder(net: &Network) -> &ConvAutoencoder {
    match net {
        Network::Autoencoder(ae) => ae,
        _ => unreachable!("architecture checked before use"),
    }
}

fn per_window_sq_error(g: &mut Graph, x: Var, x_hat: Var) -> Var {
    let d = g.sub(x, x_hat);
    let sq = g.square(d);
    g.row_sum(sq)
}

pub(super) struct AeObjective<'a> {
    pub(super) ae: &'a ConvAutoencoder,
}

impl Objective for AeObjective<'_> {
    fn loss(&self, g: &mut Graph, p: &[Var], batch: &Batch, _rng: &mut SeededRng) -> Var {
        let x = g.input(batch.x.clone());
        let enc = self.ae.encode(g, p, x);
        let x_hat = self.ae.decode(g, p, enc.mean);
        let d = g.sub(x, x_hat);
        let sq = g.square(d);
        g.mean(sq)
    }
}

pub(super) struct VaeObjective<'a> {
    pub(super) ae: &'a ConvAutoencoder,
    pub(super) beta: f64,
}

impl VaeObjective<'_> {
    /// Per-window `recon + β·KL` with one reparameterised latent sample.
    fn per_window(&self, g: &mut Graph, p: &[Var], x: Var, rng: &mut SeededRng) -> Var {
        let enc = self.ae.encode(g, p, x);
        let logvar = enc.logvar.expect("variational encoder");
        let shape = g.shape(enc.mean).to_vec();
        let mut eps = alloc::vec![0.0; shape.iter().product()];
        rng::fill_normal(rng, &mut eps);
        let eps = g.input(Tensor::new(shape, eps));
        let half = g.scale(logvar, 0.5);
        let std = g.exp(half);
        let noise = g.mul(std, eps);
        let z = g.add(enc.mean, noise);
        let x_hat = self.ae.decode(g, p, z);
        let recon = per_window_sq_error(g, x, x_hat);

        let m2 = g.square(enc.mean);
        let var = g.exp(logvar);
        let t = g.add(m2, var);
        let t = g.sub(t, logvar);
        let t = g.offset(t, -1.0);
        let kl = g.row_sum(t);
        let kl = g.scale(kl, 0.5 * self.beta);
        g.add(recon, kl)
    }
}

impl Objective for VaeObjective<'_> {
    fn loss(&self, g: &mut Graph, p: &[Var], batch: &Batch, rng: &mut SeededRng) -> Var {
        let x = g.input(batch.x.clone());
        let l = self.per_window(g, p, x, rng);
        g.mean(l)
    }
}

fn check_arch(spec: &NetworkSpec, variational: bool) -> Result<()> {
    match (&spec.arch, variational) {
        (Architecture::ConvAe { .. }, false) | (Architecture::ConvVae { .. }, true) => Ok(()),
        _ => Err(Error::Config(alloc::format!(
            "{} needs a {} network",
            if variational { "VAE" } else { "AE" },
            if variational { "CONV_VAE" } else { "CONV_AE" }
        ))),
    }
}

pub(crate) fn train_ae(spec: &NetworkSpec, tw: &[&[f64]], vw: &[&[f64]], tc: &TrainConfig) -> Result<(Checkpoint, TrainReport)> {
    check_arch(spec, false)?;
    let (net, mut store) = instantiate(spec, tc.seed)?;
    let obj = AeObjective { ae: autoencoder(&net) };
    let td = Dataset::new(tw.to_vec(), spec.in_channels, spec.length);
    let vd = Dataset::new(vw.to_vec(), spec.in_channels, spec.length);
    let report = fit(&mut store, &obj, &td, Some(&vd), tc)?;
    Ok((Checkpoint::from_store(spec.clone(), &store, meta(tc, &report), MethodState::Ae), report))
}

pub(crate) fn train_vae(
    spec: &NetworkSpec,
    beta: f64,
    tw: &[&[f64]],
    vw: &[&[f64]],
    tc: &TrainConfig,
) -> Result<(Checkpoint, TrainReport)> {
    check_arch(spec, true)?;
    if !(beta >= 0.0) {
        return Err(Error::Config("beta must be non-negative".into()));
    }
    let (net, mut store) = instantiate(spec, tc.seed)?;
    let obj = VaeObjective { ae: autoencoder(&net), beta };
    let td = Dataset::new(tw.to_vec(), spec.in_channels, spec.length);
    let vd = Dataset::new(vw.to_vec(), spec.in_channels, spec.length);
    let report = fit(&mut store, &obj, &td, Some(&vd), tc)?;
    let state = MethodState::Vae { beta };
    Ok((Checkpoint::from_store(spec.clone(), &store, meta(tc, &report), state), report))
}

/// Reconstruction error, decoding the mean latent for the VAE.
pub(crate) fn score(ckpt: &Checkpoint, windows: &[&[f64]]) -> Result<Vec<f64>> {
    check_arch(&ckpt.spec, matches!(ckpt.method, MethodState::Vae { .. }))?;
    let (net, store) = restore(ckpt)?;
    let ae = autoencoder(&net);
    Ok(map_batches(windows, ckpt.spec.in_channels, ckpt.spec.length, &store, |g, p, x, _| {
        let enc = ae.encode(g, p, x);
        let x_hat = ae.decode(g, p, enc.mean);
        let e = per_window_sq_error(g, x, x_hat);
        g.value(e).to_vec()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let x = [0.3; 512];
        let shifted: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
        assert_eq!(reconstruction_error(&x, &x), 0.0);
        assert!((reconstruction_error(&x, &shifted) - 5.12).abs() < 1e-9);
        assert_eq!(gaussian_kl(&[0.0], &[0.0]), 0.0);
        assert!((gaussian_kl(&[1.0, 1.0], &[0.0, 0.0]) - 1.0).abs() < 1e-12);
    }
}

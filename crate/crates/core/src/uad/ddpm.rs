//! Denoising diffusion detector: partially diffuse, deterministically
//! reconstruct, and score the reconstruction error.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{instantiate, meta, restore, MethodState, SCORE_BATCH};
use crate::error::{Error, Result};
use crate::nn::models::{Network, Unet1d};
use crate::nn::{
    train as fit, Architecture, Batch, Checkpoint, Dataset, Graph, NetworkSpec, Objective, Tensor, TrainConfig,
    TrainReport, Var,
};
use crate::rng::{self, SeededRng};

/// What the denoiser is trained to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DdpmObjective {
    Epsilon,
    X0,
    V,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdpmConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub objective: DdpmObjective,
    pub t_star_fraction: f64,
}

impl Default for DdpmConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
            objective: DdpmObjective::Epsilon,
            t_star_fraction: 0.25,
        }
    }
}

impl DdpmConfig {
    pub fn schedule(&self) -> Result<DdpmSchedule> {
        DdpmSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }

    /// Depth of the partial diffusion applied before reconstruction.
    pub fn t_star(&self) -> usize {
        (libm::round(self.t_star_fraction * self.steps as f64) as usize).min(self.steps)
    }
}

/// Linear variance schedule with cumulative products `ᾱ_t`, indexed `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DdpmSchedule {
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl DdpmSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("diffusion needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end) {
            return Err(Error::Config("betas must satisfy 0 < start <= end < 1".into()));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                let f = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
                beta_start + f * (beta_end - beta_start)
            })
            .collect();
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `ᾱ_t` for `t` in `0..=T` (`ᾱ_0 = 1`).
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// `x_t = √ᾱ_t·x0 + √(1-ᾱ_t)·ε` for `1 <= t <= T`.
    pub fn q_sample(&self, x0: &[f64], t: usize, noise: &[f64]) -> Result<Vec<f64>> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidInput(alloc::format!("diffusion step {t} outside 1..={}", self.steps())));
        }
        Ok(q_sample_at(x0, self.alpha_bar(t), noise))
    }
}

pub fn q_sample_at(x0: &[f64], alpha_bar: f64, noise: &[f64]) -> Vec<f64> {
    let (a, s) = (libm::sqrt(alpha_bar), libm::sqrt(1.0 - alpha_bar));
    x0.iter().zip(noise).map(|(x, e)| a * x + s * e).collect()
}

/// `v = √ᾱ·ε - √(1-ᾱ)·x0`.
pub fn v_target(x0: &[f64], noise: &[f64], alpha_bar: f64) -> Vec<f64> {
    let (a, s) = (libm::sqrt(alpha_bar), libm::sqrt(1.0 - alpha_bar));
    x0.iter().zip(noise).map(|(x, e)| a * e - s * x).collect()
}

/// Recovers `(x̂0, ε̂)` from a model prediction under `objective`.
pub fn split_prediction(objective: DdpmObjective, x_t: &[f64], pred: &[f64], alpha_bar: f64) -> (Vec<f64>, Vec<f64>) {
    let (a, s) = (libm::sqrt(alpha_bar), libm::sqrt(1.0 - alpha_bar));
    match objective {
        DdpmObjective::Epsilon => {
            let x0 = x_t.iter().zip(pred).map(|(x, e)| (x - s * e) / a).collect();
            (x0, pred.to_vec())
        }
        DdpmObjective::X0 => {
            let eps = x_t.iter().zip(pred).map(|(x, p)| (x - a * p) / s).collect();
            (pred.to_vec(), eps)
        }
        DdpmObjective::V => {
            let x0 = x_t.iter().zip(pred).map(|(x, v)| a * x - s * v).collect();
            let eps = x_t.iter().zip(pred).map(|(x, v)| s * x + a * v).collect();
            (x0, eps)
        }
    }
}

/// Deterministic (η = 0) reverse pass from `x_t` at step `t_star` to `x̂0`.
/// `predict(batch, t)` evaluates the denoiser on a flat batch at step `t`.
pub fn ddim_reconstruct<F>(
    schedule: &DdpmSchedule,
    objective: DdpmObjective,
    x_t: Vec<f64>,
    t_star: usize,
    mut predict: F,
) -> Vec<f64>
where
    F: FnMut(&[f64], usize) -> Vec<f64>,
{
    let mut x = x_t;
    for t in (1..=t_star).rev() {
        let pred = predict(&x, t);
        let (x0, eps) = split_prediction(objective, &x, &pred, schedule.alpha_bar(t));
        if t == 1 {
            return x0;
        }
        let prev = schedule.alpha_bar(t - 1);
        let (a, s) = (libm::sqrt(prev), libm::sqrt(1.0 - prev));
        x = x0.iter().zip(&eps).map(|(p, e)| a * p + s * e).collect();
    }
    x
}

fn unet(net: &Network) -> &Unet1d {
    match net {
        Network::Unet(u) => u,
        _ => unreachable!("architecture checked before use"),
    }
}

fn check_arch(spec: &NetworkSpec) -> Result<()> {
    if !matches!(spec.arch, Architecture::Unet1d { .. }) {
        return Err(Error::Config("DDPM needs a UNET1D network".into()));
    }
    Ok(())
}

pub(super) struct DdpmTrainObjective<'a> {
    pub(super) model: &'a Unet1d,
    pub(super) schedule: DdpmSchedule,
    pub(super) objective: DdpmObjective,
}

impl Objective for DdpmTrainObjective<'_> {
    fn loss(&self, g: &mut Graph, p: &[Var], batch: &Batch, rng: &mut SeededRng) -> Var {
        let shape = batch.x.shape.clone();
        let b = shape[0];
        let width = batch.x.data.len() / b;
        let mut steps = Vec::with_capacity(b);
        let mut x_t = Vec::with_capacity(batch.x.data.len());
        let mut target = Vec::with_capacity(batch.x.data.len());
        let mut noise = vec![0.0; width];
        for i in 0..b {
            use rand::Rng;
            let t = rng.random_range(1..=self.schedule.steps());
            let x0 = batch.x.row(i);
            rng::fill_normal(rng, &mut noise);
            let ab = self.schedule.alpha_bar(t);
            x_t.extend(q_sample_at(x0, ab, &noise));
            match self.objective {
                DdpmObjective::Epsilon => target.extend_from_slice(&noise),
                DdpmObjective::X0 => target.extend_from_slice(x0),
                DdpmObjective::V => target.extend(v_target(x0, &noise, ab)),
            }
            steps.push(t);
        }
        let xt = g.input(Tensor::new(shape.clone(), x_t));
        let pred = self.model.forward(g, p, xt, &steps);
        let tgt = g.input(Tensor::new(shape, target));
        let d = g.sub(pred, tgt);
        let sq = g.square(d);
        g.mean(sq)
    }
}

pub(crate) fn train(
    spec: &NetworkSpec,
    cfg: &DdpmConfig,
    tw: &[&[f64]],
    vw: &[&[f64]],
    tc: &TrainConfig,
) -> Result<(Checkpoint, TrainReport)> {
    check_arch(spec)?;
    let schedule = cfg.schedule()?;
    if !(cfg.t_star_fraction >= 0.0 && cfg.t_star_fraction < 1.0) {
        return Err(Error::Config("t_star_fraction must lie in [0, 1)".into()));
    }
    let (net, mut store) = instantiate(spec, tc.seed)?;
    let obj = DdpmTrainObjective {
        model: unet(&net),
        schedule,
        objective: cfg.objective,
    };
    let td = Dataset::new(tw.to_vec(), spec.in_channels, spec.length);
    let vd = Dataset::new(vw.to_vec(), spec.in_channels, spec.length);
    let report = fit(&mut store, &obj, &td, Some(&vd), tc)?;
    let state = MethodState::Ddpm { schedule: *cfg };
    Ok((Checkpoint::from_store(spec.clone(), &store, meta(tc, &report), state), report))
}

/// Noise used to diffuse window `index` when scoring under `seed`.
pub fn scoring_noise(seed: u64, index: usize, width: usize) -> Vec<f64> {
    let mut r = rng::seeded(rng::derive_seed(seed, index as u64));
    let mut v = vec![0.0; width];
    rng::fill_normal(&mut r, &mut v);
    v
}

pub(crate) fn score(ckpt: &Checkpoint, windows: &[&[f64]], seed: u64) -> Result<Vec<f64>> {
    check_arch(&ckpt.spec)?;
    let MethodState::Ddpm { schedule: cfg } = &ckpt.method else {
        return Err(Error::Config("not a DDPM checkpoint".into()));
    };
    let schedule = cfg.schedule()?;
    let t_star = cfg.t_star();
    if t_star == 0 {
        return Ok(vec![0.0; windows.len()]);
    }
    let (net, store) = restore(ckpt)?;
    let model = unet(&net);
    let (c, l) = (ckpt.spec.in_channels, ckpt.spec.length);
    let width = c * l;
    let mut scores = Vec::with_capacity(windows.len());
    for (k, chunk) in windows.chunks(SCORE_BATCH).enumerate() {
        let n = chunk.len();
        let mut x_t = Vec::with_capacity(n * width);
        for (j, x) in chunk.iter().enumerate() {
            let noise = scoring_noise(seed, k * SCORE_BATCH + j, width);
            x_t.extend(q_sample_at(x, schedule.alpha_bar(t_star), &noise));
        }
        let x0 = ddim_reconstruct(&schedule, cfg.objective, x_t, t_star, |xs, t| {
            let mut g = Graph::new();
            let p = store.bind(&mut g);
            let xv = g.input(Tensor::new(vec![n, c, l], xs.to_vec()));
            let out = model.forward(&mut g, &p, xv, &vec![t; n]);
            g.value(out).to_vec()
        });
        for (j, x) in chunk.iter().enumerate() {
            let r = &x0[j * width..(j + 1) * width];
            scores.push(x.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum());
        }
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_monotone() {
        let s = DdpmConfig::default().schedule().unwrap();
        assert_eq!(s.steps(), 100);
        assert!((s.betas[0] - 1e-4).abs() < 1e-15 && (s.betas[99] - 0.02).abs() < 1e-15);
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
        assert!(s.q_sample(&[1.0], 0, &[0.0]).is_err());
        assert!(s.q_sample(&[1.0], 101, &[0.0]).is_err());
    }

    #[test]
    fn q_sample_limits_and_v_target() {
        assert_eq!(q_sample_at(&[2.0], 1.0, &[5.0]), vec![2.0]);
        assert_eq!(q_sample_at(&[2.0], 0.0, &[5.0]), vec![5.0]);
        let v = v_target(&[1.0], &[1.0], 0.25)[0];
        assert!((v - (0.5 - libm::sqrt(0.75))).abs() < 1e-12);
        assert!((v + 0.3660).abs() < 1e-4);
    }

    #[test]
    fn predictions_invert_for_every_objective() {
        let (x0, eps, ab) = ([0.7, -1.2], [0.3, 0.9], 0.6);
        let xt = q_sample_at(&x0, ab, &eps);
        for (obj, pred) in [
            (DdpmObjective::Epsilon, eps.to_vec()),
            (DdpmObjective::X0, x0.to_vec()),
            (DdpmObjective::V, v_target(&x0, &eps, ab)),
        ] {
            let (rx, re) = split_prediction(obj, &xt, &pred, ab);
            for i in 0..2 {
                assert!((rx[i] - x0[i]).abs() < 1e-12, "{obj:?}");
                assert!((re[i] - eps[i]).abs() < 1e-12, "{obj:?}");
            }
        }
    }

    #[test]
    fn oracle_denoiser_reconstructs_exactly() {
        let s = DdpmConfig::default().schedule().unwrap();
        let x0 = vec![0.4, -0.2, 1.5];
        let xt = s.q_sample(&x0, 25, &[0.1, 0.5, -0.3]).unwrap();
        let r = ddim_reconstruct(&s, DdpmObjective::X0, xt, 25, |_, _| x0.clone());
        for (a, b) in r.iter().zip(&x0) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

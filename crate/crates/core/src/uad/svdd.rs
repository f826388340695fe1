//! Deep SVDD: pull encoder outputs towards a fixed center.

use alloc::vec;
use alloc::vec::Vec;

use super::{instantiate, map_batches, meta, restore, MethodState};
use crate::error::{Error, Result};
use crate::nn::models::Network;
use crate::nn::{
    train as fit, Architecture, Batch, Checkpoint, Dataset, Graph, NetworkSpec, Objective, ParamStore, Tensor,
    TrainConfig, TrainReport, Var,
};
use crate::rng::SeededRng;

pub const DEFAULT_EPSILON: f64 = 0.1;

/// Rejects encoder configurations that admit the trivial constant solution.
pub fn check_collapse_guard(spec: &NetworkSpec) -> Result<()> {
    if !matches!(spec.arch, Architecture::Resnet1dEncoder { .. }) {
        return Err(Error::Config("Deep SVDD needs a RESNET1D_ENCODER".into()));
    }
    if spec.use_bias {
        return Err(Error::Config("Deep SVDD encoder must not use bias terms".into()));
    }
    if !spec.activation.is_unbounded() {
        return Err(Error::Config("Deep SVDD encoder needs an unbounded activation".into()));
    }
    Ok(())
}

/// Mean of `latents`, with coordinates closer to zero than `epsilon`
/// pushed out to `±epsilon` (zero goes to `+epsilon`).
pub fn init_center(latents: &[&[f64]], epsilon: f64) -> Result<Vec<f64>> {
    let first = latents
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot initialise a center from no data".into()))?;
    let mut c = vec![0.0; first.len()];
    for z in latents {
        for (ci, zi) in c.iter_mut().zip(z.iter()) {
            *ci += zi;
        }
    }
    for v in &mut c {
        *v /= latents.len() as f64;
        if v.abs() < epsilon {
            *v = if *v < 0.0 { -epsilon } else { epsilon };
        }
    }
    Ok(c)
}

/// `||z - c||^2`.
pub fn squared_distance(z: &[f64], c: &[f64]) -> f64 {
    z.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub(super) struct SvddObjective<'a> {
    pub(super) net: &'a Network,
    pub(super) center: &'a [f64],
}

impl SvddObjective<'_> {
    fn distances(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        let Network::ResNet(enc) = self.net else {
            unreachable!("checked by the collapse guard")
        };
        let z = enc.forward(g, p, x);
        let b = g.shape(z)[0];
        let d = self.center.len();
        let c: Vec<f64> = (0..b).flat_map(|_| self.center.iter().copied()).collect();
        let c = g.input(Tensor::new(vec![b, d], c));
        let diff = g.sub(z, c);
        let sq = g.square(diff);
        g.row_sum(sq)
    }
}

impl Objective for SvddObjective<'_> {
    fn loss(&self, g: &mut Graph, params: &[Var], batch: &Batch, _rng: &mut SeededRng) -> Var {
        let x = g.input(batch.x.clone());
        let d = self.distances(g, params, x);
        g.mean(d)
    }
}

fn latents(net: &Network, store: &ParamStore, windows: &[&[f64]], channels: usize, length: usize) -> Vec<Vec<f64>> {
    let Network::ResNet(enc) = net else {
        unreachable!("checked by the collapse guard")
    };
    map_batches(windows, channels, length, store, |g, p, x, _| {
        let z = enc.forward(g, p, x);
        let d = g.shape(z)[1];
        g.value(z).chunks(d).map(<[f64]>::to_vec).collect()
    })
}

pub(crate) fn train(
    spec: &NetworkSpec,
    epsilon: f64,
    train_w: &[&[f64]],
    val_w: &[&[f64]],
    tc: &TrainConfig,
) -> Result<(Checkpoint, TrainReport)> {
    check_collapse_guard(spec)?;
    if !(epsilon > 0.0) {
        return Err(Error::Config("epsilon must be positive".into()));
    }
    if train_w.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let (net, mut store) = instantiate(spec, tc.seed)?;
    let z = latents(&net, &store, train_w, spec.in_channels, spec.length);
    let zr: Vec<&[f64]> = z.iter().map(Vec::as_slice).collect();
    let center = init_center(&zr, epsilon)?;
    let obj = SvddObjective { net: &net, center: &center };
    let td = Dataset::new(train_w.to_vec(), spec.in_channels, spec.length);
    let vd = Dataset::new(val_w.to_vec(), spec.in_channels, spec.length);
    let report = fit(&mut store, &obj, &td, Some(&vd), tc)?;
    let state = MethodState::DeepSvdd { center, epsilon };
    Ok((Checkpoint::from_store(spec.clone(), &store, meta(tc, &report), state), report))
}

pub(crate) fn score(ckpt: &Checkpoint, windows: &[&[f64]]) -> Result<Vec<f64>> {
    check_collapse_guard(&ckpt.spec)?;
    let MethodState::DeepSvdd { center, .. } = &ckpt.method else {
        return Err(Error::Config("not a Deep SVDD checkpoint".into()));
    };
    let (net, store) = restore(ckpt)?;
    let obj = SvddObjective { net: &net, center };
    Ok(map_batches(windows, ckpt.spec.in_channels, ckpt.spec.length, &store, |g, p, x, _| {
        let d = obj.distances(g, p, x);
        g.value(d).to_vec()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, ConvStage};

    #[test]
    fn center_snapping() {
        let zero = [0.0, 0.0];
        assert_eq!(init_center(&[&zero], 0.1).unwrap(), vec![0.1, 0.1]);
        let one = [3.0, -0.05];
        assert_eq!(init_center(&[&one], 0.1).unwrap(), vec![3.0, -0.1]);
        let (a, b) = ([1.0, 1.0], [3.0, 3.0]);
        assert_eq!(init_center(&[&a, &b], 0.1).unwrap(), vec![2.0, 2.0]);
        assert!(init_center(&[], 0.1).is_err());
    }

    #[test]
    fn distance_arithmetic() {
        assert_eq!(squared_distance(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(squared_distance(&[4.0, 6.0], &[1.0, 2.0]), 25.0);
    }

    #[test]
    fn guard_rejects_bias_and_bounded_activation() {
        let mut spec = NetworkSpec {
            in_channels: 1,
            length: 64,
            use_bias: true,
            activation: Activation::LeakyRelu,
            arch: Architecture::Resnet1dEncoder {
                stem: ConvStage::new(4, 5, 2),
                blocks: vec![ConvStage::new(4, 3, 1)],
                latent_dim: 3,
            },
        };
        assert!(matches!(check_collapse_guard(&spec), Err(Error::Config(_))));
        spec.use_bias = false;
        assert!(check_collapse_guard(&spec).is_ok());
        spec.activation = Activation::Tanh;
        assert!(check_collapse_guard(&spec).is_err());
    }
}

//! Verification hooks: random untrained models, objective gradient checks
//! and brute-force flow Jacobians.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::ddpm::DdpmTrainObjective;
use super::flow::NllObjective;
use super::mad::MadObjective;
use super::recon::{AeObjective, VaeObjective};
use super::svdd::{self, SvddObjective};
use super::{check_windows, instantiate, map_batches, restore, DetectorConfig, MethodState};
use crate::error::{Error, Result};
use crate::nn::models::{Glow1d, Network};
use crate::nn::{grad_check, Batch, Checkpoint, Graph, NetworkSpec, Objective, ParamStore, Tensor, TrainingMeta, Var};
use crate::rng;

/// Default initialisation plus Gaussian jitter of std `jitter` on every weight.
pub fn random_store(spec: &NetworkSpec, seed: u64, jitter: f64) -> Result<(Network, ParamStore)> {
    let (net, mut store) = instantiate(spec, seed)?;
    let mut r = rng::seeded(rng::derive_seed(seed, 0x4a49_5454));
    for t in &mut store.tensors {
        for v in &mut t.data {
            *v += jitter * rng::normal(&mut r);
        }
    }
    Ok((net, store))
}

fn method_state(cfg: &DetectorConfig, seed: u64) -> Result<MethodState> {
    Ok(match cfg {
        DetectorConfig::DeepSvdd { spec, epsilon } => {
            let d = match &spec.arch {
                crate::nn::Architecture::Resnet1dEncoder { latent_dim, .. } => *latent_dim,
                _ => return Err(Error::Config("Deep SVDD needs a RESNET1D_ENCODER network".into())),
            };
            let mut r = rng::seeded(seed);
            let center = (0..d).map(|_| rng::normal(&mut r)).collect::<Vec<_>>();
            MethodState::DeepSvdd {
                center: svdd::init_center(&[&center], *epsilon)?,
                epsilon: *epsilon,
            }
        }
        DetectorConfig::Ae { .. } => MethodState::Ae,
        DetectorConfig::Vae { beta, .. } => MethodState::Vae { beta: *beta },
        DetectorConfig::Mad { mask, .. } => MethodState::Mad { mask: *mask },
        DetectorConfig::Ddpm { schedule, .. } => MethodState::Ddpm { schedule: *schedule },
        DetectorConfig::Nf { .. } => MethodState::Nf,
    })
}

/// An untrained detector with jittered weights, usable for scoring.
pub fn random_checkpoint(cfg: &DetectorConfig, seed: u64) -> Result<Checkpoint> {
    let (_, store) = random_store(cfg.spec(), seed, 0.05)?;
    let meta = TrainingMeta {
        seed,
        epochs: 0,
        final_train_loss: 0.0,
        best_val_loss: None,
    };
    Ok(Checkpoint::from_store(cfg.spec().clone(), &store, meta, method_state(cfg, seed)?))
}

/// Largest relative error between the analytic gradient of the method's
/// training loss on `sample` and central finite differences, over `probes`
/// random parameters of a jittered model. Masks and noise are fixed by `seed`.
pub fn objective_grad_check(cfg: &DetectorConfig, sample: &[&[f64]], seed: u64, probes: usize) -> Result<f64> {
    let spec = cfg.spec();
    check_windows(sample, spec)?;
    cfg.param_count()?;
    let (net, store) = random_store(spec, seed, 0.05)?;
    let batch = Batch {
        x: Tensor::stack(sample, spec.in_channels, spec.length),
        y: None,
    };
    let center = match method_state(cfg, seed)? {
        MethodState::DeepSvdd { center, .. } => center,
        _ => Vec::new(),
    };
    let obj: Box<dyn Objective + '_> = match (cfg, &net) {
        (DetectorConfig::DeepSvdd { .. }, _) => {
            svdd::check_collapse_guard(spec)?;
            Box::new(SvddObjective { net: &net, center: &center })
        }
        (DetectorConfig::Ae { .. }, Network::Autoencoder(ae)) => Box::new(AeObjective { ae }),
        (DetectorConfig::Vae { beta, .. }, Network::Autoencoder(ae)) => Box::new(VaeObjective { ae, beta: *beta }),
        (DetectorConfig::Mad { mask, .. }, Network::Transformer(model)) => Box::new(MadObjective {
            model,
            mask: *mask,
            channels: spec.in_channels,
            length: spec.length,
        }),
        (DetectorConfig::Ddpm { schedule, .. }, Network::Unet(model)) => Box::new(DdpmTrainObjective {
            model,
            schedule: schedule.schedule()?,
            objective: schedule.objective,
        }),
        (DetectorConfig::Nf { .. }, Network::Glow(flow)) => Box::new(NllObjective { flow }),
        _ => return Err(Error::Config("network does not match the method".into())),
    };
    let loss_seed = rng::derive_seed(seed, 0x4c4f_5353);
    let loss = |g: &mut Graph, p: &[Var]| obj.loss(g, p, &batch, &mut rng::seeded(loss_seed));
    Ok(grad_check(&store, &loss, probes, &mut rng::seeded(rng::derive_seed(seed, 0x5052_4f42))))
}

/// Results of pushing one window through a flow checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowCheck {
    /// max |inverse(forward(x)) - x|.
    pub inverse_error: f64,
    pub log_det: f64,
    pub log_prob: f64,
    /// From a central-difference Jacobian; only for inputs of at most
    /// [`BRUTE_FORCE_DIMS`] values.
    pub brute_log_det: Option<f64>,
    pub brute_log_prob: Option<f64>,
}

pub const BRUTE_FORCE_DIMS: usize = 8;

fn glow(net: &Network) -> Result<&Glow1d> {
    match net {
        Network::Glow(f) => Ok(f),
        _ => Err(Error::Config("NF needs a GLOW1D network".into())),
    }
}

fn forward_one(flow: &Glow1d, store: &ParamStore, x: &[f64], c: usize, l: usize) -> (Vec<f64>, f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let xv = g.input(Tensor::new(vec![1, c, l], x.to_vec()));
    let out = flow.forward(&mut g, &p, xv);
    let z: Vec<f64> = out.z.iter().flat_map(|v| g.value(*v).to_vec()).collect();
    let pieces = out.z.iter().map(|v| g.tensor(*v)).collect();
    (z, g.value(out.log_det)[0], pieces)
}

pub fn flow_check(ckpt: &Checkpoint, x: &[f64]) -> Result<FlowCheck> {
    check_windows(&[x], &ckpt.spec)?;
    let (net, store) = restore(ckpt)?;
    let flow = glow(&net)?;
    let (c, l) = (ckpt.spec.in_channels, ckpt.spec.length);
    let (z, log_det, pieces) = forward_one(flow, &store, x, c, l);
    let back = flow.inverse(&store, &pieces);
    let inverse_error = back.data.iter().zip(x).map(|(a, b)| libm::fabs(a - b)).fold(0.0, f64::max);
    let log_prob = map_batches(&[x], c, l, &store, |g, p, xv, _| {
        let lp = flow.log_prob(g, p, xv);
        g.value(lp).to_vec()
    })[0];
    let d = x.len();
    let (brute_log_det, brute_log_prob) = if d <= BRUTE_FORCE_DIMS {
        let h = 1e-5;
        let mut jac = vec![0.0; d * d];
        for j in 0..d {
            let mut xp = x.to_vec();
            xp[j] += h;
            let (zp, _, _) = forward_one(flow, &store, &xp, c, l);
            xp[j] -= 2.0 * h;
            let (zm, _, _) = forward_one(flow, &store, &xp, c, l);
            for i in 0..d {
                jac[i * d + j] = (zp[i] - zm[i]) / (2.0 * h);
            }
        }
        let ld = crate::linalg::log_abs_det(&jac, d);
        let base: f64 = -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * d as f64 * libm::log(2.0 * core::f64::consts::PI);
        (Some(ld), Some(base + ld))
    } else {
        (None, None)
    };
    Ok(FlowCheck {
        inverse_error,
        log_det,
        log_prob,
        brute_log_det,
        brute_log_prob,
    })
}

/// The center Deep SVDD training would fix for these windows and seed:
/// mean latent of the freshly initialised encoder, snapped to ±epsilon.
pub fn svdd_initial_center(spec: &NetworkSpec, epsilon: f64, windows: &[&[f64]], seed: u64) -> Result<Vec<f64>> {
    svdd::check_collapse_guard(spec)?;
    check_windows(windows, spec)?;
    let (net, store) = instantiate(spec, seed)?;
    let Network::ResNet(enc) = &net else {
        return Err(Error::Config("Deep SVDD needs a RESNET1D_ENCODER network".into()));
    };
    let z = map_batches(windows, spec.in_channels, spec.length, &store, |g, p, x, _| {
        let z = enc.forward(g, p, x);
        let d = g.shape(z)[1];
        g.value(z).chunks(d).map(<[f64]>::to_vec).collect::<Vec<_>>()
    });
    let zr: Vec<&[f64]> = z.iter().map(Vec::as_slice).collect();
    svdd::init_center(&zr, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uad::tests::small_specs;
    use crate::uad::{DdpmConfig, MadConfig, Method};

    fn cfg(method: Method, spec: NetworkSpec) -> DetectorConfig {
        match method {
            Method::DeepSvdd => DetectorConfig::DeepSvdd { spec, epsilon: 0.1 },
            Method::Ae => DetectorConfig::Ae { spec },
            Method::Vae => DetectorConfig::Vae { spec, beta: 0.7 },
            Method::Mad => DetectorConfig::Mad {
                spec,
                mask: MadConfig { mask_ratio: 0.2 },
            },
            Method::Ddpm => DetectorConfig::Ddpm {
                spec,
                schedule: DdpmConfig::default(),
            },
            Method::Nf => DetectorConfig::Nf { spec },
        }
    }

    #[test]
    fn public_grad_check_covers_every_method() {
        let x: Vec<Vec<f64>> = (0..2).map(|k| (0..32).map(|t| libm::sin(0.3 * t as f64 + k as f64)).collect()).collect();
        let refs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        for (m, spec) in small_specs() {
            let err = objective_grad_check(&cfg(m, spec), &refs, 3, 32).unwrap();
            assert!(err < 1e-3, "{m:?}: {err}");
        }
    }
}

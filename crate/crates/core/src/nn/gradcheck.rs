use alloc::vec::Vec;
use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{collect_grads, ParamStore};
use crate::rng::SeededRng;

pub const FD_STEP: f64 = 1e-4;

/// Largest relative error between the analytic gradient and central finite
/// differences (step [`FD_STEP`]) over at most `probes` random parameters.
///
/// `loss` must be deterministic: any masks or noise it uses are fixed by the caller.
pub fn grad_check(
    store: &ParamStore,
    loss: &dyn Fn(&mut Graph, &[Var]) -> Var,
    probes: usize,
    rng: &mut SeededRng,
) -> f64 {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let l = loss(&mut g, &p);
    let grads = g.backward(l);
    let analytic = collect_grads(&p, &grads, store);

    let sizes: Vec<usize> = store.tensors.iter().map(|t| t.numel()).collect();
    let total: usize = sizes.iter().sum();
    let mut worst: f64 = 0.0;
    let mut work = store.clone();
    for _ in 0..probes.min(total) {
        let mut flat = rng.random_range(0..total);
        let mut ti = 0;
        while flat >= sizes[ti] {
            flat -= sizes[ti];
            ti += 1;
        }
        let orig = work.tensors[ti].data[flat];
        work.tensors[ti].data[flat] = orig + FD_STEP;
        let lp = eval(&work, loss);
        work.tensors[ti].data[flat] = orig - FD_STEP;
        let lm = eval(&work, loss);
        work.tensors[ti].data[flat] = orig;
        let fd = (lp - lm) / (2.0 * FD_STEP);
        let a = analytic[ti][flat];
        let denom = a.abs().max(fd.abs()).max(1e-7);
        worst = worst.max((a - fd).abs() / denom);
    }
    worst
}

fn eval(store: &ParamStore, loss: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let l = loss(&mut g, &p);
    g.scalar(l)
}

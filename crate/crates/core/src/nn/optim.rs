use alloc::vec;
use alloc::vec::Vec;

use super::params::ParamStore;

/// Adam with coupled L2 weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors.iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) {
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for (i, t) in store.tensors.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in t.data.iter_mut().enumerate() {
                let g = grads[i][j] + self.weight_decay * *w;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *w -= self.lr * mh / (libm::sqrt(vh) + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;
    use alloc::string::ToString;

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore {
            names: vec!["w".to_string()],
            tensors: vec![Tensor::new(vec![2], vec![1.0, -1.0])],
        };
        let mut opt = Adam::new(&store, 0.1, 0.0);
        opt.step(&mut store, &[vec![3.0, -0.5]]);
        assert!((store.tensors[0].data[0] - 0.9).abs() < 1e-6);
        assert!((store.tensors[0].data[1] + 0.9).abs() < 1e-6);
    }
}

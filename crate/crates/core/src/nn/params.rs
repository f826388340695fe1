use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::linalg;
use crate::rng::{self, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)` (He / Kaiming for ReLU-family nets).
    Kaiming { fan_in: usize },
    Zeros,
    Ones,
    /// Random rotation; used by invertible 1x1 convolutions.
    Orthogonal,
    Normal { std: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDef {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamDef {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Collects parameter definitions while a network is assembled.
#[derive(Debug, Default)]
pub struct LayoutBuilder {
    defs: Vec<ParamDef>,
}

impl LayoutBuilder {
    pub fn add(&mut self, name: &str, shape: Vec<usize>, init: Init) -> usize {
        debug_assert!(
            self.defs.iter().all(|d| d.name != name),
            "duplicate parameter name {name}"
        );
        self.defs.push(ParamDef {
            name: name.to_string(),
            shape,
            init,
        });
        self.defs.len() - 1
    }

    pub fn total(&self) -> usize {
        self.defs.iter().map(ParamDef::numel).sum()
    }

    pub fn finish(self) -> Vec<ParamDef> {
        self.defs
    }
}

/// Named parameter tensors in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn init(defs: &[ParamDef], rng: &mut SeededRng) -> Self {
        let mut names = Vec::with_capacity(defs.len());
        let mut tensors = Vec::with_capacity(defs.len());
        for d in defs {
            let n = d.numel();
            let data = match d.init {
                Init::Kaiming { fan_in } => {
                    let bound = libm::sqrt(6.0 / fan_in.max(1) as f64);
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                }
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Normal { std } => (0..n).map(|_| std * rng::normal(rng)).collect(),
                Init::Orthogonal => {
                    let c = d.shape[0];
                    let mut m: Vec<f64> = (0..c * c).map(|_| rng::normal(rng)).collect();
                    linalg::orthonormalize_rows(&mut m, c);
                    m
                }
            };
            names.push(d.name.clone());
            tensors.push(Tensor::new(d.shape.clone(), data));
        }
        Self { names, tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    /// Places every parameter on the tape.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| g.param(i, t))
            .collect()
    }

    /// Flattened view, in layout order.
    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// Rounds every value to the nearest f32, matching what a checkpoint stores.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Per-parameter gradient buffers gathered from a backward pass.
pub fn collect_grads(bound: &[Var], grads: &Gradients, store: &ParamStore) -> Vec<Vec<f64>> {
    bound
        .iter()
        .zip(&store.tensors)
        .map(|(v, t)| match grads.get(*v) {
            Some(d) => d.to_vec(),
            None => vec![0.0; t.numel()],
        })
        .collect()
}

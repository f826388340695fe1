//! In-memory checkpoint: spec, f32 weights, training metadata and method state.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::spec::{count_params, NetworkSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::uad::MethodState;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub final_train_loss: f64,
    pub best_val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub tensors: Vec<NamedTensor>,
    pub training_meta: TrainingMeta,
    pub method: MethodState,
}

impl Checkpoint {
    pub fn from_store(spec: NetworkSpec, store: &ParamStore, training_meta: TrainingMeta, method: MethodState) -> Self {
        let tensors = store
            .names
            .iter()
            .zip(&store.tensors)
            .map(|(n, t)| NamedTensor {
                name: n.clone(),
                shape: t.shape.clone(),
                data: t.data.iter().map(|v| *v as f32).collect(),
            })
            .collect();
        Self {
            spec,
            tensors,
            training_meta,
            method,
        }
    }

    pub fn to_store(&self) -> ParamStore {
        ParamStore {
            names: self.tensors.iter().map(|t| t.name.clone()).collect(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::new(t.shape.clone(), t.data.iter().map(|v| *v as f64).collect()))
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Unique tensor names, shapes consistent with data, and a parameter
    /// total equal to the spec's exact count.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for t in &self.tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate tensor name {}", t.name)));
            }
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::InvalidInput(format!("tensor {} shape/data mismatch", t.name)));
            }
        }
        let expected = count_params(&self.spec)?;
        if expected != self.param_count() {
            return Err(Error::InvalidInput(format!(
                "checkpoint holds {} parameters, spec describes {expected}",
                self.param_count()
            )));
        }
        Ok(())
    }
}

//! Minimal trainable-network substrate.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod models;
pub mod optim;
pub mod params;
pub mod spec;
pub mod tensor;
pub mod train;

pub use checkpoint::{Checkpoint, NamedTensor, TrainingMeta, CHECKPOINT_VERSION};
pub use gradcheck::grad_check;
pub use graph::{Graph, SparseMap, Var};
pub use params::{Init, LayoutBuilder, ParamDef, ParamStore};
pub use spec::{count_params, Activation, Architecture, ConvStage, NetworkKind, NetworkSpec};
pub use tensor::Tensor;
pub use train::{train, Batch, Dataset, Objective, TrainConfig, TrainReport};

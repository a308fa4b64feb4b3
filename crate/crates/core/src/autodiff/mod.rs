//! Reverse-mode automatic differentiation, optimizer and checkpoints.

pub mod checkpoint;
pub mod graph;
pub mod init;
pub mod optim;
pub mod tensor;

pub use checkpoint::{load_into, read_checkpoint, write_checkpoint, CheckpointHeader};
pub use graph::{gradient_check, ConvGeometry, Gradients, Graph, Reduction, Var};
pub use init::{kaiming_uniform, pointwise_mlp, Linear};
pub use optim::{cosine_lr, Adam, AdamConfig, ParamSet};
pub use tensor::Tensor;

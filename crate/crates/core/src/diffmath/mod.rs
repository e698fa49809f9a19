//! Reverse-mode automatic differentiation and the small neural-network
//! toolkit built on top of it: dense arrays, a define-by-run graph, MLPs with
//! optional layer norm, Adam, Polyak averaging, and parameter checkpoints.

pub mod array;
pub mod checkpoint;
pub mod graph;
pub mod mlp;
pub mod optim;

pub use array::{Array, Bcast};
pub use checkpoint::{Checkpoint, ParamEntry, CHECKPOINT_VERSION};
pub use graph::Var;
pub use mlp::{Activation, Linear, Mlp};
pub use optim::{global_grad_norm, polyak_update, Adam};

//! Desk-scale offline multi-agent actor-critic laboratory.
//!
//! The crate is organised around the lifecycle of an offline run: scripted
//! behaviours roll out in small cooperative environments ([`envsim`]), their
//! transitions land in JSONL datasets ([`datastore`]), per-agent critics are
//! combined into a joint value ([`valuedecomp`]) and trained against TD,
//! SARSA, or expectile targets with optional scale-invariant value
//! normalisation ([`valuelearn`]), policies are extracted by regularised
//! improvement or advantage-weighted regression ([`policyext`]), and a
//! linearised model of the coupled update ([`stability`]) predicts when the
//! whole loop diverges. [`runner`] ties the pieces into config-driven
//! train/sweep/eval/report entry points, and [`diffmath`] supplies the
//! reverse-mode autodiff everything else is written against.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the trainer
//! and everything downstream use the crate-level [`Real`] alias.

pub mod datastore;
pub mod diffmath;
pub mod envsim;
pub mod error;
pub mod policyext;
pub mod runner;
pub mod scalar;
pub mod stability;
pub mod valuedecomp;
pub mod valuelearn;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Working precision for training, evaluation, and the stability tooling.
pub type Real = f64;

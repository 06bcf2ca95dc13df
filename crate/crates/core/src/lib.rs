//! In-context sparse recovery.
//!
//! Classical LASSO solvers (ISTA, FISTA), unrolled learned solvers (LISTA,
//! LISTA-CP, LISTA-VM and its support-restricted variant) with hand-written
//! reverse-mode gradients, a decoder Transformer whose explicitly constructed
//! weights execute LISTA-VM in context, numerical checks of the convergence
//! theory, and a seeded experiment runner.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classical;
pub mod container;
pub mod error;
pub mod experiments;
pub mod instance;
pub mod learned;
pub mod seed;
pub mod transformer;
pub mod verification;

pub use classical::{
    fista_solve, ista_solve, lasso_objective, soft_threshold, spectral_norm_sq, LassoProblem,
    SolverTrace,
};
pub use error::{Error, Result};
pub use instance::{
    sample_batch, sample_batch_fixed_x, sample_instance, InstanceConfig, SparseInstance,
};

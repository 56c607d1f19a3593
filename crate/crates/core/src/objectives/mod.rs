//! Variational objectives: non-centered functional PCA, NTK and generic
//! operator diagonalization, and Koopman fitting.

pub mod dataset;
pub mod flowmap;
pub mod kernel;
pub mod loss;

pub use dataset::{FunctionDataset, GriddedDataset};
pub use flowmap::{wrap, FlowMap, IdentityMap, TaylorGreen, Translation};
pub use kernel::{FrozenNetwork, KernelOperator, LinearNetwork};
pub use loss::{
    evolve_draw, koopman_objective, koopman_targets, ntk_objective, pca_terms, quadratic_objective, FlowContext,
    PcaTerms,
};

//! The function space: unit-cube domain, quadrature, the real Fourier
//! reference basis, the index prior and the stratified estimator.

pub mod estimator;
pub mod fourier;
pub mod prior;
pub mod quadrature;

pub use estimator::{stratified_expectation, StratifiedDraw};
pub use fourier::{eval_fourier, eval_fourier_rows, gram_rows, inner_product, FourierIndex};
pub use prior::IndexPrior;
pub use quadrature::{Domain, QuadratureSet};

//! Desk-scale experiments: functional PCA on jump signals, a diagonalization
//! oracle, Taylor-Green Koopman rollouts, two-moons NTK eigenfunctions and
//! the integrator ablation.

pub mod ablation;
pub mod baselines;
pub mod common;
pub mod diag;
pub mod koopman;
pub mod ntk;
pub mod pca;
pub mod synthetic;

pub use ablation::{ablate, euler_factors, AblationConfig, AblationReport, MethodTrace};
pub use baselines::{FinitePca, ReconstructionCurve};
pub use common::{FlowConfig, PriorConfig};
pub use diag::{DiagConfig, DiagReport, DiagTask, OrthonormalBumps};
pub use koopman::{relative_drift, KoopmanConfig, KoopmanSettings, KoopmanTask, RolloutReport};
pub use ntk::{Classifier, GridEigen, NtkConfig, NtkSettings, NtkTask, TwoMoons};
pub use pca::{PcaConfig, PcaReport, PcaSettings, PcaTask};
pub use synthetic::Synthetic1D;

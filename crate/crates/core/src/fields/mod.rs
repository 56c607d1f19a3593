//! Trainable neural fields: the time embedding, random Fourier spatial
//! features, the projection field `U_θ`, the mixing network `M_θ` and the
//! mean field `ν_ψ`.

pub mod embed;
pub mod generator;
pub mod mean;
pub mod mlp;

pub use embed::{SpatialFeatures, TimeEmbedding};
pub use generator::{GeneratorModel, ModelConfig, PointCache, SpatialInputs};
pub use mean::{MeanField, MeanFieldConfig};

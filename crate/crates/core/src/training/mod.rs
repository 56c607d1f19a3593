//! Optimization: Adam with global-norm clipping, the seeded training loop,
//! checkpoints and metric logs.

pub mod adam;
pub mod checkpoint;
pub mod metrics;
pub mod trainer;

pub use adam::{clip_global_norm, Adam, AdamConfig};
pub use checkpoint::{Checkpoint, Payload, Record, CHECKPOINT_VERSION};
pub use metrics::{format_value, MetricsLog};
pub use trainer::{Schedule, StepOutcome, Task, TrainConfig, Trainer};

//! Conditional flow API: forward and reverse maps, exact log-likelihood,
//! maximum-likelihood training, conditional sampling and a planar-flow
//! baseline.

mod flow;
mod planar;
mod scaler;
mod train;

pub use flow::{conditional_sample, std_normal_log_density, ConditionalFlow, TrainingTriple};
pub use planar::{planar_forward, PlanarFlow, PlanarLayer};
pub use scaler::AttributeScaler;
pub use train::{loss_and_gradient, refresh_norm_stats, train, train_with, TrainConfig, TrainReport};

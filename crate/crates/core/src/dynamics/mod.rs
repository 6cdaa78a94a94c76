//! The conditional vector field: stacked gate-bias blocks fed with
//! `[t, attributes]`, plus the moving normalization layers that bracket the
//! continuous flow.

mod concat_squash;
mod model;
mod norm;

pub use concat_squash::{concat_squash_forward, ConcatSquash};
pub use model::{param_count, ConditionedField, FinalActivation, FlowModel, MIN_END_TIME};
pub use norm::{moving_norm_forward, moving_norm_inverse, MovingNorm};

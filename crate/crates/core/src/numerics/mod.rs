//! Dense linear algebra, seeded random streams and the Adam optimizer.

mod adam;
mod matrix;
mod rng;

pub use adam::{adam_step, AdamState};
pub use matrix::{
    axpy, dot, norm2, norm_inf, outer_acc, sigmoid, softplus, softplus_inv, sub, DenseMatrix,
};
pub use rng::{sample_gaussian, sample_rademacher, RngStream};

//! Deterministic stand-in for a generator and its attribute classifiers.

mod dataset;
mod world;

pub use dataset::{gen_dataset, SyntheticDataset, DEFAULT_DATASET_SIZE};
pub use world::{
    default_channels, make_world, make_world_with_channels, Link, WorldSpec, REFERENCE_TRUNCATION, SEMANTIC_CHANNELS,
};

//! Attribute-conditioned continuous normalizing flows.

pub mod cflow;
pub mod cli;
pub mod dynamics;
pub mod editpipe;
pub mod error;
pub mod evalkit;
pub mod numerics;
pub mod odeint;
pub mod synthworld;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/synthetic-world.md")]
    mod synthetic_world {}
    #[doc = include_str!("../../../book/src/conditional-flow.md")]
    mod conditional_flow {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/editing.md")]
    mod editing {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/file-formats.md")]
    mod file_formats {}
}

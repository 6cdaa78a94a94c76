//! Adaptive ODE integration of the density-augmented state, trace
//! estimation, and the continuous adjoint.

mod adjoint;
mod dopri5;
mod field;
mod logdet;
mod probes;

pub use adjoint::{adjoint_backward, AdjointGradients};
pub use dopri5::dopri5_integrate;
pub use field::{hutchinson_trace, Dynamics, LinearDynamics};
pub use logdet::{integrate_with_logdet, LogdetSolve};
pub use probes::TraceProbes;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the Jacobian trace inside the log-density ODE is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceMode {
    /// Rademacher probes, `probe_count` per solve.
    Hutchinson,
    /// One unit-vector probe per coordinate; exact but `d` times the work.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// `None` picks the first step automatically.
    pub initial_step: Option<f64>,
    pub probe_count: usize,
    pub trace_mode: TraceMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rtol: 1e-5,
            atol: 1e-5,
            max_steps: 10_000,
            initial_step: None,
            probe_count: 10,
            trace_mode: TraceMode::Hutchinson,
        }
    }
}

impl SolverConfig {
    pub fn with_tolerance(tol: f64) -> Self {
        SolverConfig { rtol: tol, atol: tol, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) || !self.rtol.is_finite() || !self.atol.is_finite() {
            return Err(Error::config("solver tolerances must be positive"));
        }
        if self.probe_count == 0 {
            return Err(Error::config("probe_count must be at least 1"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps must be at least 1"));
        }
        if let Some(h) = self.initial_step {
            if !(h.is_finite() && h != 0.0) {
                return Err(Error::config("initial_step must be finite and non-zero"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    pub last_step: f64,
}

impl SolveStats {
    pub fn merge(&mut self, other: &SolveStats) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.evaluations += other.evaluations;
        self.last_step = other.last_step;
    }
}

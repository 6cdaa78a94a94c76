use super::{SolverConfig, TraceMode};
use crate::error::Result;
use crate::numerics::{dot, RngStream};

/// Probe vectors for the trace term and the weight applied to their sum:
/// `Tr(J) ≈ scale · Σ_p ε_pᵀ J ε_p`.
///
/// A single set is drawn per solve and reused by the matching adjoint pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceProbes {
    pub vectors: Vec<Vec<f64>>,
    pub scale: f64,
}

impl TraceProbes {
    /// No trace term at all; the log-density channel stays at zero.
    pub fn none() -> Self {
        TraceProbes { vectors: Vec::new(), scale: 0.0 }
    }

    /// Unit vectors `e_1 … e_d`, which make the estimate exact.
    pub fn exact(dim: usize) -> Self {
        let vectors = (0..dim)
            .map(|i| {
                let mut e = vec![0.0; dim];
                e[i] = 1.0;
                e
            })
            .collect();
        TraceProbes { vectors, scale: 1.0 }
    }

    pub fn hutchinson(dim: usize, count: usize, stream: &mut RngStream) -> Result<Self> {
        let vectors = (0..count).map(|_| stream.rademacher(dim)).collect::<Result<Vec<_>>>()?;
        Ok(TraceProbes { vectors, scale: 1.0 / count as f64 })
    }

    pub fn from_config(cfg: &SolverConfig, dim: usize, stream: &mut RngStream) -> Result<Self> {
        match cfg.trace_mode {
            TraceMode::Exact => Ok(Self::exact(dim)),
            TraceMode::Hutchinson => Self::hutchinson(dim, cfg.probe_count, stream),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    /// Trace estimate from the products `J ε_p`.
    pub fn estimate(&self, jvps: &[Vec<f64>]) -> f64 {
        self.scale * self.vectors.iter().zip(jvps).map(|(e, j)| dot(e, j)).sum::<f64>()
    }
}

use std::f64::consts::PI;

use super::AttributeScaler;
use crate::dynamics::FlowModel;
use crate::error::{check_finite, Error, Result};
use crate::numerics::RngStream;
use crate::odeint::{integrate_with_logdet, SolveStats, SolverConfig, TraceProbes};

/// A matched latent code and its attribute vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTriple {
    pub w: Vec<f64>,
    pub a: Vec<f64>,
}

/// A trained (or initialized) conditional flow together with the attribute
/// scaler it was trained with and the solver settings used for inference.
///
/// The prior lives at `t = 0`, the data at `t = T`. Going from data to prior:
///
/// ```text
/// w --post norm--> u --ODE T→0--> v --pre norm--> z
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalFlow {
    pub model: FlowModel,
    pub scaler: AttributeScaler,
    pub solver: SolverConfig,
    /// Seed of the fixed probe set used by inference-time log-densities, so
    /// that forward and reverse maps see the same trace estimator.
    pub probe_seed: u64,
}

impl ConditionalFlow {
    pub fn new(model: FlowModel, scaler: AttributeScaler) -> Result<Self> {
        if scaler.dim() != model.attr_dim() {
            return Err(Error::shape("scaler width differs from model attribute width"));
        }
        Ok(ConditionalFlow { model, scaler, solver: SolverConfig::default(), probe_seed: 0 })
    }

    /// Fresh model with an identity scaler.
    pub fn init(latent_dim: usize, attr_dim: usize, n_blocks: usize, seed: u64) -> Result<Self> {
        let mut rng = RngStream::new(seed);
        Self::new(FlowModel::new(latent_dim, attr_dim, n_blocks, &mut rng)?, AttributeScaler::identity(attr_dim))
    }

    /// The exact identity map: zero blocks, identity norms.
    pub fn identity(latent_dim: usize, attr_dim: usize) -> Result<Self> {
        Self::new(FlowModel::identity(latent_dim, attr_dim, FlowModel::DEFAULT_BLOCKS)?, AttributeScaler::identity(attr_dim))
    }

    pub fn latent_dim(&self) -> usize {
        self.model.latent_dim()
    }

    pub fn attr_dim(&self) -> usize {
        self.model.attr_dim()
    }

    pub fn inference_probes(&self) -> Result<TraceProbes> {
        TraceProbes::from_config(&self.solver, self.latent_dim(), &mut RngStream::new(self.probe_seed))
    }

    fn check_latent(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.latent_dim() {
            return Err(Error::shape(format!("latent of length {} for a {}-dimensional flow", x.len(), self.latent_dim())));
        }
        check_finite("latent", x)
    }

    /// `w = Φ(z, a)` and the log-density change `log p(w) − log N(z)`.
    pub fn forward_map(&self, z: &[f64], a: &[f64]) -> Result<(Vec<f64>, f64)> {
        let probes = self.inference_probes()?;
        self.forward_map_with(z, a, &probes).map(|(w, dl, _)| (w, dl))
    }

    /// `z = Ψ(w, a)` and `Δlogp`, so that `log p(w | a) = log N(z) − Δlogp`.
    pub fn reverse_map(&self, w: &[f64], a: &[f64]) -> Result<(Vec<f64>, f64)> {
        let probes = self.inference_probes()?;
        self.reverse_map_with(w, a, &probes).map(|(z, dl, _)| (z, dl))
    }

    pub fn forward_map_with(&self, z: &[f64], a: &[f64], probes: &TraceProbes) -> Result<(Vec<f64>, f64, SolveStats)> {
        self.check_latent(z)?;
        let scaled = self.scaler.apply(a)?;
        let field = self.model.field(&scaled)?;
        let (v, ld_pre) = self.model.pre_norm.inverse(z)?;
        let out = integrate_with_logdet(&field, &v, 0.0, self.model.end_time(), &self.solver, probes)?;
        let (w, ld_post) = self.model.post_norm.inverse(&out.z_end)?;
        Ok((w, out.dlogp - ld_pre - ld_post, out.stats))
    }

    pub fn reverse_map_with(&self, w: &[f64], a: &[f64], probes: &TraceProbes) -> Result<(Vec<f64>, f64, SolveStats)> {
        self.check_latent(w)?;
        let scaled = self.scaler.apply(a)?;
        let field = self.model.field(&scaled)?;
        let (u, ld_post) = self.model.post_norm.forward(w)?;
        let out = integrate_with_logdet(&field, &u, self.model.end_time(), 0.0, &self.solver, probes)?;
        let (z, ld_pre) = self.model.pre_norm.forward(&out.z_end)?;
        Ok((z, out.dlogp - ld_pre - ld_post, out.stats))
    }

    /// `Φ(z, a)` without the log-density channel.
    pub fn forward_point(&self, z: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        self.forward_map_with(z, a, &TraceProbes::none()).map(|r| r.0)
    }

    /// `Ψ(w, a)` without the log-density channel.
    pub fn reverse_point(&self, w: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        self.reverse_map_with(w, a, &TraceProbes::none()).map(|r| r.0)
    }

    /// `log p(w | a) = log N(z; 0, I) − Δlogp`.
    pub fn log_likelihood(&self, w: &[f64], a: &[f64]) -> Result<f64> {
        let (z, dlogp) = self.reverse_map(w, a)?;
        Ok(std_normal_log_density(&z) - dlogp)
    }

    pub fn log_likelihood_with(&self, w: &[f64], a: &[f64], probes: &TraceProbes) -> Result<f64> {
        let (z, dlogp, _) = self.reverse_map_with(w, a, probes)?;
        Ok(std_normal_log_density(&z) - dlogp)
    }
}

pub fn std_normal_log_density(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|x| x * x).sum::<f64>() - 0.5 * z.len() as f64 * (2.0 * PI).ln()
}

/// Draws `n` prior samples, optionally shrinks them by `truncation`, and
/// maps each through `Φ(·, a)`.
pub fn conditional_sample(
    flow: &ConditionalFlow,
    a: &[f64],
    n: usize,
    stream: &mut RngStream,
    truncation: Option<f64>,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::EmptyRequest("zero samples requested"));
    }
    let scale = match truncation {
        None => 1.0,
        Some(t) if t > 0.0 && t <= 1.0 => t,
        Some(t) => return Err(Error::config(format!("truncation {t} outside (0, 1]"))),
    };
    (0..n)
        .map(|_| {
            let z: Vec<f64> = stream.gaussian(flow.latent_dim())?.into_iter().map(|x| scale * x).collect();
            flow.forward_point(&z, a)
        })
        .collect()
}

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::flow::{ConditionalFlow, TrainingTriple};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamState, RngStream};
use crate::odeint::{adjoint_backward, integrate_with_logdet, SolveStats, SolverConfig, TraceProbes};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub solver: SolverConfig,
    pub seed: u64,
    /// Stop after this many optimizer steps in total.
    pub max_batches: Option<usize>,
    /// Cosine-anneal the learning rate from `lr` to this value over the run.
    pub final_lr: Option<f64>,
    /// Replace the running normalization statistics with exact full-data
    /// statistics after the last step.
    pub refresh_stats: bool,
    /// Standard deviation of Gaussian jitter added to every training latent.
    pub latent_noise: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 10, batch_size: 5, lr: 1e-3, solver: SolverConfig::default(), seed: 0, max_batches: None, final_lr: None, refresh_stats: false, latent_noise: 0.0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.final_lr.is_some_and(|f| !(f >= 0.0 && f <= self.lr)) {
            return Err(Error::config("final_lr must lie in [0, lr]"));
        }
        if !(self.latent_noise >= 0.0 && self.latent_noise.is_finite()) {
            return Err(Error::config("latent_noise must be a non-negative number"));
        }
        if self.max_batches == Some(0) {
            return Err(Error::config("max_batches must be positive"));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean NLL (nats per sample) of each completed or partial epoch.
    pub epoch_nll: Vec<f64>,
    pub batches: usize,
    pub stats: SolveStats,
}

/// Data-to-prior solve for one sample, kept for the gradient pass.
struct SamplePass {
    u: Vec<f64>,
    v: Vec<f64>,
    dl_cnf: f64,
}

/// Mean negative log-likelihood of `batch` and its gradient with respect
/// to [`FlowModel::params`](crate::dynamics::FlowModel::params), using the
/// given probes. Running statistics are left untouched.
pub fn loss_and_gradient(
    flow: &ConditionalFlow,
    batch: &[TrainingTriple],
    solver: &SolverConfig,
    probes: &TraceProbes,
) -> Result<(f64, Vec<f64>)> {
    let scaled = scale_batch(flow, batch)?;
    let passes = reverse_passes(flow, batch, &scaled, solver, probes, &mut SolveStats::default())?;
    batch_gradient(flow, &scaled, &passes, solver, probes, &mut SolveStats::default())
}

fn scale_batch(flow: &ConditionalFlow, batch: &[TrainingTriple]) -> Result<Vec<Vec<f64>>> {
    if batch.is_empty() {
        return Err(Error::EmptyRequest("empty training batch"));
    }
    batch.iter().map(|t| flow.scaler.apply(&t.a)).collect()
}

fn reverse_passes(
    flow: &ConditionalFlow,
    batch: &[TrainingTriple],
    scaled: &[Vec<f64>],
    solver: &SolverConfig,
    probes: &TraceProbes,
    stats: &mut SolveStats,
) -> Result<Vec<SamplePass>> {
    let model = &flow.model;
    let t_end = model.end_time();
    batch
        .iter()
        .zip(scaled)
        .map(|(t, a)| {
            let (u, _) = model.post_norm.forward(&t.w)?;
            let field = model.field(a)?;
            let out = integrate_with_logdet(&field, &u, t_end, 0.0, solver, probes)?;
            stats.merge(&out.stats);
            Ok(SamplePass { u, v: out.z_end, dl_cnf: out.dlogp })
        })
        .collect()
}

fn batch_gradient(
    flow: &ConditionalFlow,
    scaled: &[Vec<f64>],
    passes: &[SamplePass],
    solver: &SolverConfig,
    probes: &TraceProbes,
    stats: &mut SolveStats,
) -> Result<(f64, Vec<f64>)> {
    let model = &flow.model;
    let d = model.latent_dim();
    let b = passes.len() as f64;
    let offs = model.tail_offsets();
    let pre = &model.pre_norm;
    let post = &model.post_norm;
    let s_pre = pre.scales();
    let ld_pre = pre.log_det();
    let ld_post = post.log_det();
    let t_end = model.end_time();
    let mut grad = vec![0.0; model.param_count()];
    let mut loss = 0.0;
    for (pass, a) in passes.iter().zip(scaled) {
        let (z, _) = pre.forward(&pass.v)?;
        let sq: f64 = z.iter().map(|x| x * x).sum();
        loss += 0.5 * sq + 0.5 * d as f64 * (2.0 * PI).ln() + pass.dl_cnf - ld_pre - ld_post;

        // Prior-side norm: z = s (v − m) + β, with −log det contributing −Σγ.
        for j in 0..d {
            grad[offs.pre + j] += (z[j] * (z[j] - pre.shift[j]) - 1.0) / b;
            grad[offs.pre + d + j] += z[j] / b;
        }
        let gv: Vec<f64> = z.iter().zip(&s_pre).map(|(z, s)| z * s / b).collect();
        let field = model.field(a)?;
        let adj = adjoint_backward(&field, t_end, 0.0, &pass.v, &gv, 1.0 / b, solver, probes)?;
        stats.merge(&adj.stats);
        for (g, x) in grad.iter_mut().zip(&adj.grad_theta) {
            *g += x;
        }
        grad[offs.end_time] += adj.grad_t_start * model.end_time_slope();
        for j in 0..d {
            let ubar = adj.grad_z_start[j];
            grad[offs.post + j] += ubar * (pass.u[j] - post.shift[j]) - 1.0 / b;
            grad[offs.post + d + j] += ubar;
        }
    }
    Ok((loss / b, grad))
}

/// Minibatch Adam on the mean negative log-likelihood.
///
/// Each optimizer step draws one probe set that is shared by every sample's
/// forward and adjoint solves. Running normalization statistics move toward
/// the batch before each step. On a non-finite loss or a failed solve the
/// model is restored to its state before the offending step.
pub fn train(flow: &mut ConditionalFlow, data: &[TrainingTriple], cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(flow, data, cfg, &mut |_, _| {})
}

/// [`train`] calling `on_epoch(epoch, mean_nll)` after every epoch.
pub fn train_with(
    flow: &mut ConditionalFlow,
    data: &[TrainingTriple],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyRequest("no training data"));
    }
    let (d, l) = (flow.latent_dim(), flow.attr_dim());
    if data.iter().any(|t| t.w.len() != d || t.a.len() != l) {
        return Err(Error::shape(format!("training data must be {d}-dimensional with {l} attributes")));
    }
    let root = RngStream::new(cfg.seed);
    let mut probe_stream = root.derive(1);
    let mut noise_stream = root.derive(2);
    let mut adam = AdamState::new(flow.model.param_count(), cfg.lr);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..data.len()).collect();

    let per_epoch = data.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.max_batches.map_or(per_epoch * cfg.epochs, |m| m.min(per_epoch * cfg.epochs));

    'epochs: for epoch in 0..cfg.epochs {
        root.derive(1000 + epoch as u64).shuffle(&mut order);
        let mut sum = 0.0;
        let mut count = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_batches.is_some_and(|m| report.batches >= m) {
                if count > 0 {
                    report.epoch_nll.push(sum / count as f64);
                    on_epoch(epoch, sum / count as f64);
                }
                break 'epochs;
            }
            let mut batch: Vec<TrainingTriple> = chunk.iter().map(|&i| data[i].clone()).collect();
            jitter(&mut batch, cfg.latent_noise, &mut noise_stream)?;
            if let Some(f) = cfg.final_lr {
                let progress = report.batches as f64 / total_steps as f64;
                adam.lr = f + 0.5 * (cfg.lr - f) * (1.0 + (PI * progress).cos());
            }
            let snapshot = flow.model.clone();
            let step = train_step(flow, &batch, cfg, &mut adam, &mut probe_stream, &mut report.stats);
            match step {
                Ok(loss) if loss.is_finite() => {
                    sum += loss * batch.len() as f64;
                    count += batch.len();
                    report.batches += 1;
                }
                Ok(_) => {
                    flow.model = snapshot;
                    return Err(Error::NonFiniteLoss { epoch, batch: bi });
                }
                Err(e) => {
                    flow.model = snapshot;
                    return Err(match e {
                        Error::NonFinite { .. } | Error::Numeric(_) => Error::NonFiniteLoss { epoch, batch: bi },
                        other => other,
                    });
                }
            }
        }
        report.epoch_nll.push(sum / count as f64);
        on_epoch(epoch, sum / count as f64);
    }
    if cfg.refresh_stats {
        let mut data = data.to_vec();
        jitter(&mut data, cfg.latent_noise, &mut root.derive(3))?;
        refresh_norm_stats(flow, &data, &cfg.solver)?;
    }
    Ok(report)
}

fn jitter(batch: &mut [TrainingTriple], sd: f64, stream: &mut RngStream) -> Result<()> {
    if sd > 0.0 {
        for t in batch {
            let noise = stream.gaussian(t.w.len())?;
            for (x, e) in t.w.iter_mut().zip(noise) {
                *x += sd * e;
            }
        }
    }
    Ok(())
}

/// Sets both running normalizations to the exact statistics of `data`:
/// the post-norm from the latents, then the pre-norm from their reverse
/// flow outputs.
pub fn refresh_norm_stats(flow: &mut ConditionalFlow, data: &[TrainingTriple], solver: &SolverConfig) -> Result<()> {
    let ws: Vec<&[f64]> = data.iter().map(|t| t.w.as_slice()).collect();
    flow.model.post_norm.fit_stats(&ws)?;
    let scaled = scale_batch(flow, data)?;
    let passes = reverse_passes(flow, data, &scaled, solver, &TraceProbes::none(), &mut SolveStats::default())?;
    let vs: Vec<&[f64]> = passes.iter().map(|p| p.v.as_slice()).collect();
    flow.model.pre_norm.fit_stats(&vs)
}

fn train_step(
    flow: &mut ConditionalFlow,
    batch: &[TrainingTriple],
    cfg: &TrainConfig,
    adam: &mut AdamState,
    probe_stream: &mut RngStream,
    stats: &mut SolveStats,
) -> Result<f64> {
    let probes = TraceProbes::from_config(&cfg.solver, flow.latent_dim(), probe_stream)?;
    let ws: Vec<&[f64]> = batch.iter().map(|t| t.w.as_slice()).collect();
    flow.model.post_norm.update_stats(&ws)?;
    let scaled = scale_batch(flow, batch)?;
    let passes = reverse_passes(flow, batch, &scaled, &cfg.solver, &probes, stats)?;
    let vs: Vec<&[f64]> = passes.iter().map(|p| p.v.as_slice()).collect();
    flow.model.pre_norm.update_stats(&vs)?;
    let (loss, grad) = batch_gradient(flow, &scaled, &passes, &cfg.solver, &probes, stats)?;
    if !loss.is_finite() {
        return Ok(loss);
    }
    let mut params = flow.model.params();
    adam_step(&mut params, &grad, adam)?;
    flow.model.set_params(&params)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_batch(n: usize, seed: u64) -> Vec<TrainingTriple> {
        let mut s = RngStream::new(seed);
        (0..n)
            .map(|_| {
                let a = s.gaussian(1).unwrap();
                let e = s.gaussian(2).unwrap();
                TrainingTriple { w: vec![0.5 * a[0] + 0.5 * e[0], 0.25 * (a[0] * a[0] - 1.0) + 0.5 * e[1]], a }
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut flow = ConditionalFlow::init(2, 1, 2, 3).unwrap();
        let mut p = flow.model.params();
        let mut s = RngStream::new(4);
        let noise = s.gaussian(p.len()).unwrap();
        for (x, n) in p.iter_mut().zip(noise) {
            *x += 0.2 * n;
        }
        flow.model.set_params(&p).unwrap();
        flow.model.post_norm.running_mean = vec![0.1, -0.2];
        flow.model.pre_norm.running_var = vec![1.3, 0.8];
        let batch = toy_batch(3, 9);
        let solver = SolverConfig::with_tolerance(1e-11);
        let probes = TraceProbes::hutchinson(2, 2, &mut s).unwrap();
        let (_, grad) = loss_and_gradient(&flow, &batch, &solver, &probes).unwrap();
        let h = 1e-5;
        for k in 0..p.len() {
            let mut q = p.clone();
            q[k] += h;
            flow.model.set_params(&q).unwrap();
            let up = loss_and_gradient(&flow, &batch, &solver, &probes).unwrap().0;
            q[k] -= 2.0 * h;
            flow.model.set_params(&q).unwrap();
            let down = loss_and_gradient(&flow, &batch, &solver, &probes).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grad[k]).abs() <= 1e-5 * fd.abs().max(1e-2), "param {k}: fd {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let data = toy_batch(200, 1);
        let cfg = TrainConfig { epochs: 3, batch_size: 10, lr: 1e-2, seed: 7, ..TrainConfig::default() };
        let mut a = ConditionalFlow::init(2, 1, 2, 1).unwrap();
        let mut b = a.clone();
        let ra = train(&mut a, &data, &cfg).unwrap();
        let rb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(ra.epoch_nll[2] < ra.epoch_nll[0], "{:?}", ra.epoch_nll);
    }

    #[test]
    fn max_batches_stops_early() {
        let data = toy_batch(50, 2);
        let cfg = TrainConfig { max_batches: Some(3), ..TrainConfig::default() };
        let mut f = ConditionalFlow::init(2, 1, 2, 1).unwrap();
        let r = train(&mut f, &data, &cfg).unwrap();
        assert_eq!(r.batches, 3);
        assert_eq!(r.epoch_nll.len(), 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut f = ConditionalFlow::init(2, 1, 2, 1).unwrap();
        assert!(matches!(train(&mut f, &[], &TrainConfig::default()), Err(Error::EmptyRequest(_))));
        let bad = vec![TrainingTriple { w: vec![0.0; 3], a: vec![0.0] }];
        assert!(matches!(train(&mut f, &bad, &TrainConfig::default()), Err(Error::Shape(_))));
    }
}

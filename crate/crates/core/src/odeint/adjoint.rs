use super::dopri5::integrate_controlled;
use super::{Dynamics, SolveStats, SolverConfig, TraceProbes};
use crate::error::{check_finite, Error, Result};
use crate::numerics::dot;

/// Gradients of a scalar loss `L(z(t1), Δ(t1))` produced by [`adjoint_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointGradients {
    pub grad_z_start: Vec<f64>,
    pub grad_theta: Vec<f64>,
    /// `∂L/∂t0`.
    pub grad_t_start: f64,
    /// `∂L/∂t1`.
    pub grad_t_end: f64,
    /// `z(t0)` recovered by the backward solve.
    pub z_start: Vec<f64>,
    pub stats: SolveStats,
}

/// Continuous adjoint of [`integrate_with_logdet`](super::integrate_with_logdet).
///
/// The backward state `[z, a_z, g_θ]` is integrated from `t1` to `t0`:
///
/// ```text
/// dz/dt   =  f(z, t)
/// da_z/dt = −∂S/∂z
/// dg_θ/dt = −∂S/∂θ
/// S = a_zᵀ f − a_Δ · Tr(∂f/∂z)
/// ```
///
/// `a_Δ = ∂L/∂Δ` is constant because nothing depends on `Δ`. The same probes
/// as the forward solve must be supplied.
#[allow(clippy::too_many_arguments)]
pub fn adjoint_backward<D: Dynamics + ?Sized>(
    field: &D,
    t0: f64,
    t1: f64,
    z_end: &[f64],
    grad_z_end: &[f64],
    grad_dlogp: f64,
    cfg: &SolverConfig,
    probes: &TraceProbes,
) -> Result<AdjointGradients> {
    let d = field.dim();
    let np = field.param_len();
    if z_end.len() != d || grad_z_end.len() != d {
        return Err(Error::shape(format!("adjoint of a {d}-dimensional field given state {} and gradient {}", z_end.len(), grad_z_end.len())));
    }
    check_finite("loss gradient", grad_z_end)?;
    if !grad_dlogp.is_finite() {
        return Err(Error::NonFinite { what: "log-density gradient", index: 0 });
    }
    let trace_weight = if probes.is_empty() { 0.0 } else { -grad_dlogp * probes.scale };

    let mut y0 = Vec::with_capacity(2 * d + np);
    y0.extend_from_slice(z_end);
    y0.extend_from_slice(grad_z_end);
    y0.resize(2 * d + np, 0.0);

    let mut gz = vec![0.0; d];
    let mut gt = vec![0.0; np];
    let rhs = |t: f64, y: &[f64], out: &mut [f64]| -> Result<()> {
        let (z, rest) = y.split_at(d);
        let a = &rest[..d];
        let (dz, rest_out) = out.split_at_mut(d);
        let (da, dg) = rest_out.split_at_mut(d);
        gz.fill(0.0);
        gt.fill(0.0);
        field.backprop(t, z, &probes.vectors, a, trace_weight, dz, &mut gz, &mut gt)?;
        for (o, g) in da.iter_mut().zip(&gz) {
            *o = -g;
        }
        for (o, g) in dg.iter_mut().zip(&gt) {
            *o = -g;
        }
        Ok(())
    };
    let n = y0.len();
    let (y, stats) = integrate_controlled(rhs, &y0, t1, t0, cfg, n)?;

    let z_start = y[..d].to_vec();
    let grad_z_start = y[d..2 * d].to_vec();
    let grad_theta = y[2 * d..].to_vec();

    let grad_t_end = time_sensitivity(field, t1, z_end, grad_z_end, grad_dlogp, probes)?;
    let grad_t_start = -time_sensitivity(field, t0, &z_start, &grad_z_start, grad_dlogp, probes)?;
    Ok(AdjointGradients { grad_z_start, grad_theta, grad_t_start, grad_t_end, z_start, stats })
}

/// `aᵀ f_aug(t)`, the rate at which the loss changes when the endpoint moves.
fn time_sensitivity<D: Dynamics + ?Sized>(
    field: &D,
    t: f64,
    z: &[f64],
    a: &[f64],
    grad_dlogp: f64,
    probes: &TraceProbes,
) -> Result<f64> {
    let d = field.dim();
    let mut dz = vec![0.0; d];
    let mut jvps = vec![vec![0.0; d]; probes.len()];
    field.eval(t, z, &probes.vectors, &mut dz, &mut jvps)?;
    let trace = if probes.is_empty() { 0.0 } else { probes.estimate(&jvps) };
    Ok(dot(a, &dz) - grad_dlogp * trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DenseMatrix;
    use crate::odeint::{integrate_with_logdet, LinearDynamics};

    fn tight() -> SolverConfig {
        SolverConfig::with_tolerance(1e-11)
    }

    #[test]
    fn zero_loss_gradient_gives_zero_gradients() {
        let a = DenseMatrix::from_rows(&[vec![0.2, -0.4], vec![0.5, 0.1]]).unwrap();
        let f = LinearDynamics::new(a).unwrap();
        let g = adjoint_backward(&f, 0.0, 1.0, &[1.0, 2.0], &[0.0, 0.0], 0.0, &tight(), &TraceProbes::exact(2)).unwrap();
        assert!(g.grad_z_start.iter().chain(&g.grad_theta).all(|x| *x == 0.0));
        assert_eq!(g.grad_t_start, 0.0);
        assert_eq!(g.grad_t_end, 0.0);
    }

    #[test]
    fn linear_parameter_gradient_matches_finite_differences() {
        let base = vec![0.2, -0.4, 0.5, 0.1];
        let loss = |theta: &[f64]| -> f64 {
            let f = LinearDynamics::new(DenseMatrix::from_row_major(2, 2, theta.to_vec()).unwrap()).unwrap();
            let out = integrate_with_logdet(&f, &[1.0, -0.5], 0.0, 1.3, &tight(), &TraceProbes::exact(2)).unwrap();
            0.7 * out.z_end[0] - 0.2 * out.z_end[1] + 0.3 * out.dlogp
        };
        let f = LinearDynamics::new(DenseMatrix::from_row_major(2, 2, base.clone()).unwrap()).unwrap();
        let fwd = integrate_with_logdet(&f, &[1.0, -0.5], 0.0, 1.3, &tight(), &TraceProbes::exact(2)).unwrap();
        let g = adjoint_backward(&f, 0.0, 1.3, &fwd.z_end, &[0.7, -0.2], 0.3, &tight(), &TraceProbes::exact(2)).unwrap();
        for i in 0..4 {
            let h = 1e-5;
            let mut p = base.clone();
            p[i] += h;
            let up = loss(&p);
            p[i] -= 2.0 * h;
            let down = loss(&p);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g.grad_theta[i]).abs() < 1e-6, "coord {i}: {fd} vs {}", g.grad_theta[i]);
        }
    }

    #[test]
    fn time_gradients_match_finite_differences() {
        let a = DenseMatrix::from_rows(&[vec![0.3, -1.0], vec![0.8, -0.2]]).unwrap();
        let f = LinearDynamics::new(a).unwrap();
        let z0 = [0.6, 0.4];
        let loss = |t0: f64, t1: f64| {
            let out = integrate_with_logdet(&f, &z0, t0, t1, &tight(), &TraceProbes::exact(2)).unwrap();
            out.z_end[0] + 2.0 * out.z_end[1] + 0.5 * out.dlogp
        };
        let fwd = integrate_with_logdet(&f, &z0, 0.2, 1.1, &tight(), &TraceProbes::exact(2)).unwrap();
        let g = adjoint_backward(&f, 0.2, 1.1, &fwd.z_end, &[1.0, 2.0], 0.5, &tight(), &TraceProbes::exact(2)).unwrap();
        let h = 1e-5;
        let d_start = (loss(0.2 + h, 1.1) - loss(0.2 - h, 1.1)) / (2.0 * h);
        let d_end = (loss(0.2, 1.1 + h) - loss(0.2, 1.1 - h)) / (2.0 * h);
        assert!((d_start - g.grad_t_start).abs() < 1e-6);
        assert!((d_end - g.grad_t_end).abs() < 1e-6);
    }
}

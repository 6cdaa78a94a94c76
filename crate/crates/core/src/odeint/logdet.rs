use super::dopri5::dopri5_integrate;
use super::{Dynamics, SolveStats, SolverConfig, TraceProbes};
use crate::error::{check_finite, Error, Result};

/// Result of integrating the augmented state `(z, Δlogp)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogdetSolve {
    pub z_end: Vec<f64>,
    /// Accumulated `−∫ Tr(∂f/∂z) dt` from `t0` to `t1`.
    pub dlogp: f64,
    pub stats: SolveStats,
}

/// Integrates `d/dt [z, Δ] = [f(z, t), −Tr(∂f/∂z)]` from `t0` to `t1`
/// starting at `[z_start, 0]`.
///
/// The trace is `probes.estimate(J ε_p)`; with [`TraceProbes::none`] the
/// log-density channel is not integrated and `dlogp` is 0.
pub fn integrate_with_logdet<D: Dynamics + ?Sized>(
    field: &D,
    z_start: &[f64],
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
    probes: &TraceProbes,
) -> Result<LogdetSolve> {
    let d = field.dim();
    if z_start.len() != d {
        return Err(Error::shape(format!("state of length {} for a {d}-dimensional field", z_start.len())));
    }
    if probes.vectors.iter().any(|p| p.len() != d) {
        return Err(Error::shape("probe length differs from state dimension"));
    }
    check_finite("initial state", z_start)?;
    let mut jvps = vec![vec![0.0; d]; probes.len()];
    let mut y0 = z_start.to_vec();
    y0.push(0.0);
    let rhs = |t: f64, y: &[f64], out: &mut [f64]| -> Result<()> {
        let (dz, dl) = out.split_at_mut(d);
        field.eval(t, &y[..d], &probes.vectors, dz, &mut jvps)?;
        dl[0] = if probes.is_empty() { 0.0 } else { -probes.estimate(&jvps) };
        Ok(())
    };
    let (mut y, stats) = dopri5_integrate(rhs, &y0, t0, t1, cfg)?;
    let dlogp = y.pop().unwrap_or(0.0);
    Ok(LogdetSolve { z_end: y, dlogp, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{DenseMatrix, RngStream};
    use crate::odeint::LinearDynamics;

    fn minus_identity(d: usize) -> LinearDynamics {
        let mut a = DenseMatrix::identity(d);
        a.as_mut_slice().iter_mut().for_each(|x| *x = -*x);
        LinearDynamics::new(a).unwrap()
    }

    #[test]
    fn decay_field_has_closed_form_logdet() {
        let f = minus_identity(3);
        let z = [1.0, -2.0, 0.5];
        let out = integrate_with_logdet(&f, &z, 0.0, 1.0, &SolverConfig::default(), &TraceProbes::exact(3)).unwrap();
        for (a, b) in out.z_end.iter().zip(&z) {
            assert!((a - b * (-1f64).exp()).abs() < 1e-5);
        }
        assert!((out.dlogp - 3.0).abs() < 1e-9);
    }

    #[test]
    fn rademacher_probes_are_exact_on_diagonal_fields() {
        let f = minus_identity(4);
        let mut s = RngStream::new(1);
        let probes = TraceProbes::hutchinson(4, 1, &mut s).unwrap();
        let out = integrate_with_logdet(&f, &[0.1; 4], 0.0, 1.0, &SolverConfig::default(), &probes).unwrap();
        assert!((out.dlogp - 4.0).abs() < 1e-9);
    }

    #[test]
    fn reversal_restores_state_and_negates_logdet() {
        let a = DenseMatrix::from_rows(&[vec![0.1, -0.7], vec![0.9, -0.3]]).unwrap();
        let f = LinearDynamics::new(a).unwrap();
        let cfg = SolverConfig::default();
        let p = TraceProbes::exact(2);
        let fwd = integrate_with_logdet(&f, &[0.4, -1.2], 0.0, 1.5, &cfg, &p).unwrap();
        let back = integrate_with_logdet(&f, &fwd.z_end, 1.5, 0.0, &cfg, &p).unwrap();
        assert!((back.z_end[0] - 0.4).abs() < 1e-4);
        assert!((back.z_end[1] + 1.2).abs() < 1e-4);
        assert!((fwd.dlogp + back.dlogp).abs() < 1e-4);
    }

    #[test]
    fn without_probes_logdet_is_zero() {
        let f = minus_identity(2);
        let out = integrate_with_logdet(&f, &[1.0, 1.0], 0.0, 1.0, &SolverConfig::default(), &TraceProbes::none()).unwrap();
        assert_eq!(out.dlogp, 0.0);
    }
}

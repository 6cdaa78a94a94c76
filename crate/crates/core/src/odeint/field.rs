use crate::error::{Error, Result};
use crate::numerics::{dot, outer_acc, DenseMatrix};

/// A parameterized vector field `dz/dt = f(z, t; θ)` that can also
/// differentiate itself.
///
/// Trace probes `ε_p` appear in both methods. `eval` returns the
/// Jacobian-vector products `J ε_p` alongside `f`; `backprop` returns the
/// gradients with respect to `z` and `θ` of the scalar
///
/// ```text
/// S(z, θ) = cotangentᵀ f(z, t; θ) + trace_weight · Σ_p ε_pᵀ J(z, t; θ) ε_p
/// ```
///
/// which is exactly what the adjoint of the log-density augmented system needs.
pub trait Dynamics {
    fn dim(&self) -> usize;

    fn param_len(&self) -> usize;

    fn eval(&self, t: f64, z: &[f64], probes: &[Vec<f64>], dz: &mut [f64], jvps: &mut [Vec<f64>]) -> Result<()>;

    /// Writes `f(z, t)` into `dz` and accumulates `∂S/∂z`, `∂S/∂θ`.
    #[allow(clippy::too_many_arguments)]
    fn backprop(
        &self,
        t: f64,
        z: &[f64],
        probes: &[Vec<f64>],
        cotangent: &[f64],
        trace_weight: f64,
        dz: &mut [f64],
        grad_z: &mut [f64],
        grad_theta: &mut [f64],
    ) -> Result<()>;
}

/// Linear field `f(z) = A z` with `θ = vec(A)`.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    pub matrix: DenseMatrix,
}

impl LinearDynamics {
    pub fn new(matrix: DenseMatrix) -> Result<Self> {
        if matrix.rows() != matrix.cols() {
            return Err(Error::shape("linear dynamics need a square matrix"));
        }
        Ok(LinearDynamics { matrix })
    }
}

impl Dynamics for LinearDynamics {
    fn dim(&self) -> usize {
        self.matrix.rows()
    }

    fn param_len(&self) -> usize {
        self.matrix.as_slice().len()
    }

    fn eval(&self, _t: f64, z: &[f64], probes: &[Vec<f64>], dz: &mut [f64], jvps: &mut [Vec<f64>]) -> Result<()> {
        self.matrix.matvec_into(z, dz);
        for (eps, out) in probes.iter().zip(jvps.iter_mut()) {
            self.matrix.matvec_into(eps, out);
        }
        Ok(())
    }

    fn backprop(
        &self,
        _t: f64,
        z: &[f64],
        probes: &[Vec<f64>],
        cotangent: &[f64],
        trace_weight: f64,
        dz: &mut [f64],
        grad_z: &mut [f64],
        grad_theta: &mut [f64],
    ) -> Result<()> {
        self.matrix.matvec_into(z, dz);
        self.matrix.matvec_t_acc(cotangent, grad_z);
        outer_acc(cotangent, z, grad_theta);
        if trace_weight != 0.0 {
            // εᵀ A ε is linear in A with gradient ε εᵀ and independent of z.
            for eps in probes {
                let scaled: Vec<f64> = eps.iter().map(|e| trace_weight * e).collect();
                outer_acc(&scaled, eps, grad_theta);
            }
        }
        Ok(())
    }
}

/// Hutchinson estimate `mean_p ε_pᵀ (J ε_p)` given a Jacobian-product callback.
///
/// The callback may return either `J ε` or `Jᵀ ε`; both give the same quadratic form.
pub fn hutchinson_trace<F>(mut jac_product: F, probes: &[Vec<f64>]) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if probes.is_empty() {
        return Err(Error::EmptyRequest("hutchinson estimate without probes"));
    }
    let mut acc = 0.0;
    for eps in probes {
        let jp = jac_product(eps)?;
        if jp.len() != eps.len() {
            return Err(Error::shape("jacobian product length differs from probe length"));
        }
        acc += dot(eps, &jp);
    }
    Ok(acc / probes.len() as f64)
}

use std::cell::RefCell;

use super::concat_squash::ConcatSquash;
use super::norm::MovingNorm;
use crate::error::{check_finite, Error, Result};
use crate::numerics::{axpy, outer_acc, softplus, softplus_inv, RngStream};
use crate::odeint::Dynamics;

/// Lower bound on the integration horizon.
pub const MIN_END_TIME: f64 = 0.1;

/// Activation applied after the last block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinalActivation {
    Tanh,
    Identity,
}

/// All learnable state of one conditional flow: the block stack of the
/// vector field, the two normalization layers bracketing it and the raw
/// end-time parameter `τ` with `T = softplus(τ) + MIN_END_TIME`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub blocks: Vec<ConcatSquash>,
    /// Prior-side normalization.
    pub pre_norm: MovingNorm,
    /// Data-side normalization.
    pub post_norm: MovingNorm,
    pub end_time_raw: f64,
    pub final_activation: FinalActivation,
    latent_dim: usize,
    attr_dim: usize,
}

impl FlowModel {
    pub const DEFAULT_BLOCKS: usize = 4;

    /// Freshly initialized model with `T = 1`.
    pub fn new(latent_dim: usize, attr_dim: usize, n_blocks: usize, rng: &mut RngStream) -> Result<Self> {
        Self::check_dims(latent_dim, n_blocks)?;
        let blocks = (0..n_blocks).map(|_| ConcatSquash::init(latent_dim, attr_dim + 1, rng)).collect();
        Ok(FlowModel {
            blocks,
            pre_norm: MovingNorm::new(latent_dim),
            post_norm: MovingNorm::new(latent_dim),
            end_time_raw: softplus_inv(1.0 - MIN_END_TIME),
            final_activation: FinalActivation::Tanh,
            latent_dim,
            attr_dim,
        })
    }

    /// All-zero blocks and exact identity norms: the flow is the identity map.
    pub fn identity(latent_dim: usize, attr_dim: usize, n_blocks: usize) -> Result<Self> {
        Self::check_dims(latent_dim, n_blocks)?;
        Ok(FlowModel {
            blocks: vec![ConcatSquash::zeros(latent_dim, attr_dim + 1); n_blocks],
            pre_norm: MovingNorm::identity(latent_dim),
            post_norm: MovingNorm::identity(latent_dim),
            end_time_raw: softplus_inv(1.0 - MIN_END_TIME),
            final_activation: FinalActivation::Tanh,
            latent_dim,
            attr_dim,
        })
    }

    fn check_dims(latent_dim: usize, n_blocks: usize) -> Result<()> {
        if latent_dim == 0 || n_blocks == 0 {
            return Err(Error::config("a flow needs latent_dim >= 1 and at least one block"));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn attr_dim(&self) -> usize {
        self.attr_dim
    }

    pub fn end_time(&self) -> f64 {
        softplus(self.end_time_raw) + MIN_END_TIME
    }

    /// `dT/dτ`.
    pub fn end_time_slope(&self) -> f64 {
        crate::numerics::sigmoid(self.end_time_raw)
    }

    pub fn set_end_time(&mut self, t: f64) -> Result<()> {
        if !(t > MIN_END_TIME) || !t.is_finite() {
            return Err(Error::config(format!("end time must exceed {MIN_END_TIME}")));
        }
        self.end_time_raw = softplus_inv(t - MIN_END_TIME);
        Ok(())
    }

    pub fn block_param_count(&self) -> usize {
        self.blocks.len() * ConcatSquash::param_count(self.latent_dim, self.attr_dim + 1)
    }

    /// Learnable scalars: blocks, `(γ, β)` of both norms, and the end time.
    pub fn param_count(&self) -> usize {
        param_count(self.latent_dim, self.attr_dim, self.blocks.len())
    }

    /// Flat parameter vector in the layout
    /// `[blocks…, pre γ, pre β, post γ, post β, τ]`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for b in &self.blocks {
            b.write_params(&mut out);
        }
        for n in [&self.pre_norm, &self.post_norm] {
            out.extend_from_slice(&n.log_scale);
            out.extend_from_slice(&n.shift);
        }
        out.push(self.end_time_raw);
        out
    }

    pub fn set_params(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.param_count() {
            return Err(Error::shape(format!(
                "model has {} parameters, got {}",
                self.param_count(),
                src.len()
            )));
        }
        check_finite("model parameters", src)?;
        let mut off = 0;
        for b in &mut self.blocks {
            off += b.read_params(&src[off..]);
        }
        let d = self.latent_dim;
        for n in [&mut self.pre_norm, &mut self.post_norm] {
            n.log_scale.copy_from_slice(&src[off..off + d]);
            n.shift.copy_from_slice(&src[off + d..off + 2 * d]);
            off += 2 * d;
        }
        self.end_time_raw = src[off];
        Ok(())
    }

    /// Offsets of the norm parameters and `τ` inside [`FlowModel::params`].
    pub(crate) fn tail_offsets(&self) -> TailOffsets {
        let base = self.block_param_count();
        let d = self.latent_dim;
        TailOffsets { pre: base, post: base + 2 * d, end_time: base + 4 * d }
    }

    /// The vector field with the attribute conditioning bound.
    pub fn field<'a>(&'a self, attrs: &[f64]) -> Result<ConditionedField<'a>> {
        if attrs.len() != self.attr_dim {
            return Err(Error::shape(format!(
                "model expects {} attributes, got {}",
                self.attr_dim,
                attrs.len()
            )));
        }
        check_finite("attributes", attrs)?;
        let mut cond = Vec::with_capacity(self.attr_dim + 1);
        cond.push(0.0);
        cond.extend_from_slice(attrs);
        Ok(ConditionedField { model: self, cond, tape: RefCell::new(Tape::default()) })
    }

    /// `dz/dt` at `(z, t)` under conditioning `attrs`.
    pub fn dynamics_eval(&self, z: &[f64], attrs: &[f64], t: f64) -> Result<Vec<f64>> {
        let field = self.field(attrs)?;
        field.check_z(z)?;
        let mut dz = vec![0.0; self.latent_dim];
        field.eval(t, z, &[], &mut dz, &mut [])?;
        Ok(dz)
    }

    /// `(vᵀ ∂φ/∂z, vᵀ ∂φ/∂θ_blocks)`.
    pub fn dynamics_vjp(&self, z: &[f64], attrs: &[f64], t: f64, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let field = self.field(attrs)?;
        field.check_z(z)?;
        if v.len() != self.latent_dim {
            return Err(Error::shape("cotangent length differs from latent dimension"));
        }
        let mut dz = vec![0.0; self.latent_dim];
        let mut gz = vec![0.0; self.latent_dim];
        let mut gt = vec![0.0; self.block_param_count()];
        field.backprop(t, z, &[], v, 0.0, &mut dz, &mut gz, &mut gt)?;
        Ok((gz, gt))
    }
}

pub(crate) struct TailOffsets {
    pub pre: usize,
    pub post: usize,
    pub end_time: usize,
}

/// Learnable scalar count for a model of the given shape.
pub fn param_count(latent_dim: usize, attr_dim: usize, n_blocks: usize) -> usize {
    n_blocks * ConcatSquash::param_count(latent_dim, attr_dim + 1) + 2 * (2 * latent_dim) + 1
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Default)]
struct Tape {
    /// Per block: input, pre-gate product `W x + b`, gate, output.
    inputs: Vec<Vec<f64>>,
    lin: Vec<Vec<f64>>,
    gates: Vec<Vec<f64>>,
    hypers: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
    /// Per block and probe: input tangent and `W ẋ`.
    tan_in: Vec<Vec<Vec<f64>>>,
    tan_lin: Vec<Vec<Vec<f64>>>,
    /// Per probe: output tangent `J ε` of the whole stack.
    tan_out: Vec<Vec<f64>>,
}

impl Tape {
    fn ensure(&mut self, n_blocks: usize, d: usize, n_probes: usize) {
        let fix = |v: &mut Vec<Vec<f64>>| {
            v.resize_with(n_blocks, Vec::new);
            for x in v.iter_mut() {
                x.resize(d, 0.0);
            }
        };
        fix(&mut self.inputs);
        fix(&mut self.lin);
        fix(&mut self.gates);
        fix(&mut self.hypers);
        fix(&mut self.outputs);
        for t in [&mut self.tan_in, &mut self.tan_lin] {
            t.resize_with(n_blocks, Vec::new);
            for per_block in t.iter_mut() {
                per_block.resize_with(n_probes, Vec::new);
                for x in per_block.iter_mut() {
                    x.resize(d, 0.0);
                }
            }
        }
        self.tan_out.resize_with(n_probes, Vec::new);
        for x in self.tan_out.iter_mut() {
            x.resize(d, 0.0);
        }
    }
}

/// A [`FlowModel`]'s vector field with fixed attribute conditioning.
///
/// The condition fed to every block is `c = [t, a…]`: the broadcast time
/// followed by the attributes.
pub struct ConditionedField<'a> {
    model: &'a FlowModel,
    cond: Vec<f64>,
    tape: RefCell<Tape>,
}

impl ConditionedField<'_> {
    pub fn model(&self) -> &FlowModel {
        self.model
    }

    fn check_z(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.model.latent_dim {
            return Err(Error::shape(format!(
                "latent of length {} for a {}-dimensional model",
                z.len(),
                self.model.latent_dim
            )));
        }
        check_finite("latent", z)
    }

    fn is_tanh(&self, block: usize) -> bool {
        block + 1 < self.model.blocks.len() || self.model.final_activation == FinalActivation::Tanh
    }

    /// Forward pass recording the tape. Tangents are propagated for every probe.
    fn forward(&self, t: f64, z: &[f64], probes: &[Vec<f64>], tape: &mut Tape, cond: &mut [f64]) {
        let model = self.model;
        let d = model.latent_dim;
        let nb = model.blocks.len();
        tape.ensure(nb, d, probes.len());
        cond[0] = t;
        tape.inputs[0].copy_from_slice(z);
        for (dst, eps) in tape.tan_in[0].iter_mut().zip(probes) {
            dst.copy_from_slice(eps);
        }
        for (i, block) in model.blocks.iter().enumerate() {
            let tanh = self.is_tanh(i);
            let Tape { inputs, lin, gates, hypers, outputs, tan_in, tan_lin, tan_out } = tape;
            block.condition_terms(cond, &mut gates[i], &mut hypers[i]);
            block.weight.matvec_into(&inputs[i], &mut lin[i]);
            axpy(1.0, &block.bias, &mut lin[i]);
            for j in 0..d {
                let o = lin[i][j] * gates[i][j] + hypers[i][j];
                outputs[i][j] = if tanh { o.tanh() } else { o };
            }
            for p in 0..probes.len() {
                block.weight.matvec_into(&tan_in[i][p], &mut tan_lin[i][p]);
                let dst = if i + 1 < nb { &mut tan_in[i + 1][p] } else { &mut tan_out[p] };
                for j in 0..d {
                    let y = outputs[i][j];
                    let act1 = if tanh { 1.0 - y * y } else { 1.0 };
                    dst[j] = act1 * tan_lin[i][p][j] * gates[i][j];
                }
            }
            if i + 1 < nb {
                inputs[i + 1].copy_from_slice(&outputs[i]);
            }
        }
    }
}

impl Dynamics for ConditionedField<'_> {
    fn dim(&self) -> usize {
        self.model.latent_dim
    }

    fn param_len(&self) -> usize {
        self.model.block_param_count()
    }

    fn eval(&self, t: f64, z: &[f64], probes: &[Vec<f64>], dz: &mut [f64], jvps: &mut [Vec<f64>]) -> Result<()> {
        check_finite("latent", z)?;
        let mut tape = self.tape.borrow_mut();
        let mut cond = self.cond.clone();
        self.forward(t, z, probes, &mut tape, &mut cond);
        let last = self.model.blocks.len() - 1;
        dz.copy_from_slice(&tape.outputs[last]);
        if !probes.is_empty() {
            for (dst, src) in jvps.iter_mut().zip(&tape.tan_out) {
                dst.copy_from_slice(src);
            }
        }
        Ok(())
    }

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
    ) -> Result<()> {
        check_finite("latent", z)?;
        let model = self.model;
        let d = model.latent_dim;
        let cdim = model.attr_dim + 1;
        let with_trace = trace_weight != 0.0 && !probes.is_empty();
        let used_probes: &[Vec<f64>] = if with_trace { probes } else { &[] };
        let np = used_probes.len();

        let mut tape = self.tape.borrow_mut();
        let mut cond = self.cond.clone();
        self.forward(t, z, used_probes, &mut tape, &mut cond);
        let last = model.blocks.len() - 1;
        dz.copy_from_slice(&tape.outputs[last]);

        let mut ybar = cotangent.to_vec();
        let mut ydotbar: Vec<Vec<f64>> = used_probes.iter().map(|e| e.iter().map(|x| trace_weight * x).collect()).collect();

        let per_block = crate::dynamics::ConcatSquash::param_count(d, cdim);
        let mut obar = vec![0.0; d];
        let mut sbar = vec![0.0; d];
        let mut ubar = vec![0.0; d];
        let mut odotbar = vec![vec![0.0; d]; np];
        let mut udotbar = vec![vec![0.0; d]; np];

        for i in (0..model.blocks.len()).rev() {
            let block = &model.blocks[i];
            let tanh = self.is_tanh(i);
            let y = &tape.outputs[i];
            let s = &tape.gates[i];
            let u = &tape.lin[i];

            // o = u ⊙ s + h, y = act(o); ẏ_p = act'(o) ⊙ u̇_p ⊙ s.
            for j in 0..d {
                let act1 = if tanh { 1.0 - y[j] * y[j] } else { 1.0 };
                let act2 = if tanh { -2.0 * y[j] * act1 } else { 0.0 };
                let mut ob = ybar[j] * act1;
                let mut sb = 0.0;
                for p in 0..np {
                    let odot = tape.tan_lin[i][p][j] * s[j];
                    ob += ydotbar[p][j] * odot * act2;
                    odotbar[p][j] = ydotbar[p][j] * act1;
                    udotbar[p][j] = odotbar[p][j] * s[j];
                    sb += odotbar[p][j] * tape.tan_lin[i][p][j];
                }
                obar[j] = ob;
                sbar[j] = sb + ob * u[j];
                ubar[j] = ob * s[j];
            }

            let off = i * per_block;
            let (gw, rest) = grad_theta[off..off + per_block].split_at_mut(d * d);
            let (gb, rest) = rest.split_at_mut(d);
            let (gg, rest) = rest.split_at_mut(d * cdim);
            let (ggb, gh) = rest.split_at_mut(d);

            outer_acc(&ubar, &tape.inputs[i], gw);
            for p in 0..np {
                outer_acc(&udotbar[p], &tape.tan_in[i][p], gw);
            }
            axpy(1.0, &ubar, gb);
            // gate pre-activation q = G c + g.
            let qbar: Vec<f64> = sbar.iter().zip(s).map(|(b, s)| b * s * (1.0 - s)).collect();
            outer_acc(&qbar, &cond, gg);
            axpy(1.0, &qbar, ggb);
            outer_acc(&obar, &cond, gh);

            let mut xbar = vec![0.0; d];
            block.weight.matvec_t_acc(&ubar, &mut xbar);
            ybar = xbar;
            if i > 0 {
                for p in 0..np {
                    let mut xdb = vec![0.0; d];
                    block.weight.matvec_t_acc(&udotbar[p], &mut xdb);
                    ydotbar[p] = xdb;
                }
            }
        }
        axpy(1.0, &ybar, grad_z);
        Ok(())
    }
}

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, DenseMatrix, RngStream};

/// One gate-bias ("ConcatSquash") block:
/// `(W x + b) ⊙ σ(G c + g) + H c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatSquash {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
    pub gate_weight: DenseMatrix,
    pub gate_bias: Vec<f64>,
    pub hyper_weight: DenseMatrix,
}

impl ConcatSquash {
    pub fn zeros(dim: usize, cond_dim: usize) -> Self {
        ConcatSquash {
            weight: DenseMatrix::zeros(dim, dim),
            bias: vec![0.0; dim],
            gate_weight: DenseMatrix::zeros(dim, cond_dim),
            gate_bias: vec![0.0; dim],
            hyper_weight: DenseMatrix::zeros(dim, cond_dim),
        }
    }

    /// Fan-in uniform init for the main and gate weights; gate bias and
    /// hyperbias start at zero.
    pub fn init(dim: usize, cond_dim: usize, rng: &mut RngStream) -> Self {
        let mut block = Self::zeros(dim, cond_dim);
        let bound = 1.0 / (dim as f64).sqrt();
        block.weight.as_mut_slice().copy_from_slice(&rng.uniform(dim * dim, -bound, bound));
        block.bias = rng.uniform(dim, -bound, bound);
        let gbound = 1.0 / (cond_dim as f64).sqrt();
        block
            .gate_weight
            .as_mut_slice()
            .copy_from_slice(&rng.uniform(dim * cond_dim, -gbound, gbound));
        block
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    pub fn cond_dim(&self) -> usize {
        self.gate_weight.cols()
    }

    pub fn param_count(dim: usize, cond_dim: usize) -> usize {
        dim * dim + dim + dim * cond_dim + dim + dim * cond_dim
    }

    /// Parameters in the flat layout `[W, b, G, g, H]`.
    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weight.as_slice());
        out.extend_from_slice(&self.bias);
        out.extend_from_slice(self.gate_weight.as_slice());
        out.extend_from_slice(&self.gate_bias);
        out.extend_from_slice(self.hyper_weight.as_slice());
    }

    /// Reads parameters back from the flat layout; returns the number consumed.
    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let mut off = 0;
        for dst in [
            self.weight.as_mut_slice(),
            &mut self.bias[..],
            self.gate_weight.as_mut_slice(),
            &mut self.gate_bias[..],
            self.hyper_weight.as_mut_slice(),
        ] {
            dst.copy_from_slice(&src[off..off + dst.len()]);
            off += dst.len();
        }
        off
    }

    /// Gate `σ(G c + g)` and hyperbias `H c` for the condition `c`.
    pub(crate) fn condition_terms(&self, c: &[f64], gate: &mut [f64], hyper: &mut [f64]) {
        self.gate_weight.matvec_into(c, gate);
        for (s, g) in gate.iter_mut().zip(&self.gate_bias) {
            *s = sigmoid(*s + g);
        }
        self.hyper_weight.matvec_into(c, hyper);
    }
}

/// Forward pass of a single block, without the trailing activation.
pub fn concat_squash_forward(x: &[f64], c: &[f64], p: &ConcatSquash) -> Result<Vec<f64>> {
    if x.len() != p.dim() || c.len() != p.cond_dim() {
        return Err(Error::shape(format!(
            "concat-squash block is {}x{} with condition {}, got x {} and c {}",
            p.dim(),
            p.dim(),
            p.cond_dim(),
            x.len(),
            c.len()
        )));
    }
    let d = p.dim();
    let mut gate = vec![0.0; d];
    let mut hyper = vec![0.0; d];
    p.condition_terms(c, &mut gate, &mut hyper);
    let mut out = p.weight.matvec(x)?;
    for i in 0..d {
        out[i] = (out[i] + p.bias[i]) * gate[i] + hyper[i];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_block_outputs_zero() {
        let p = ConcatSquash::zeros(3, 2);
        let y = concat_squash_forward(&[1.0, -4.0, 2.0], &[0.3, 0.7], &p).unwrap();
        assert_eq!(y, vec![0.0; 3]);
    }

    #[test]
    fn saturated_gate_passes_input() {
        let mut p = ConcatSquash::zeros(3, 2);
        p.weight = DenseMatrix::identity(3);
        p.gate_bias = vec![50.0; 3];
        let x = [0.5, -1.5, 2.0];
        let y = concat_squash_forward(&x, &[0.1, 0.2], &p).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_hand_computation() {
        let mut p = ConcatSquash::zeros(1, 1);
        p.weight.set(0, 0, 2.0);
        p.hyper_weight.set(0, 0, 3.0);
        let y = concat_squash_forward(&[1.0], &[1.0], &p).unwrap();
        assert_eq!(y, vec![4.0]);
    }

    #[test]
    fn shape_mismatch() {
        let p = ConcatSquash::zeros(3, 2);
        assert!(matches!(concat_squash_forward(&[1.0; 2], &[0.0; 2], &p), Err(Error::Shape(_))));
        assert!(matches!(concat_squash_forward(&[1.0; 3], &[0.0; 3], &p), Err(Error::Shape(_))));
    }

    #[test]
    fn flat_layout_round_trip() {
        let mut rng = RngStream::new(9);
        let a = ConcatSquash::init(4, 3, &mut rng);
        let mut flat = Vec::new();
        a.write_params(&mut flat);
        assert_eq!(flat.len(), ConcatSquash::param_count(4, 3));
        let mut b = ConcatSquash::zeros(4, 3);
        assert_eq!(b.read_params(&flat), flat.len());
        assert_eq!(a, b);
    }
}

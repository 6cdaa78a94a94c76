use crate::error::{Error, Result};

/// Invertible affine normalization with running statistics.
///
/// `y = exp(γ) ⊙ (x − mean) / sqrt(var + eps) + β`. Only `γ` and `β` are
/// learnable; the running mean and variance are buffers that move toward
/// batch statistics during training.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingNorm {
    pub log_scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl MovingNorm {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(dim: usize) -> Self {
        MovingNorm {
            log_scale: vec![0.0; dim],
            shift: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    /// Exact identity map (`eps = 0`, unit variance).
    pub fn identity(dim: usize) -> Self {
        MovingNorm { eps: 0.0, ..Self::new(dim) }
    }

    pub fn dim(&self) -> usize {
        self.log_scale.len()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::shape(format!("norm of width {} given {}", self.dim(), x.len())));
        }
        Ok(())
    }

    /// Per-coordinate `exp(γ) / sqrt(var + eps)`.
    pub fn scales(&self) -> Vec<f64> {
        self.log_scale
            .iter()
            .zip(&self.running_var)
            .map(|(g, v)| g.exp() / (v + self.eps).sqrt())
            .collect()
    }

    pub fn log_det(&self) -> f64 {
        self.log_scale
            .iter()
            .zip(&self.running_var)
            .map(|(g, v)| g - 0.5 * (v + self.eps).ln())
            .sum()
    }

    /// Normalizing direction with the stored statistics.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(x)?;
        let y = x
            .iter()
            .zip(self.scales())
            .zip(self.running_mean.iter().zip(&self.shift))
            .map(|((xi, s), (m, b))| s * (xi - m) + b)
            .collect();
        Ok((y, self.log_det()))
    }

    /// Exact inverse of [`MovingNorm::forward`]; the log-determinant is negated.
    pub fn inverse(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(y)?;
        let scales = self.scales();
        if let Some(i) = scales.iter().position(|s| *s == 0.0 || !s.is_finite()) {
            return Err(Error::Numeric(format!("norm scale underflow at coordinate {i}")));
        }
        let x = y
            .iter()
            .zip(scales)
            .zip(self.running_mean.iter().zip(&self.shift))
            .map(|((yi, s), (m, b))| (yi - b) / s + m)
            .collect();
        Ok((x, -self.log_det()))
    }

    /// Moves the running statistics toward the batch mean and (unbiased)
    /// variance. A single-row batch only updates the mean.
    pub fn update_stats(&mut self, batch: &[&[f64]]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::EmptyRequest("norm statistics from an empty batch"));
        }
        for x in batch {
            self.check(x)?;
        }
        let n = batch.len() as f64;
        let m = self.momentum;
        for j in 0..self.dim() {
            let mean = batch.iter().map(|x| x[j]).sum::<f64>() / n;
            self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * mean;
            if batch.len() > 1 {
                let var = batch.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                self.running_var[j] = (1.0 - m) * self.running_var[j] + m * var;
            }
        }
        Ok(())
    }

    /// Replaces the running statistics with the exact mean and (unbiased)
    /// variance of `rows`.
    pub fn fit_stats(&mut self, rows: &[&[f64]]) -> Result<()> {
        if rows.len() < 2 {
            return Err(Error::EmptyRequest("norm statistics need at least two rows"));
        }
        let m = self.momentum;
        self.momentum = 1.0;
        let out = self.update_stats(rows);
        self.momentum = m;
        out
    }

    /// Training-mode forward: statistics are updated from the batch first,
    /// then every row is normalized with the updated statistics.
    pub fn forward_train(&mut self, batch: &[&[f64]]) -> Result<Vec<(Vec<f64>, f64)>> {
        self.update_stats(batch)?;
        batch.iter().map(|x| self.forward(x)).collect()
    }
}

/// Functional form of [`MovingNorm::forward`] / [`MovingNorm::forward_train`]
/// for a single vector.
pub fn moving_norm_forward(x: &[f64], p: &mut MovingNorm, training: bool) -> Result<(Vec<f64>, f64)> {
    if training {
        p.update_stats(&[x])?;
    }
    p.forward(x)
}

pub fn moving_norm_inverse(y: &[f64], p: &MovingNorm) -> Result<(Vec<f64>, f64)> {
    p.inverse(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_parameters() {
        let p = MovingNorm::identity(3);
        let (y, ld) = p.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(y, vec![1.0, -2.0, 0.5]);
        assert_eq!(ld, 0.0);
        let (x, ld) = p.inverse(&y).unwrap();
        assert_eq!(x, vec![1.0, -2.0, 0.5]);
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn scalar_hand_computation() {
        let mut p = MovingNorm::identity(1);
        p.log_scale[0] = 2f64.ln();
        p.running_mean[0] = 3.0;
        let (y, ld) = p.forward(&[5.0]).unwrap();
        assert!((y[0] - 4.0).abs() < 1e-12);
        assert!((ld - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn training_updates_stats_before_normalizing() {
        let mut p = MovingNorm::new(1);
        let rows: [&[f64]; 2] = [&[1.0], &[3.0]];
        let out = p.forward_train(&rows).unwrap();
        assert!((p.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((p.running_var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-15);
        let expected = (1.0 - 0.2) / (1.1f64 + 1e-5).sqrt();
        assert!((out[0].0[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn scale_underflow_is_reported() {
        let mut p = MovingNorm::new(1);
        p.log_scale[0] = -1e4;
        assert!(matches!(p.inverse(&[1.0]), Err(Error::Numeric(_))));
    }

    proptest! {
        #[test]
        fn round_trip(
            x in proptest::collection::vec(-1e3f64..1e3, 4),
            g in proptest::collection::vec(-2f64..2.0, 4),
            b in proptest::collection::vec(-5f64..5.0, 4),
            m in proptest::collection::vec(-5f64..5.0, 4),
            v in proptest::collection::vec(0.01f64..10.0, 4),
        ) {
            let p = MovingNorm {
                log_scale: g, shift: b, running_mean: m, running_var: v,
                momentum: 0.1, eps: 1e-5,
            };
            let (y, ld_f) = p.forward(&x).unwrap();
            let (back, ld_i) = p.inverse(&y).unwrap();
            for (a, c) in x.iter().zip(&back) {
                prop_assert!((a - c).abs() <= 1e-12 * a.abs().max(1.0));
            }
            prop_assert_eq!(ld_f + ld_i, 0.0);
        }
    }
}

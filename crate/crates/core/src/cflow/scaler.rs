use crate::error::{check_finite, Error, Result};

/// Per-channel z-scoring of attribute vectors before they reach the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl AttributeScaler {
    pub fn identity(dim: usize) -> Self {
        AttributeScaler { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Mean and population standard deviation of each channel. Constant
    /// channels keep unit scale.
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let first = rows.first().ok_or(Error::EmptyRequest("attribute scaler from no rows"))?;
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            if r.len() != dim {
                return Err(Error::shape("attribute rows of differing length"));
            }
            check_finite("attributes", r)?;
            for (m, x) in mean.iter_mut().zip(r.iter()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = vec![0.0; dim];
        for r in &rows {
            for j in 0..dim {
                std[j] += (r[j] - mean[j]).powi(2);
            }
        }
        for s in &mut std {
            *s = (*s / n).sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Ok(AttributeScaler { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, a: &[f64]) -> Result<Vec<f64>> {
        if a.len() != self.dim() {
            return Err(Error::shape(format!("expected {} attributes, got {}", self.dim(), a.len())));
        }
        check_finite("attributes", a)?;
        Ok(a.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect())
    }

    pub fn invert(&self, scaled: &[f64]) -> Result<Vec<f64>> {
        if scaled.len() != self.dim() {
            return Err(Error::shape(format!("expected {} attributes, got {}", self.dim(), scaled.len())));
        }
        Ok(scaled.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| x * s + m).collect())
    }
}

use super::flow::std_normal_log_density;
use crate::error::{check_finite, Error, Result};
use crate::numerics::{adam_step, dot, AdamState, RngStream};

const SINGULAR_TOL: f64 = 1e-12;

/// One planar layer `x ↦ x + u tanh(wᵀx + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarLayer {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
}

impl PlanarLayer {
    pub fn dim(&self) -> usize {
        self.u.len()
    }
}

/// Applies the layer chain and returns the output with
/// `Σ log|1 + uᵀψ(x)|`, where `ψ(x) = tanh′(wᵀx + b) w`.
pub fn planar_forward(z: &[f64], layers: &[PlanarLayer]) -> Result<(Vec<f64>, f64)> {
    check_finite("planar input", z)?;
    let mut x = z.to_vec();
    let mut logdet = 0.0;
    for (i, l) in layers.iter().enumerate() {
        if l.u.len() != x.len() || l.w.len() != x.len() {
            return Err(Error::shape(format!("planar layer {i} has width {}, input {}", l.dim(), x.len())));
        }
        let h = (dot(&l.w, &x) + l.b).tanh();
        let det = 1.0 + (1.0 - h * h) * dot(&l.u, &l.w);
        if det.abs() < SINGULAR_TOL {
            return Err(Error::SingularLayer { layer: i, value: det.abs() });
        }
        logdet += det.abs().ln();
        for (xj, uj) in x.iter_mut().zip(&l.u) {
            *xj += uj * h;
        }
    }
    Ok((x, logdet))
}

/// Density model `log p(x) = log N(f(x)) + Σ log|1 + uᵀψ|`, with the planar
/// chain `f` applied in the normalizing direction.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarFlow {
    pub layers: Vec<PlanarLayer>,
}

impl PlanarFlow {
    pub fn init(dim: usize, n_layers: usize, rng: &mut RngStream) -> Self {
        let layers = (0..n_layers)
            .map(|_| PlanarLayer { u: rng.uniform(dim, -0.1, 0.1), w: rng.uniform(dim, -0.1, 0.1), b: 0.0 })
            .collect();
        PlanarFlow { layers }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let (z, ld) = planar_forward(x, &self.layers)?;
        Ok(std_normal_log_density(&z) + ld)
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.u);
            out.extend_from_slice(&l.w);
            out.push(l.b);
        }
        out
    }

    pub fn set_params(&mut self, src: &[f64]) -> Result<()> {
        let per = self.layers.first().map_or(0, |l| 2 * l.dim() + 1);
        if src.len() != per * self.layers.len() {
            return Err(Error::shape("planar parameter vector has the wrong length"));
        }
        for (l, chunk) in self.layers.iter_mut().zip(src.chunks(per)) {
            let d = l.dim();
            l.u.copy_from_slice(&chunk[..d]);
            l.w.copy_from_slice(&chunk[d..2 * d]);
            l.b = chunk[2 * d];
        }
        Ok(())
    }

    /// Negative log-density of `x` and its gradient with respect to
    /// [`PlanarFlow::params`].
    pub fn nll_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = x.len();
        let mut xs = vec![x.to_vec()];
        let mut hs = Vec::with_capacity(self.layers.len());
        let mut dets = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let cur = xs.last().unwrap();
            if l.dim() != d {
                return Err(Error::shape("planar layer width differs from input"));
            }
            let h = (dot(&l.w, cur) + l.b).tanh();
            let det = 1.0 + (1.0 - h * h) * dot(&l.u, &l.w);
            if det.abs() < SINGULAR_TOL {
                return Err(Error::SingularLayer { layer: i, value: det.abs() });
            }
            let next: Vec<f64> = cur.iter().zip(&l.u).map(|(x, u)| x + u * h).collect();
            hs.push(h);
            dets.push(det);
            xs.push(next);
        }
        let z = xs.last().unwrap();
        let nll = -std_normal_log_density(z) - dets.iter().map(|d| d.abs().ln()).sum::<f64>();

        let per = 2 * d + 1;
        let mut grad = vec![0.0; per * self.layers.len()];
        let mut ybar = z.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let x = &xs[i];
            let h = hs[i];
            let h1 = 1.0 - h * h;
            let h2 = -2.0 * h * h1;
            let uw = dot(&l.u, &l.w);
            let inv = 1.0 / dets[i];
            // Through y = x + u h(s), then through −log|1 + h'(s) uᵀw|.
            let sbar = h1 * dot(&l.u, &ybar) - inv * h2 * uw;
            let g = &mut grad[i * per..(i + 1) * per];
            for j in 0..d {
                g[j] = ybar[j] * h - inv * h1 * l.w[j];
                g[d + j] = sbar * x[j] - inv * h1 * l.u[j];
            }
            g[2 * d] = sbar;
            for j in 0..d {
                ybar[j] += sbar * l.w[j];
            }
        }
        Ok((nll, grad))
    }

    /// Adam on the mean negative log-density of `samples`; returns the
    /// per-epoch mean.
    pub fn fit(&mut self, samples: &[Vec<f64>], epochs: usize, batch_size: usize, lr: f64, seed: u64) -> Result<Vec<f64>> {
        if samples.is_empty() || batch_size == 0 {
            return Err(Error::EmptyRequest("planar fit without samples"));
        }
        let root = RngStream::new(seed);
        let mut adam = AdamState::new(self.params().len(), lr);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut curve = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            root.derive(epoch as u64).shuffle(&mut order);
            let mut total = 0.0;
            for chunk in order.chunks(batch_size) {
                let mut grad = vec![0.0; adam.m.len()];
                for &i in chunk {
                    let (nll, g) = self.nll_and_gradient(&samples[i])?;
                    total += nll;
                    for (a, b) in grad.iter_mut().zip(g) {
                        *a += b / chunk.len() as f64;
                    }
                }
                let mut p = self.params();
                adam_step(&mut p, &grad, &mut adam)?;
                self.set_params(&p)?;
            }
            curve.push(total / samples.len() as f64);
        }
        Ok(curve)
    }
}

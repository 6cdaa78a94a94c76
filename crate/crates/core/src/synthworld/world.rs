use sha2::{Digest, Sha256};

use crate::error::{check_finite, Error, Result};
use crate::numerics::{dot, DenseMatrix, RngStream};

/// Semantic channel names in their canonical order.
pub const SEMANTIC_CHANNELS: [&str; 8] =
    ["gender", "pitch", "yaw", "eyeglasses", "age", "facial_hair", "expression", "baldness"];

/// Truncation at which the attribute projections are calibrated.
pub const REFERENCE_TRUNCATION: f64 = 0.7;

/// Weight of the direction shared by all attribute projections.
const SHARED_WEIGHT: f64 = 0.7;
const MIN_CHANNEL_STD: f64 = 0.05;
const MAX_RESEEDS: u64 = 32;

/// Monotone link from a projection `P_k · w + offset_k` to an attribute value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    /// Bounded, for semantic channels.
    Logistic,
    /// Unbounded, for lighting channels.
    Linear,
}

impl Link {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Link::Logistic => crate::numerics::sigmoid(x),
            Link::Linear => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Link::Logistic => {
                let s = crate::numerics::sigmoid(x);
                s * (1.0 - s)
            }
            Link::Linear => 1.0,
        }
    }

    fn for_channel(name: &str) -> Link {
        if name.starts_with("light") {
            Link::Linear
        } else {
            Link::Logistic
        }
    }
}

/// Ground-truth generator and attribute oracle.
///
/// `w = w̄ + ψ (M softsign(z_s) − w̄)`, attributes `a_k = link_k(P_k · w + o_k)`,
/// identity `Q w` with `Q Pᵀ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub seed: u64,
    pub mixing: DenseMatrix,
    pub center: Vec<f64>,
    pub projections: DenseMatrix,
    pub offsets: Vec<f64>,
    pub links: Vec<Link>,
    pub channels: Vec<String>,
    pub identity: DenseMatrix,
}

/// Default channel inventory for `L` attributes: up to eight semantic
/// channels followed by lighting channels.
pub fn default_channels(attr_dim: usize) -> Vec<String> {
    let semantic = attr_dim.min(SEMANTIC_CHANNELS.len());
    let mut out: Vec<String> = SEMANTIC_CHANNELS[..semantic].iter().map(|s| s.to_string()).collect();
    out.extend((0..attr_dim - semantic).map(|i| format!("light_{i}")));
    out
}

/// Builds the world for `seed` with the default channel inventory.
pub fn make_world(seed: u64, latent_dim: usize, attr_dim: usize) -> Result<WorldSpec> {
    make_world_with_channels(seed, latent_dim, &default_channels(attr_dim))
}

/// Builds a world with an explicit channel list. Names beginning with
/// `light` get linear links, all others logistic links.
pub fn make_world_with_channels<S: AsRef<str>>(seed: u64, latent_dim: usize, channels: &[S]) -> Result<WorldSpec> {
    let attr_dim = channels.len();
    if attr_dim == 0 {
        return Err(Error::config("a world needs at least one attribute channel"));
    }
    if latent_dim < attr_dim + 2 {
        return Err(Error::config(format!("latent_dim {latent_dim} must be at least attr_dim + 2 = {}", attr_dim + 2)));
    }
    let names: Vec<String> = channels.iter().map(|c| c.as_ref().to_string()).collect();
    for (i, n) in names.iter().enumerate() {
        if n.is_empty() || names[..i].contains(n) {
            return Err(Error::config(format!("channel names must be unique and non-empty: {n:?}")));
        }
    }
    for attempt in 0..MAX_RESEEDS {
        let world = build(seed, attempt, latent_dim, &names)?;
        if world.min_channel_std(2000)? > MIN_CHANNEL_STD {
            return Ok(world);
        }
    }
    Err(Error::Numeric(format!("no non-degenerate world found for seed {seed}")))
}

fn build(seed: u64, attempt: u64, d: usize, names: &[String]) -> Result<WorldSpec> {
    let mut rng = RngStream::new(seed).derive(attempt);
    let l = names.len();

    let orth = random_orthogonal(d, &mut rng)?;
    let stretch = rng.uniform(d, 0.5, 2.0);
    let mut mixing = orth;
    for i in 0..d {
        for (j, s) in stretch.iter().enumerate() {
            let v = mixing.get(i, j) * s;
            mixing.set(i, j, v);
        }
    }
    let center: Vec<f64> = rng.gaussian(d)?.into_iter().map(|x| 0.5 * x).collect();

    // Rows share one common direction, so attributes are correlated.
    let shared = unit(rng.gaussian(d)?);
    let spread = softsign_variance();
    let mut projections = DenseMatrix::zeros(l, d);
    for k in 0..l {
        let own = unit(rng.gaussian(d)?);
        let mut row: Vec<f64> =
            shared.iter().zip(&own).map(|(s, o)| SHARED_WEIGHT * s + (1.0 - SHARED_WEIGHT * SHARED_WEIGHT).sqrt() * o).collect();
        // Unit standard deviation of P_k·w at the reference truncation.
        let mt_row = mixing.transpose().matvec(&row)?;
        let sd = REFERENCE_TRUNCATION * spread.sqrt() * dot(&mt_row, &mt_row).sqrt();
        row.iter_mut().for_each(|x| *x /= sd);
        projections.row_mut(k).copy_from_slice(&row);
    }
    let mean_w: Vec<f64> = center.iter().map(|c| (1.0 - REFERENCE_TRUNCATION) * c).collect();
    let offsets = (0..l).map(|k| -dot(projections.row(k), &mean_w)).collect();
    let identity = orthogonal_complement(&projections)?;
    Ok(WorldSpec {
        seed,
        mixing,
        center,
        projections,
        offsets,
        links: names.iter().map(|n| Link::for_channel(n)).collect(),
        channels: names.to_vec(),
        identity,
    })
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// `Var[z / (1 + |z|)]` for `z ~ N(0, 1)`, by Simpson quadrature.
fn softsign_variance() -> f64 {
    let n = 4000;
    let (a, b) = (0.0, 12.0);
    let h = (b - a) / n as f64;
    let f = |z: f64| {
        let s = z / (1.0 + z);
        s * s * (-0.5 * z * z).exp()
    };
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    2.0 * acc * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt()
}

/// Gram–Schmidt on a Gaussian matrix, with a second orthogonalization pass.
fn random_orthogonal(d: usize, rng: &mut RngStream) -> Result<DenseMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let v = rng.gaussian(d)?;
        if let Some(u) = orthonormalize_against(v, &rows) {
            rows.push(u);
        }
    }
    DenseMatrix::from_rows(&rows)
}

fn orthonormalize_against(mut v: Vec<f64>, basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let start = dot(&v, &v).sqrt();
    for _ in 0..2 {
        for b in basis {
            let c = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
    let n = dot(&v, &v).sqrt();
    if n <= 1e-8 * start.max(1e-300) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}

/// Orthonormal rows spanning the complement of the row space of `p`.
fn orthogonal_complement(p: &DenseMatrix) -> Result<DenseMatrix> {
    let d = p.cols();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for k in 0..p.rows() {
        if let Some(u) = orthonormalize_against(p.row(k).to_vec(), &basis) {
            basis.push(u);
        }
    }
    let rank = basis.len();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d - rank);
    for i in 0..d {
        if q.len() == d - rank {
            break;
        }
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        let mut all = basis.clone();
        all.extend(q.iter().cloned());
        if let Some(u) = orthonormalize_against(e, &all) {
            q.push(u);
        }
    }
    DenseMatrix::from_rows(&q)
}

impl WorldSpec {
    pub fn latent_dim(&self) -> usize {
        self.mixing.rows()
    }

    pub fn attr_dim(&self) -> usize {
        self.channels.len()
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::config(format!("unknown attribute channel {name:?}")))
    }

    fn check(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.latent_dim() {
            return Err(Error::shape(format!("world is {}-dimensional, got {}", self.latent_dim(), w.len())));
        }
        check_finite("latent", w)
    }

    /// The synthetic mapping network with truncation toward `w̄`.
    pub fn mapping_f(&self, z_s: &[f64], truncation: f64) -> Result<Vec<f64>> {
        self.check(z_s)?;
        if !(truncation > 0.0 && truncation <= 1.0) {
            return Err(Error::config(format!("truncation {truncation} outside (0, 1]")));
        }
        let soft: Vec<f64> = z_s.iter().map(|z| z / (1.0 + z.abs())).collect();
        let mw = self.mixing.matvec(&soft)?;
        if truncation == 1.0 {
            return Ok(mw);
        }
        Ok(mw.iter().zip(&self.center).map(|(m, c)| c + truncation * (m - c)).collect())
    }

    /// Pre-link projection `P_k · w + o_k` of every channel.
    pub fn projections_of(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check(w)?;
        let mut out = self.projections.matvec(w)?;
        out.iter_mut().zip(&self.offsets).for_each(|(x, o)| *x += o);
        Ok(out)
    }

    pub fn attribute_fn(&self, w: &[f64]) -> Result<Vec<f64>> {
        Ok(self.projections_of(w)?.into_iter().zip(&self.links).map(|(x, l)| l.eval(x)).collect())
    }

    /// Component of `w` invisible to every attribute projection.
    pub fn identity_embed(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check(w)?;
        self.identity.matvec(w)
    }

    /// Smallest per-channel attribute standard deviation over `n` draws at
    /// the reference truncation.
    pub fn min_channel_std(&self, n: usize) -> Result<f64> {
        let mut rng = RngStream::new(self.seed).derive(u64::MAX);
        let l = self.attr_dim();
        let mut sum = vec![0.0; l];
        let mut sq = vec![0.0; l];
        for _ in 0..n {
            let w = self.mapping_f(&rng.gaussian(self.latent_dim())?, REFERENCE_TRUNCATION)?;
            for (k, a) in self.attribute_fn(&w)?.into_iter().enumerate() {
                sum[k] += a;
                sq[k] += a * a;
            }
        }
        let n = n as f64;
        Ok((0..l).map(|k| (sq[k] / n - (sum[k] / n).powi(2)).max(0.0).sqrt()).fold(f64::INFINITY, f64::min))
    }

    /// Stable 64-bit digest of the full world definition.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"condflow-world-v1");
        h.update(self.seed.to_le_bytes());
        h.update((self.latent_dim() as u64).to_le_bytes());
        h.update((self.attr_dim() as u64).to_le_bytes());
        for m in [&self.mixing, &self.projections, &self.identity] {
            for x in m.as_slice() {
                h.update(x.to_le_bytes());
            }
        }
        for x in self.center.iter().chain(&self.offsets) {
            h.update(x.to_le_bytes());
        }
        for (c, l) in self.channels.iter().zip(&self.links) {
            h.update((c.len() as u64).to_le_bytes());
            h.update(c.as_bytes());
            h.update([matches!(l, Link::Logistic) as u8]);
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> WorldSpec {
        make_world(3, 12, 5).unwrap()
    }

    #[test]
    fn construction_is_deterministic() {
        assert_eq!(world().fingerprint(), world().fingerprint());
        assert_ne!(world().fingerprint(), make_world(4, 12, 5).unwrap().fingerprint());
    }

    #[test]
    fn identity_rows_are_orthonormal_and_attribute_blind() {
        let w = world();
        let q = &w.identity;
        assert_eq!(q.rows(), 7);
        for i in 0..q.rows() {
            for j in 0..q.rows() {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((dot(q.row(i), q.row(j)) - target).abs() < 1e-12);
            }
            for k in 0..w.attr_dim() {
                assert!(dot(q.row(i), w.projections.row(k)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mapping_closed_forms() {
        let w = world();
        let zero = w.mapping_f(&[0.0; 12], 0.7).unwrap();
        for (a, c) in zero.iter().zip(&w.center) {
            assert!((a - 0.3 * c).abs() < 1e-15);
        }
        let z: Vec<f64> = (0..12).map(|i| (i as f64 - 5.0) * 0.3).collect();
        let soft: Vec<f64> = z.iter().map(|x| x / (1.0 + x.abs())).collect();
        assert_eq!(w.mapping_f(&z, 1.0).unwrap(), w.mixing.matvec(&soft).unwrap());
        let full: Vec<f64> = w.mapping_f(&z, 1.0).unwrap().iter().zip(&w.center).map(|(a, c)| a - c).collect();
        let cut: Vec<f64> = w.mapping_f(&z, 0.7).unwrap().iter().zip(&w.center).map(|(a, c)| a - c).collect();
        assert!((dot(&cut, &cut).sqrt() - 0.7 * dot(&full, &full).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn links_and_channels() {
        let w = make_world(1, 20, 10).unwrap();
        assert_eq!(w.channels[..3], ["gender", "pitch", "yaw"]);
        assert_eq!(w.channels[8], "light_0");
        assert_eq!(w.links[7], Link::Logistic);
        assert_eq!(w.links[9], Link::Linear);
        assert!(w.channel_index("smirk").is_err());
    }

    #[test]
    fn zero_projection_values() {
        let mut w = make_world(2, 20, 10).unwrap();
        w.offsets.iter_mut().for_each(|o| *o = 0.0);
        let a = w.attribute_fn(&[0.0; 20]).unwrap();
        assert!(a[..8].iter().all(|x| *x == 0.5));
        assert!(a[8..].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn attribute_gradient_matches_finite_differences() {
        let w = world();
        let x: Vec<f64> = (0..12).map(|i| 0.1 * i as f64 - 0.4).collect();
        let pre = w.projections_of(&x).unwrap();
        let h = 1e-6;
        for k in 0..w.attr_dim() {
            for j in 0..12 {
                let mut p = x.clone();
                p[j] += h;
                let mut m = x.clone();
                m[j] -= h;
                let fd = (w.attribute_fn(&p).unwrap()[k] - w.attribute_fn(&m).unwrap()[k]) / (2.0 * h);
                let exact = w.links[k].derivative(pre[k]) * w.projections.get(k, j);
                assert!((fd - exact).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn too_small_latent_is_rejected() {
        assert!(matches!(make_world(0, 6, 5), Err(Error::Config(_))));
        assert!(make_world_with_channels(0, 8, &["yaw", "yaw"]).is_err());
    }

    #[test]
    fn softsign_variance_matches_monte_carlo() {
        let mut s = RngStream::new(5);
        let z = s.gaussian(200_000).unwrap();
        let mc = z.iter().map(|x| (x / (1.0 + x.abs())).powi(2)).sum::<f64>() / z.len() as f64;
        assert!((mc - softsign_variance()).abs() < 2e-3);
    }
}

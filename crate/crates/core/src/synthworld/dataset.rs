use super::world::WorldSpec;
use crate::cflow::TrainingTriple;
use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Default corpus size.
pub const DEFAULT_DATASET_SIZE: usize = 10_000;

/// Latent codes with their exact attributes, tagged with the world they
/// came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub world_fingerprint: u64,
    pub triples: Vec<TrainingTriple>,
}

/// Draws `n` codes `z_s ~ N(0, I)`, maps them with the given truncation and
/// attaches `attribute_fn(w)`.
pub fn gen_dataset(world: &WorldSpec, n: usize, seed: u64, truncation: f64) -> Result<SyntheticDataset> {
    if n == 0 {
        return Err(Error::config("dataset size must be positive"));
    }
    let mut rng = RngStream::new(seed);
    let triples = (0..n)
        .map(|_| {
            let w = world.mapping_f(&rng.gaussian(world.latent_dim())?, truncation)?;
            let a = world.attribute_fn(&w)?;
            Ok(TrainingTriple { w, a })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset { world_fingerprint: world.fingerprint(), triples })
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Per-channel attribute standard deviation over the dataset.
    pub fn attribute_std(&self) -> Vec<f64> {
        let Some(first) = self.triples.first() else { return Vec::new() };
        let l = first.a.len();
        let n = self.len() as f64;
        (0..l)
            .map(|k| {
                let mean = self.triples.iter().map(|t| t.a[k]).sum::<f64>() / n;
                (self.triples.iter().map(|t| (t.a[k] - mean).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect()
    }

    pub fn attribute_mean(&self) -> Vec<f64> {
        let Some(first) = self.triples.first() else { return Vec::new() };
        let n = self.len() as f64;
        (0..first.a.len()).map(|k| self.triples.iter().map(|t| t.a[k]).sum::<f64>() / n).collect()
    }
}

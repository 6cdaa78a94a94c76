use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cflow::TrainConfig;
use crate::editpipe::{EditMode, EditTable, Variant};
use crate::error::{Error, Result};
use crate::synthworld::{default_channels, make_world_with_channels, WorldSpec, DEFAULT_DATASET_SIZE, REFERENCE_TRUNCATION};

/// Environment variable that overrides `[output] dir`.
pub const OUT_DIR_ENV: &str = "CONDFLOW_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub seed: u64,
    pub latent_dim: usize,
    pub attr_dim: usize,
    /// Channel names; overrides `attr_dim` when non-empty.
    pub channels: Vec<String>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig { seed: 0, latent_dim: 512, attr_dim: 17, channels: Vec::new() }
    }
}

impl WorldConfig {
    pub fn channel_names(&self) -> Vec<String> {
        if self.channels.is_empty() {
            default_channels(self.attr_dim)
        } else {
            self.channels.clone()
        }
    }

    pub fn build(&self) -> Result<WorldSpec> {
        make_world_with_channels(self.seed, self.latent_dim, &self.channel_names())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub path: PathBuf,
    pub size: usize,
    pub seed: u64,
    pub truncation: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { path: "dataset.cfds".into(), size: DEFAULT_DATASET_SIZE, seed: 1, truncation: REFERENCE_TRUNCATION }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub blocks: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { blocks: 4, init_seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutKind {
    /// Mean of all rows.
    Mean,
    /// Each channel on the mean of the rows its edits write.
    PerChannel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditConfig {
    /// Edit table file; the built-in table when absent.
    pub table: Option<PathBuf>,
    pub variant: Variant,
    pub mode: EditMode,
    pub readout: ReadoutKind,
    pub rows: usize,
}

impl Default for EditConfig {
    fn default() -> Self {
        EditConfig { table: None, variant: Variant::V2, mode: EditMode::Accurate, readout: ReadoutKind::Mean, rows: 18 }
    }
}

impl EditConfig {
    pub fn load_table(&self, base: &Path) -> Result<EditTable> {
        match &self.table {
            None => Ok(EditTable::default()),
            Some(p) => EditTable::parse(&std::fs::read_to_string(base.join(p))?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub starts: usize,
    pub seed: u64,
    /// Quantile of null-edit identity distances used as the accuracy threshold.
    pub identity_quantile: f64,
    /// Samples along each attribute path.
    pub path_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { starts: 20, seed: 7, identity_quantile: 0.95, path_samples: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: ".".into(), checkpoint: "model.ckpt".into() }
    }
}

/// Contents of a run configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub edit: EditConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1);
            Error::Parse { line, msg: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.world.channel_names().len();
        if l == 0 || self.world.latent_dim < l + 2 {
            return Err(Error::config(format!("world needs latent_dim >= attr_dim + 2 (got {} and {l})", self.world.latent_dim)));
        }
        if self.data.size == 0 {
            return Err(Error::config("data.size must be positive"));
        }
        if !(self.data.truncation > 0.0 && self.data.truncation <= 1.0) {
            return Err(Error::config("data.truncation must lie in (0, 1]"));
        }
        if self.model.blocks == 0 {
            return Err(Error::config("model.blocks must be positive"));
        }
        if self.edit.rows == 0 {
            return Err(Error::config("edit.rows must be positive"));
        }
        if self.eval.starts < 2 || self.eval.path_samples < 2 {
            return Err(Error::config("eval.starts and eval.path_samples must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.eval.identity_quantile) {
            return Err(Error::config("eval.identity_quantile must lie in [0, 1]"));
        }
        self.train.validate()
    }

    /// Output directory, honoring the environment override.
    pub fn out_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => self.output.dir.clone(),
        }
    }

    /// `p` resolved against the output directory unless absolute.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir().join(p)
        }
    }
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::DEFAULT_MIN_FREQUENCY;
use crate::error::{Error, Result};
use crate::lbc::LbcConfig;
use crate::nnet::{TrainConfig, DEFAULT_HIDDEN};
use crate::synthgen::SynthSpec;

/// Dataset directory holding `train.jsonl`, `val.jsonl`, `test.jsonl` and
/// the matching `*_annotations.jsonl` files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub dir: PathBuf,
    #[serde(default = "default_min_frequency")]
    pub min_frequency: usize,
}

fn default_min_frequency() -> usize {
    DEFAULT_MIN_FREQUENCY
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub synth: Option<SynthSpec>,
    pub files: Option<FileSource>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: DEFAULT_HIDDEN.to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub k_sweep: Vec<usize>,
    pub data: DataSource,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_erm")]
    pub erm: TrainConfig,
    #[serde(default)]
    pub lbc: LbcConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

/// Desk-scale ERM schedule.
pub fn default_erm() -> TrainConfig {
    TrainConfig::default()
}

impl ExperimentConfig {
    /// Synthetic Waterbirds-shaped experiment with every default.
    pub fn synthetic_default(seed: u64) -> Self {
        let mut cfg = Self {
            seed,
            out: default_out(),
            k_sweep: Vec::new(),
            data: DataSource { synth: Some(SynthSpec::default()), files: None },
            model: ModelConfig::default(),
            erm: default_erm(),
            lbc: LbcConfig::default(),
        };
        cfg.resolve_seeds();
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        cfg.resolve_seeds();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.synth, &self.data.files) {
            (Some(spec), None) => spec.validate()?,
            (None, Some(_)) => {}
            _ => return Err(Error::InvalidConfig("exactly one of [data.synth] and [data.files] must be given".into())),
        }
        self.erm.validate()?;
        self.lbc.validate()?;
        if let Some(&k) = self.k_sweep.iter().find(|&&k| k < 2) {
            return Err(Error::InvalidConfig(format!("k_sweep entry {k} below 2")));
        }
        Ok(())
    }

    /// Propagates the global seed into every component; components draw
    /// from distinct named streams of it.
    pub fn resolve_seeds(&mut self) {
        if let Some(spec) = &mut self.data.synth {
            spec.seed = self.seed;
        }
        self.erm.seed = self.seed;
        self.lbc.train.seed = self.seed;
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.resolve_seeds();
        self
    }
}

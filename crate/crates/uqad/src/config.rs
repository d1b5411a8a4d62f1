//! Experiment configuration: JSON on disk, validated on load.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anova::McmcConfig;
use crate::candidates::Variant;
use crate::data::Protocol;
use crate::{Error, Result};

/// Training hyperparameters shared by all variants.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub hidden: Vec<usize>,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub prior_sigma: f64,
    pub rho_init: f64,
    /// Monte-Carlo prediction samples per example.
    pub mc_samples: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            hidden: vec![512, 512],
            dropout_rate: 0.5,
            epochs: 20,
            batch: 100,
            lr: 1e-3,
            prior_sigma: 1.0,
            rho_init: -5.0,
            mc_samples: 100,
        }
    }
}

/// Split sizing knobs, mirroring [`crate::data::SplitOptions`].
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub detector_in_fraction: Option<f64>,
    pub max_candidate_train: Option<usize>,
    pub max_detector_per_class: Option<usize>,
}

impl SplitConfig {
    pub fn to_options(&self) -> crate::data::SplitOptions {
        let mut o = crate::data::SplitOptions::default();
        if let Some(f) = self.detector_in_fraction {
            o.detector_in_fraction = f;
        }
        o.max_candidate_train = self.max_candidate_train;
        o.max_detector_per_class = self.max_detector_per_class;
        o
    }
}

/// Anomaly-detector settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            lambda_grid: crate::detector::LAMBDA_GRID.to_vec(),
            folds: crate::detector::CV_FOLDS,
        }
    }
}

/// Top-level experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory holding the four MNIST IDX files.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub protocols: Vec<Protocol>,
    pub variants: Vec<Variant>,
    pub master_seed: u64,
    /// Distinct class partitions per protocol.
    pub n_partitions: usize,
    /// Seeded repetitions per partition.
    pub repetitions: usize,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub mcmc: McmcConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.protocols.is_empty() {
            return Err(Error::Config("protocols must be non-empty".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("variants must be non-empty".into()));
        }
        let mut seen = self.protocols.clone();
        seen.dedup();
        if seen.len() != self.protocols.len() {
            return Err(Error::Config("duplicate protocol".into()));
        }
        if self.n_partitions == 0 || self.repetitions == 0 {
            return Err(Error::Config(
                "n_partitions and repetitions must be positive".into(),
            ));
        }
        let t = &self.training;
        if t.hidden.is_empty() || t.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&t.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                t.dropout_rate
            )));
        }
        if t.epochs == 0 || t.batch == 0 || t.mc_samples == 0 {
            return Err(Error::Config(
                "epochs, batch, and mc_samples must be positive".into(),
            ));
        }
        if t.lr <= 0.0 || t.prior_sigma <= 0.0 {
            return Err(Error::Config("lr and prior_sigma must be positive".into()));
        }
        if let Some(f) = self.split.detector_in_fraction {
            if !(0.0..1.0).contains(&f) || f == 0.0 {
                return Err(Error::Config(format!(
                    "detector_in_fraction {f} outside (0, 1)"
                )));
            }
        }
        if self.detector.lambda_grid.is_empty()
            || self.detector.lambda_grid.iter().any(|&l| l <= 0.0)
        {
            return Err(Error::Config("lambda_grid must be positive values".into()));
        }
        if self.detector.folds < 2 {
            return Err(Error::Config("need at least 2 CV folds".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| {
            Error::Config(format!("{}: {e}", path.display()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

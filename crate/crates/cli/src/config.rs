//! Experiment configuration: one JSON file drives the whole pipeline.
//!
//! Every seed is explicit — nothing reads the clock — so a config file fully
//! determines every output byte. Outputs embed the SHA-256 hash of the
//! config file so artifacts can be matched to the run that produced them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use fpa_core::augment::{AugmentConfig, RectangleConfig};
use fpa_core::data::NormalizationMode;
use fpa_core::model::LayerSpec;
use fpa_core::saliency::EstimatorKey;

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DatasetSource,
    pub normalization: NormalizationMode,
    /// Optional display names, one per class.
    #[serde(default)]
    pub class_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic {
        train_samples: usize,
        test_samples: usize,
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `[H, W, C]`.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_drop_epochs: Vec<usize>,
    pub lr_drop_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub fpa: AugmentConfig,
    #[serde(default)]
    pub rectangle: RectangleConfig,
}

fn default_ig_steps() -> usize {
    200
}
fn default_sg_samples() -> usize {
    15
}
fn default_sg_sigma() -> f32 {
    0.2
}
fn default_bootstrap_resamples() -> usize {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Estimator/reduction ids, e.g. `"ig_sum"`, `"sg-prime_sum"`, `"random"`.
    pub estimators: Vec<String>,
    #[serde(default = "default_ig_steps")]
    pub ig_steps: usize,
    #[serde(default = "default_sg_samples")]
    pub sg_samples: usize,
    #[serde(default = "default_sg_sigma")]
    pub sg_sigma: f32,
    /// Masking fractions; defaults to 0..=1 in 2% steps.
    #[serde(default)]
    pub fractions: Option<Vec<f64>>,
    /// Number of test samples to evaluate.
    pub samples: usize,
    #[serde(default = "default_bootstrap_resamples")]
    pub bootstrap_resamples: usize,
    /// Masking value used by the perturbation curves, in normalized space.
    #[serde(default)]
    pub mask_value: f32,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn estimator_keys(&self) -> Result<Vec<EstimatorKey>, CliError> {
        parse_estimators(&self.eval.estimators)
    }

    pub fn fraction_grid(&self) -> Vec<f64> {
        self.eval
            .fractions
            .clone()
            .unwrap_or_else(fpa_core::perturb::default_fraction_grid)
    }
}

pub fn parse_estimators(ids: &[String]) -> Result<Vec<EstimatorKey>, CliError> {
    if ids.is_empty() {
        return Err(CliError::Config("estimator list is empty".into()));
    }
    ids.iter()
        .map(|id| {
            EstimatorKey::parse(id).ok_or_else(|| {
                let known: Vec<&str> = EstimatorKey::ALL.iter().map(|k| k.id()).collect();
                CliError::Config(format!(
                    "unknown estimator id {id:?}; known ids: {}",
                    known.join(", ")
                ))
            })
        })
        .collect()
}

/// Parse and validate a config file; returns the config together with the
/// hex SHA-256 of the file bytes.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, String), CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config: ExperimentConfig = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    validate(&config)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let hash = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<String>();
    Ok((config, hash))
}

fn validate(config: &ExperimentConfig) -> Result<(), CliError> {
    let [h, w, c] = config.model.input;
    if h == 0 || w == 0 || c == 0 {
        return Err(CliError::Config("model.input dimensions must be positive".into()));
    }
    if let DatasetSource::Synthetic { train_samples, test_samples, .. } = &config.dataset.source {
        if *train_samples == 0 || *test_samples == 0 {
            return Err(CliError::Config("synthetic sample counts must be positive".into()));
        }
    }
    if config.eval.samples == 0 {
        return Err(CliError::Config("eval.samples must be positive".into()));
    }
    if let Some(names) = &config.dataset.class_names {
        let classes = match config.model.layers.last() {
            Some(LayerSpec::Dense { units }) => *units,
            _ => 0,
        };
        if names.len() != classes {
            return Err(CliError::Config(format!(
                "{} class names for a {classes}-class model",
                names.len()
            )));
        }
    }
    if config.eval.bootstrap_resamples == 0 {
        return Err(CliError::Config("eval.bootstrap_resamples must be positive".into()));
    }
    config.estimator_keys()?;
    fpa_core::perturb::validate_fractions(&config.fraction_grid())
        .map_err(|e| CliError::Config(e.to_string()))?;
    config
        .train
        .fpa
        .validate(h, w)
        .map_err(|e| CliError::Config(e.to_string()))?;
    config
        .train
        .rectangle
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    // reuse the core validation for the numeric training fields
    let train_cfg = crate::pipeline::train_config(config, crate::Arm::None, None);
    train_cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(())
}

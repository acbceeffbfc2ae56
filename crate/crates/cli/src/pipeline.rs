//! Shared pipeline steps used by the subcommands.

use fpa_core::data::{self, Dataset, Normalization};
use fpa_core::model::{Augmentation, TrainConfig};
use fpa_core::Error as CoreError;

use crate::config::{DatasetSource, ExperimentConfig};
use crate::error::{data_err, CliError};
use crate::Arm;

/// Raw (unnormalized) train/test splits per the config's dataset source.
pub fn load_raw_splits(config: &ExperimentConfig) -> Result<(Dataset, Dataset), CliError> {
    match &config.dataset.source {
        DatasetSource::Synthetic { train_samples, test_samples, seed } => {
            let train = data::gen_synthetic(
                *train_samples,
                fpa_core::seeds::derive(*seed, "train-split", 0),
            );
            let test = data::gen_synthetic(
                *test_samples,
                fpa_core::seeds::derive(*seed, "test-split", 0),
            );
            Ok((train, test))
        }
        DatasetSource::Idx { train_images, train_labels, test_images, test_labels } => {
            let train = data::load_idx(train_images, train_labels).map_err(data_err)?;
            let test = data::load_idx(test_images, test_labels).map_err(data_err)?;
            Ok((train, test))
        }
    }
}

/// Normalized splits: statistics are fitted on the training split only and
/// reused for the test split.
pub fn load_normalized_splits(
    config: &ExperimentConfig,
) -> Result<(Dataset, Dataset, Normalization), CliError> {
    let (train_raw, test_raw) = load_raw_splits(config)?;
    check_input_shape(config, &train_raw)?;
    let (train, norm) =
        data::normalize(&train_raw, config.dataset.normalization).map_err(data_err)?;
    let test = data::normalize_with(&test_raw, &norm).map_err(data_err)?;
    Ok((train, test, norm))
}

/// Normalize the test split with an already-fitted normalization (from a
/// checkpoint), for evaluation commands.
pub fn load_test_split(
    config: &ExperimentConfig,
    norm: &Normalization,
) -> Result<Dataset, CliError> {
    let (_, test_raw) = load_raw_splits(config)?;
    check_input_shape(config, &test_raw)?;
    data::normalize_with(&test_raw, norm).map_err(data_err)
}

fn check_input_shape(config: &ExperimentConfig, ds: &Dataset) -> Result<(), CliError> {
    let [h, w, c] = config.model.input;
    if ds.shape() != (h, w, c) {
        return Err(CliError::Data(format!(
            "dataset shape {:?} does not match model.input {:?}",
            ds.shape(),
            config.model.input
        )));
    }
    Ok(())
}

/// Assemble the core training config for one augmentation arm.
pub fn train_config(config: &ExperimentConfig, arm: Arm, seed_override: Option<u64>) -> TrainConfig {
    let t = &config.train;
    TrainConfig {
        epochs: t.epochs,
        lr: t.lr,
        momentum: t.momentum,
        weight_decay: t.weight_decay,
        lr_drop_epochs: t.lr_drop_epochs.clone(),
        lr_drop_factor: t.lr_drop_factor,
        batch_size: t.batch_size,
        seed: seed_override.unwrap_or(t.seed),
        augmentation: match arm {
            Arm::None => Augmentation::None,
            Arm::Fpa => Augmentation::Fpa(t.fpa.clone()),
            Arm::Rectangle => Augmentation::Rectangle(t.rectangle.clone()),
        },
    }
}

/// First `n` test samples as owned image tensors.
pub fn eval_images(test: &Dataset, n: usize) -> Result<Vec<fpa_core::Tensor>, CliError> {
    if n > test.len() {
        return Err(CliError::Data(format!(
            "eval.samples = {n} exceeds test split size {}",
            test.len()
        )));
    }
    Ok(test.samples()[..n].iter().map(|s| s.pixels.clone()).collect())
}

pub fn core_data(err: CoreError) -> CliError {
    data_err(err)
}

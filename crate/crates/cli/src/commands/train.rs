//! `fpa train`: train one augmentation arm and write the checkpoint plus
//! per-epoch metrics.

use std::path::{Path, PathBuf};

use fpa_core::checkpoint::Checkpoint;
use fpa_core::model;

use crate::config::load_config;
use crate::error::CliError;
use crate::outputs::{fmt_f64, write_text};
use crate::pipeline::{load_normalized_splits, train_config};
use crate::Arm;

pub struct TrainArtifacts {
    pub checkpoint_path: PathBuf,
    pub final_train_accuracy: f64,
    pub final_test_accuracy: f64,
}

pub fn cmd_train(
    config_path: &Path,
    arm: Arm,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<TrainArtifacts, CliError> {
    let (config, hash) = load_config(config_path)?;
    let (train_ds, test_ds, norm) = load_normalized_splits(&config)?;
    let cfg = train_config(&config, arm, seed_override);
    let [h, w, c] = config.model.input;

    let output = model::train((h, w, c), &config.model.layers, &cfg, &train_ds, Some(&test_ds))
        .map_err(|e| CliError::from_core(e, true))?;

    let mut checkpoint =
        Checkpoint::from_model(&output.model, norm, &hash, arm.as_str(), cfg.seed);
    checkpoint.class_names = config.dataset.class_names.clone();
    let checkpoint_path = out_dir.join(format!("model_{arm}.json"));
    if let Some(parent) = checkpoint_path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| crate::error::io_data_err("creating output dir", e))?;
    }
    checkpoint.save(&checkpoint_path).map_err(crate::pipeline::core_data)?;

    let mut csv = format!("# config_hash={hash} seed={} arm={arm}\n", cfg.seed);
    csv.push_str("epoch,lr,mean_loss,train_accuracy,val_accuracy\n");
    for m in &output.history {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            m.epoch,
            fmt_f64(m.lr),
            fmt_f64(m.mean_loss),
            fmt_f64(m.train_accuracy),
            m.val_accuracy.map(fmt_f64).unwrap_or_default(),
        ));
    }
    write_text(&out_dir.join(format!("train_metrics_{arm}.csv")), &csv)?;

    let (final_train, final_test) = match output.history.last() {
        Some(m) => (m.train_accuracy, m.val_accuracy.unwrap_or(f64::NAN)),
        None => {
            // zero epochs: evaluate the untouched initialization
            let train_acc = model::evaluate_accuracy(&output.model, &train_ds)
                .map_err(crate::pipeline::core_data)?;
            let test_acc = model::evaluate_accuracy(&output.model, &test_ds)
                .map_err(crate::pipeline::core_data)?;
            (train_acc, test_acc)
        }
    };
    println!(
        "trained arm {arm}: train accuracy {final_train:.4}, test accuracy {final_test:.4} -> {}",
        checkpoint_path.display()
    );
    Ok(TrainArtifacts {
        checkpoint_path,
        final_train_accuracy: final_train,
        final_test_accuracy: final_test,
    })
}

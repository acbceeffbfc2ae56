//! `fpa curves`: MIF/LIF perturbation curves per estimator plus the area
//! fidelity metric with bootstrap confidence intervals.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use fpa_core::checkpoint::Checkpoint;
use fpa_core::perturb::{aggregate_curves, bootstrap_ci, paired_curves, Direction, FidelityResult};
use fpa_core::seeds;

use crate::archive::read_archive;
use crate::config::load_config;
use crate::error::CliError;
use crate::outputs::{fmt_f64, write_text};
use crate::pipeline::{core_data, eval_images, load_test_split};

#[derive(Debug, Serialize)]
pub struct FidelityReport {
    pub config_hash: String,
    pub arm: String,
    pub eval_seed: u64,
    pub num_samples: usize,
    pub bootstrap_resamples: usize,
    pub mask_value: f32,
    pub fraction_points: usize,
    /// Samples skipped per estimator because the unperturbed logit was near zero.
    pub excluded: BTreeMap<String, usize>,
    pub results: BTreeMap<String, FidelityResult>,
}

pub fn cmd_curves(
    config_path: &Path,
    checkpoint_path: &Path,
    saliency_dir: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<FidelityReport, CliError> {
    let (config, hash) = load_config(config_path)?;
    let checkpoint = Checkpoint::load(checkpoint_path).map_err(core_data)?;
    if checkpoint.config_hash != hash {
        return Err(CliError::Data(format!(
            "checkpoint was produced by config {}, current config is {}",
            checkpoint.config_hash, hash
        )));
    }
    let model = checkpoint.to_model().map_err(core_data)?;
    let test = load_test_split(&config, &checkpoint.normalization)?;
    let images = eval_images(&test, config.eval.samples)?;
    let keys = config.estimator_keys()?;
    let fractions = config.fraction_grid();
    let eval_seed = seed_override.unwrap_or(config.eval.seed);
    let arm = checkpoint.arm.clone();

    let mut csv = format!(
        "# config_hash={hash} eval_seed={eval_seed} arm={arm} samples={}\n",
        images.len()
    );
    csv.push_str("fraction,mean_normalized_logit,direction,estimator,augmentation\n");
    let mut excluded = BTreeMap::new();
    let mut results: BTreeMap<String, FidelityResult> = BTreeMap::new();

    for key in keys {
        let (maps, sidecar) = read_archive(saliency_dir, key)?;
        if sidecar.config_hash != hash {
            return Err(CliError::Data(format!(
                "archive for {} was produced by config {}, current config is {hash}",
                key.id(),
                sidecar.config_hash
            )));
        }
        if sidecar.arm != arm {
            return Err(CliError::Data(format!(
                "archive for {} belongs to arm {}, checkpoint is {arm}",
                key.id(),
                sidecar.arm
            )));
        }
        if sidecar.num_samples != images.len() {
            return Err(CliError::Data(format!(
                "sample-count mismatch for {}: archive has {}, config asks for {}",
                key.id(),
                sidecar.num_samples,
                images.len()
            )));
        }
        let paired =
            paired_curves(&model, &images, &maps, &fractions, config.eval.mask_value)
                .map_err(core_data)?;
        if paired.mif.len() < 2 {
            return Err(CliError::Data(format!(
                "estimator {}: only {} usable samples after exclusions",
                key.id(),
                paired.mif.len()
            )));
        }
        let mif = aggregate_curves(&fractions, Direction::Mif, paired.mif).map_err(core_data)?;
        let lif = aggregate_curves(&fractions, Direction::Lif, paired.lif).map_err(core_data)?;
        let fidelity = bootstrap_ci(
            &lif,
            &mif,
            config.eval.bootstrap_resamples,
            seeds::derive(eval_seed, key.id(), 0),
        )
        .map_err(core_data)?;

        for (curve, direction) in [(&mif, "mif"), (&lif, "lif")] {
            for (f, v) in curve.fractions.iter().zip(&curve.mean) {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    fmt_f64(*f),
                    fmt_f64(*v),
                    direction,
                    key.id(),
                    arm
                ));
            }
        }
        excluded.insert(key.id().to_string(), paired.excluded);
        results.insert(key.id().to_string(), fidelity);
    }

    write_text(&out_dir.join(format!("curves_{arm}.csv")), &csv)?;
    let report = FidelityReport {
        config_hash: hash,
        arm: arm.clone(),
        eval_seed,
        num_samples: images.len(),
        bootstrap_resamples: config.eval.bootstrap_resamples,
        mask_value: config.eval.mask_value,
        fraction_points: fractions.len(),
        excluded,
        results,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Data(format!("encoding fidelity report: {e}")))?;
    write_text(&out_dir.join(format!("fidelity_{arm}.json")), &json)?;

    println!("fidelity A (area between LIF and MIF curves), arm {arm}:");
    for (id, r) in &report.results {
        let half = (r.ci_high - r.ci_low) / 2.0;
        println!("  {:>14}  {:6.1} +/- {:.1}", id, r.a, half);
    }
    Ok(report)
}

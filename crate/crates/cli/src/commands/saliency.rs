//! `fpa saliency`: compute the configured estimator/reduction maps for the
//! test subset and archive them.
//!
//! Keys sharing a 3D estimator (e.g. `ig_sum` and `ig_abs`) reuse one map
//! per sample, and the two smoothed estimators share their noise draws,
//! identical to computing each key in isolation with the same seeds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fpa_core::checkpoint::Checkpoint;
use fpa_core::saliency::{
    ig_baseline, integrated_gradients, predicted_class, random_saliency, reduce, smoothed_pair,
    vanilla_gradient, EstimatorConfig, EstimatorId, EstimatorKey, ReductionMode, SaliencyMap2D,
    SaliencyMap3D,
};
use fpa_core::{seeds, Tensor};

use crate::archive::{write_archive, Sidecar};
use crate::config::{load_config, parse_estimators};
use crate::error::CliError;
use crate::pipeline::{core_data, eval_images, load_test_split};

fn reduce_for_key(
    key: EstimatorKey,
    map3d: &SaliencyMap3D,
    image: &Tensor,
) -> Result<SaliencyMap2D, CliError> {
    let mode = key.reduction().expect("random handled separately");
    let needs_input =
        matches!(mode, ReductionMode::InputProductSum | ReductionMode::InputProductAbsSum);
    reduce(map3d, mode, needs_input.then_some(image)).map_err(core_data)
}

pub fn cmd_saliency(
    config_path: &Path,
    checkpoint_path: &Path,
    estimators_override: Option<&[String]>,
    samples_override: Option<usize>,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<PathBuf, CliError> {
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
    let n = samples_override.unwrap_or(config.eval.samples);
    let images = eval_images(&test, n)?;
    let keys = match estimators_override {
        Some(ids) => parse_estimators(ids)?,
        None => config.estimator_keys()?,
    };
    let est_cfg = EstimatorConfig {
        ig_steps: config.eval.ig_steps,
        sg_samples: config.eval.sg_samples,
        sg_sigma: config.eval.sg_sigma,
    };
    est_cfg.validate().map_err(crate::error::config_err)?;
    let eval_seed = seed_override.unwrap_or(config.eval.seed);
    let baseline = ig_baseline(&checkpoint.normalization, model.input_shape());

    let classes: Vec<usize> = images
        .iter()
        .map(|img| predicted_class(&model, img).map(|(c, _)| c))
        .collect::<Result<_, _>>()
        .map_err(core_data)?;

    let dir = out_dir.join(format!("saliency_{}", checkpoint.arm));
    let (h, w, _) = model.input_shape();
    let mut maps_by_key: BTreeMap<EstimatorKey, Vec<SaliencyMap2D>> =
        keys.iter().map(|&k| (k, Vec::with_capacity(images.len()))).collect();
    let wants_estimator = |est: EstimatorId| keys.iter().any(|k| k.estimator() == Some(est));

    for (i, image) in images.iter().enumerate() {
        let class = classes[i];
        let mut by_estimator: BTreeMap<&'static str, SaliencyMap3D> = BTreeMap::new();
        if wants_estimator(EstimatorId::Vg) {
            let mut m = vanilla_gradient(&model, image, class).map_err(core_data)?;
            m.sample_id = i;
            by_estimator.insert("vg", m);
        }
        if wants_estimator(EstimatorId::Ig) {
            let mut m =
                integrated_gradients(&model, image, class, &baseline, est_cfg.ig_steps)
                    .map_err(core_data)?;
            m.sample_id = i;
            by_estimator.insert("ig", m);
        }
        if wants_estimator(EstimatorId::Sg) || wants_estimator(EstimatorId::SqSg) {
            let mut rng = seeds::rng(eval_seed, "smoothgrad", i as u64);
            let (mut sg, mut sq) =
                smoothed_pair(&model, image, class, &est_cfg, &mut rng).map_err(core_data)?;
            sg.sample_id = i;
            sq.sample_id = i;
            by_estimator.insert("sg", sg);
            by_estimator.insert("sq-sg", sq);
        }
        for &key in &keys {
            let map2d = match key.estimator() {
                None => {
                    let mut rng = seeds::rng(eval_seed, "random-saliency", i as u64);
                    random_saliency(h, w, &mut rng)
                }
                Some(est) => {
                    let tag = match est {
                        EstimatorId::Vg => "vg",
                        EstimatorId::Ig => "ig",
                        EstimatorId::Sg => "sg",
                        EstimatorId::SqSg => "sq-sg",
                    };
                    reduce_for_key(key, &by_estimator[tag], image)?
                }
            };
            maps_by_key.get_mut(&key).expect("key present").push(map2d);
        }
    }

    for &key in &keys {
        let maps = &maps_by_key[&key];
        let sidecar = Sidecar {
            estimator: key.id().to_string(),
            display_name: key.display_name().to_string(),
            signedness: maps[0].signedness,
            reduction: maps[0].reduction,
            num_samples: maps.len(),
            height: h,
            width: w,
            classes: classes.clone(),
            eval_seed,
            ig_steps: est_cfg.ig_steps,
            sg_samples: est_cfg.sg_samples,
            sg_sigma: est_cfg.sg_sigma,
            config_hash: hash.clone(),
            arm: checkpoint.arm.clone(),
        };
        write_archive(&dir, key, maps, &sidecar)?;
        println!("archived {} maps for {}", maps.len(), key.id());
    }
    println!("saliency archive: {}", dir.display());
    Ok(dir)
}

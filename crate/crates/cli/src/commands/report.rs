//! `fpa report`: per-sample diagnostics — a percentile-truncated heatmap,
//! the LIF-ranked score series aligned with the per-rank logit trace, and
//! summary statistics of the score distribution.

use std::path::Path;

use serde::Serialize;

use fpa_core::checkpoint::Checkpoint;
use fpa_core::model::argmax;
use fpa_core::perturb::{rank_pixels, ranked_score_series, NEAR_ZERO_LOGIT};
use fpa_core::saliency::EstimatorKey;
use fpa_core::Tensor;

use crate::archive::read_archive;
use crate::config::load_config;
use crate::error::CliError;
use crate::outputs::{fmt_f32, fmt_f64, write_text};
use crate::pipeline::{core_data, eval_images, load_test_split};

#[derive(Debug, Serialize)]
struct ReportStats {
    config_hash: String,
    arm: String,
    estimator: String,
    sample_id: usize,
    class: usize,
    percentile: f64,
    thresholds: Thresholds,
    /// Fraction of pixels with a strictly positive raw score.
    positive_fraction: f64,
    negative_fraction: f64,
    /// Fractions of pixels surviving truncation on each side.
    truncated_positive_fraction: f64,
    truncated_negative_fraction: f64,
    score_min: f32,
    score_max: f32,
}

#[derive(Debug, Serialize)]
struct Thresholds {
    high_keep: f32,
    high_clip: f32,
    low_keep: f32,
    low_clip: f32,
}

/// Order-statistic percentile. The high side rounds the rank up and the low
/// side rounds it down, so the strictly-beyond survivor counts stay within
/// `(100 - percent)%` of the pixels on each side.
fn percentile_of(sorted: &[f32], percent: f64, upper: bool) -> f32 {
    let h = (sorted.len() - 1) as f64 * (percent / 100.0);
    let idx = if upper { h.ceil() } else { h.floor() } as usize;
    sorted[idx]
}

/// Keep only scores strictly above the `percent`-th percentile (clipped at
/// the percentile halfway to 100) and strictly below the mirrored low
/// percentile (clipped symmetrically); everything else becomes zero.
fn truncate_map(scores: &Tensor, percent: f64) -> (Tensor, Thresholds) {
    let mut sorted: Vec<f32> = scores.data().to_vec();
    sorted.sort_by(f32::total_cmp);
    let thresholds = Thresholds {
        high_keep: percentile_of(&sorted, percent, true),
        high_clip: percentile_of(&sorted, (100.0 + percent) / 2.0, true),
        low_keep: percentile_of(&sorted, 100.0 - percent, false),
        low_clip: percentile_of(&sorted, (100.0 - percent) / 2.0, false),
    };
    let truncated = scores.map(|v| {
        if v > thresholds.high_keep {
            v.min(thresholds.high_clip)
        } else if v < thresholds.low_keep {
            v.max(thresholds.low_clip)
        } else {
            0.0
        }
    });
    (truncated, thresholds)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_report(
    config_path: &Path,
    checkpoint_path: &Path,
    saliency_dir: &Path,
    estimator_id: &str,
    sample_id: usize,
    percentile: f64,
    out_dir: &Path,
) -> Result<(), CliError> {
    if !(percentile > 50.0 && percentile <= 100.0) {
        return Err(CliError::Config(format!(
            "percentile must lie in (50, 100], got {percentile}"
        )));
    }
    let key = EstimatorKey::parse(estimator_id).ok_or_else(|| {
        CliError::Config(format!("unknown estimator id {estimator_id:?}"))
    })?;
    let (config, hash) = load_config(config_path)?;
    let checkpoint = Checkpoint::load(checkpoint_path).map_err(core_data)?;
    if checkpoint.config_hash != hash {
        return Err(CliError::Data(format!(
            "checkpoint was produced by config {}, current config is {hash}",
            checkpoint.config_hash
        )));
    }
    let model = checkpoint.to_model().map_err(core_data)?;
    let test = load_test_split(&config, &checkpoint.normalization)?;
    let images = eval_images(&test, config.eval.samples)?;

    let (maps, sidecar) = read_archive(saliency_dir, key)?;
    if sidecar.config_hash != hash {
        return Err(CliError::Data(format!(
            "archive was produced by config {}, current config is {hash}",
            sidecar.config_hash
        )));
    }
    if sample_id >= maps.len() {
        return Err(CliError::Data(format!(
            "sample {sample_id} not in archive ({} samples)",
            maps.len()
        )));
    }
    let map = &maps[sample_id];
    let image = &images[sample_id];
    let (h, w) = (sidecar.height, sidecar.width);

    // (a) truncated heatmap as a CSV grid
    let (truncated, thresholds) = truncate_map(&map.scores, percentile);
    let mut heatmap_csv = format!(
        "# config_hash={hash} arm={} estimator={} sample={sample_id} percentile={percentile}\n",
        sidecar.arm,
        key.id()
    );
    for row in 0..h {
        let cells: Vec<String> =
            (0..w).map(|col| fmt_f32(truncated.at(&[row, col]))).collect();
        heatmap_csv.push_str(&cells.join(","));
        heatmap_csv.push('\n');
    }

    // (b) LIF-ranked scores aligned with the logit after masking each pixel
    let logits = model.forward_single(image).map_err(core_data)?;
    let class = argmax(&logits);
    let s0 = logits[class];
    if s0.abs() < NEAR_ZERO_LOGIT {
        return Err(CliError::Data(format!(
            "sample {sample_id}: unperturbed logit {s0} too close to zero"
        )));
    }
    let lif = rank_pixels(map).reversed();
    let series = ranked_score_series(map, &lif);
    let mut series_csv = format!(
        "# config_hash={hash} arm={} estimator={} sample={sample_id} class={class}\n",
        sidecar.arm,
        key.id()
    );
    series_csv.push_str("rank,fraction,row,col,score,normalized_logit\n");
    let (_, _, channels) = model.input_shape();
    let mut working = image.clone();
    for (rank, (&pixel, &score)) in lif.order.iter().zip(&series).enumerate() {
        let base = pixel * channels;
        for ch in 0..channels {
            working.data_mut()[base + ch] = config.eval.mask_value;
        }
        let logit = model.forward_single(&working).map_err(core_data)?[class];
        series_csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            rank + 1,
            fmt_f64((rank + 1) as f64 / (h * w) as f64),
            pixel / w,
            pixel % w,
            fmt_f32(score),
            fmt_f64(logit as f64 / s0 as f64),
        ));
    }

    // (c) score-distribution statistics
    let total = (h * w) as f64;
    let count = |pred: &dyn Fn(f32) -> bool, data: &[f32]| {
        data.iter().filter(|&&v| pred(v)).count() as f64 / total
    };
    let stats = ReportStats {
        config_hash: hash.clone(),
        arm: sidecar.arm.clone(),
        estimator: key.id().to_string(),
        sample_id,
        class,
        percentile,
        thresholds,
        positive_fraction: count(&|v| v > 0.0, map.scores.data()),
        negative_fraction: count(&|v| v < 0.0, map.scores.data()),
        truncated_positive_fraction: count(&|v| v > 0.0, truncated.data()),
        truncated_negative_fraction: count(&|v| v < 0.0, truncated.data()),
        score_min: map.scores.data().iter().cloned().fold(f32::INFINITY, f32::min),
        score_max: map.scores.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max),
    };

    let dir = out_dir.join(format!("report_{}_{sample_id}", key.id()));
    write_text(&dir.join("heatmap.csv"), &heatmap_csv)?;
    write_text(&dir.join("series.csv"), &series_csv)?;
    let json = serde_json::to_string_pretty(&stats)
        .map_err(|e| CliError::Data(format!("encoding stats: {e}")))?;
    write_text(&dir.join("stats.json"), &json)?;
    println!("report bundle: {}", dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_keeps_only_the_tails() {
        // 100 values 0..99; at percentile 90 only values > p90 or < p10 survive
        let scores = Tensor::from_fn(vec![10, 10], |i| i as f32 - 49.5);
        let (truncated, t) = truncate_map(&scores, 90.0);
        let nonzero = truncated.data().iter().filter(|&&v| v != 0.0).count();
        assert!(nonzero <= 20, "nonzero {nonzero}");
        assert!(t.high_clip >= t.high_keep);
        assert!(t.low_clip <= t.low_keep);
        for &v in truncated.data() {
            assert!(v == 0.0 || v >= t.low_clip && v <= t.high_clip);
        }
    }

    #[test]
    fn truncation_at_100_is_all_zero() {
        let scores = Tensor::from_fn(vec![4, 4], |i| (i as f32).sin());
        let (truncated, _) = truncate_map(&scores, 100.0);
        assert!(truncated.data().iter().all(|&v| v == 0.0));
    }
}

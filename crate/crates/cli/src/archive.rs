//! Saliency archives: one flat little-endian f32 file of 2D maps per
//! estimator (`<id>.bin`, laid out `[num_samples, H, W]`) plus a JSON
//! sidecar with everything needed to interpret and reproduce it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fpa_core::saliency::{EstimatorKey, ReductionMode, SaliencyMap2D, Signedness};
use fpa_core::Tensor;

use crate::error::{io_data_err, CliError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub estimator: String,
    pub display_name: String,
    pub signedness: Signedness,
    pub reduction: Option<ReductionMode>,
    pub num_samples: usize,
    pub height: usize,
    pub width: usize,
    /// Predicted class per sample on the unperturbed input.
    pub classes: Vec<usize>,
    pub eval_seed: u64,
    pub ig_steps: usize,
    pub sg_samples: usize,
    pub sg_sigma: f32,
    pub config_hash: String,
    pub arm: String,
}

fn bin_path(dir: &Path, key: EstimatorKey) -> PathBuf {
    dir.join(format!("{}.bin", key.id()))
}

fn sidecar_path(dir: &Path, key: EstimatorKey) -> PathBuf {
    dir.join(format!("{}.json", key.id()))
}

pub fn write_archive(
    dir: &Path,
    key: EstimatorKey,
    maps: &[SaliencyMap2D],
    sidecar: &Sidecar,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_data_err("creating archive dir", e))?;
    let mut bytes = Vec::with_capacity(maps.len() * sidecar.height * sidecar.width * 4);
    for map in maps {
        for &v in map.scores.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(bin_path(dir, key), bytes).map_err(|e| io_data_err("writing archive", e))?;
    let json = serde_json::to_string_pretty(sidecar)
        .map_err(|e| CliError::Data(format!("encoding sidecar: {e}")))?;
    fs::write(sidecar_path(dir, key), json).map_err(|e| io_data_err("writing sidecar", e))?;
    Ok(())
}

pub fn read_archive(
    dir: &Path,
    key: EstimatorKey,
) -> Result<(Vec<SaliencyMap2D>, Sidecar), CliError> {
    let sidecar_bytes = fs::read(sidecar_path(dir, key))
        .map_err(|e| io_data_err(&format!("reading sidecar for {}", key.id()), e))?;
    let sidecar: Sidecar = serde_json::from_slice(&sidecar_bytes)
        .map_err(|e| CliError::Data(format!("parsing sidecar for {}: {e}", key.id())))?;
    if sidecar.estimator != key.id() {
        return Err(CliError::Data(format!(
            "sidecar estimator {:?} does not match file {}",
            sidecar.estimator,
            key.id()
        )));
    }
    let bytes = fs::read(bin_path(dir, key))
        .map_err(|e| io_data_err(&format!("reading archive for {}", key.id()), e))?;
    let per_map = sidecar.height * sidecar.width;
    let expected = sidecar.num_samples * per_map * 4;
    if bytes.len() != expected {
        return Err(CliError::Data(format!(
            "archive for {}: expected {expected} bytes, found {}",
            key.id(),
            bytes.len()
        )));
    }
    if sidecar.classes.len() != sidecar.num_samples {
        return Err(CliError::Data(format!(
            "archive for {}: {} classes for {} samples",
            key.id(),
            sidecar.classes.len(),
            sidecar.num_samples
        )));
    }
    let mut maps = Vec::with_capacity(sidecar.num_samples);
    for s in 0..sidecar.num_samples {
        let mut data = Vec::with_capacity(per_map);
        for i in 0..per_map {
            let off = (s * per_map + i) * 4;
            data.push(f32::from_le_bytes([
                bytes[off],
                bytes[off + 1],
                bytes[off + 2],
                bytes[off + 3],
            ]));
        }
        let scores = Tensor::new(vec![sidecar.height, sidecar.width], data)
            .map_err(|e| CliError::Data(e.to_string()))?;
        maps.push(SaliencyMap2D {
            scores,
            signedness: sidecar.signedness,
            reduction: sidecar.reduction,
            estimator: key.estimator(),
        });
    }
    Ok((maps, sidecar))
}

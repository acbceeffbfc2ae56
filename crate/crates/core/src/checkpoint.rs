//! Versioned JSON model checkpoints.
//!
//! A checkpoint carries everything evaluation needs to reproduce the
//! training-time input space: layer specs, parameter tensors, the fitted
//! normalization, and the seeds/hash identifying the run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::model::{LayerSpec, Model};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TryFrom<TensorData> for Tensor {
    type Error = Error;
    fn try_from(t: TensorData) -> Result<Tensor> {
        Tensor::new(t.shape, t.data)
    }
}

impl From<&Tensor> for TensorData {
    fn from(t: &Tensor) -> TensorData {
        TensorData { shape: t.shape().to_vec(), data: t.data().to_vec() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub arm: String,
    pub input_shape: (usize, usize, usize),
    pub num_classes: usize,
    #[serde(default)]
    pub class_names: Option<Vec<String>>,
    pub layers: Vec<LayerSpec>,
    pub params: BTreeMap<String, TensorData>,
    pub normalization: Normalization,
    pub train_seed: u64,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        normalization: Normalization,
        config_hash: &str,
        arm: &str,
        train_seed: u64,
    ) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            arm: arm.to_string(),
            input_shape: model.input_shape(),
            num_classes: model.num_classes(),
            class_names: None,
            layers: model.layers().to_vec(),
            params: model.params().iter().map(|(k, v)| (k.clone(), v.into())).collect(),
            normalization,
            train_seed,
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        let mut params = BTreeMap::new();
        for (name, data) in &self.params {
            params.insert(name.clone(), Tensor::try_from(data.clone())?);
        }
        let model = Model::from_parts(self.input_shape, self.layers.clone(), params)?;
        if model.num_classes() != self.num_classes {
            return Err(Error::Checkpoint(format!(
                "checkpoint claims {} classes, layers produce {}",
                self.num_classes,
                model.num_classes()
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_parameters_exactly() {
        let layers = vec![
            LayerSpec::Conv { out_channels: 2, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::Pool { window: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 3 },
        ];
        let model = Model::build((4, 4, 1), &layers, 77).unwrap();
        let ckpt = Checkpoint::from_model(
            &model,
            Normalization::Range { raw_max: 1.0 },
            "deadbeef",
            "fpa",
            42,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let restored = loaded.to_model().unwrap();
        for (a, b) in model.params().values().zip(restored.params().values()) {
            assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        assert_eq!(loaded.arm, "fpa");
        assert_eq!(loaded.train_seed, 42);
        assert_eq!(loaded.normalization, Normalization::Range { raw_max: 1.0 });
    }

    #[test]
    fn corrupt_shape_is_rejected() {
        let layers = vec![LayerSpec::Flatten, LayerSpec::Dense { units: 2 }];
        let model = Model::build((2, 2, 1), &layers, 0).unwrap();
        let mut ckpt = Checkpoint::from_model(
            &model,
            Normalization::Range { raw_max: 1.0 },
            "x",
            "none",
            0,
        );
        ckpt.params.get_mut("layer1.weight").unwrap().shape = vec![3, 2];
        assert!(ckpt.to_model().is_err());
    }
}

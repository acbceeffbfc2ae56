//! Desk-scale classifiers and the SGD-with-momentum training loop.
//!
//! Models are plain layer chains (conv / relu / avg-pool / flatten / dense)
//! producing pre-softmax logits; no residual connections or normalization
//! layers. Training applies horizontal flips always and the configured
//! masking augmentation afterwards, so augmented inputs match the conditions
//! later used by perturbation-based evaluation.

use std::collections::BTreeMap;

use rand_distr::StandardNormal;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{fpa_augment_batch, rectangle_erase_batch, AugmentConfig, RectangleConfig};
use crate::data::{batch_iter, Batch, Dataset};
use crate::error::{Error, Result};
use crate::seeds;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// One layer of the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Pool {
        window: usize,
    },
    Flatten,
    Dense {
        units: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ChainShape {
    Spatial(usize, usize, usize),
    Flat(usize),
}

/// Verify that the layer chain composes on the given input and return the
/// shape after each layer.
fn chain_shapes(
    input_shape: (usize, usize, usize),
    layers: &[LayerSpec],
) -> Result<Vec<ChainShape>> {
    let (h, w, c) = input_shape;
    let mut cur = ChainShape::Spatial(h, w, c);
    let mut out = Vec::with_capacity(layers.len());
    for (idx, layer) in layers.iter().enumerate() {
        cur = match (layer, cur) {
            (LayerSpec::Conv { out_channels, kernel, stride, padding }, ChainShape::Spatial(h, w, _c)) => {
                if *stride == 0 || *kernel == 0 || *out_channels == 0 {
                    return Err(Error::InvalidConfig(format!(
                        "layer {idx}: conv hyperparameters must be positive"
                    )));
                }
                if h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                    return Err(Error::InvalidConfig(format!(
                        "layer {idx}: kernel {kernel} exceeds padded input {h}x{w}"
                    )));
                }
                ChainShape::Spatial(
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                    *out_channels,
                )
            }
            (LayerSpec::Relu, shape) => shape,
            (LayerSpec::Pool { window }, ChainShape::Spatial(h, w, c)) => {
                if *window == 0 || h % window != 0 || w % window != 0 {
                    return Err(Error::InvalidConfig(format!(
                        "layer {idx}: pool window {window} does not divide {h}x{w}"
                    )));
                }
                ChainShape::Spatial(h / window, w / window, c)
            }
            (LayerSpec::Flatten, ChainShape::Spatial(h, w, c)) => ChainShape::Flat(h * w * c),
            (LayerSpec::Dense { units }, ChainShape::Flat(_)) if *units == 0 => {
                return Err(Error::InvalidConfig(format!("layer {idx}: dense units must be positive")));
            }
            (LayerSpec::Dense { units }, ChainShape::Flat(_)) => ChainShape::Flat(*units),
            (layer, cur) => {
                return Err(Error::InvalidConfig(format!(
                    "layer {idx}: {layer:?} cannot follow {cur:?}"
                )));
            }
        };
        out.push(cur);
    }
    match out.last() {
        Some(ChainShape::Flat(_)) if matches!(layers.last(), Some(LayerSpec::Dense { .. })) => {
            Ok(out)
        }
        _ => Err(Error::InvalidConfig(
            "model must end with a dense layer producing the class logits".into(),
        )),
    }
}

/// A classifier: layer chain plus named parameter tensors.
#[derive(Debug, Clone)]
pub struct Model {
    input_shape: (usize, usize, usize),
    layers: Vec<LayerSpec>,
    params: BTreeMap<String, Tensor>,
    num_classes: usize,
}

impl Model {
    /// Build a model with He-style initialization (weights scaled by
    /// `sqrt(2 / fan_in)`, biases zero), deterministic for a given seed.
    pub fn build(
        input_shape: (usize, usize, usize),
        layers: &[LayerSpec],
        init_seed: u64,
    ) -> Result<Model> {
        let shapes = chain_shapes(input_shape, layers)?;
        let num_classes = match shapes.last() {
            Some(ChainShape::Flat(n)) => *n,
            _ => unreachable!("chain_shapes enforces a dense tail"),
        };
        let mut rng = seeds::rng(init_seed, "model-init", 0);
        let mut params = BTreeMap::new();
        let mut cur = ChainShape::Spatial(input_shape.0, input_shape.1, input_shape.2);
        for (idx, layer) in layers.iter().enumerate() {
            match (layer, cur) {
                (LayerSpec::Conv { out_channels, kernel, .. }, ChainShape::Spatial(_, _, cin)) => {
                    let fan_in = kernel * kernel * cin;
                    let scale = (2.0 / fan_in as f64).sqrt();
                    let weight = Tensor::from_fn(vec![*kernel, *kernel, cin, *out_channels], |_| {
                        let z: f64 = rng.sample(StandardNormal);
                        (z * scale) as f32
                    });
                    params.insert(format!("layer{idx}.weight"), weight);
                    params.insert(format!("layer{idx}.bias"), Tensor::zeros(vec![*out_channels]));
                }
                (LayerSpec::Dense { units }, ChainShape::Flat(fan_in)) => {
                    let scale = (2.0 / fan_in as f64).sqrt();
                    let weight = Tensor::from_fn(vec![fan_in, *units], |_| {
                        let z: f64 = rng.sample(StandardNormal);
                        (z * scale) as f32
                    });
                    params.insert(format!("layer{idx}.weight"), weight);
                    params.insert(format!("layer{idx}.bias"), Tensor::zeros(vec![*units]));
                }
                _ => {}
            }
            cur = shapes[idx];
        }
        Ok(Model { input_shape, layers: layers.to_vec(), params, num_classes })
    }

    /// Assemble a model from existing parameters (checkpoint restore).
    pub fn from_parts(
        input_shape: (usize, usize, usize),
        layers: Vec<LayerSpec>,
        params: BTreeMap<String, Tensor>,
    ) -> Result<Model> {
        let reference = Model::build(input_shape, &layers, 0)?;
        for (name, tensor) in reference.params.iter() {
            let got = params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if got.shape() != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {:?} does not match layer spec {:?}",
                    got.shape(),
                    tensor.shape()
                )));
            }
        }
        if params.len() != reference.params.len() {
            return Err(Error::Checkpoint("unexpected extra parameters".into()));
        }
        Ok(Model { input_shape, layers, params, num_classes: reference.num_classes })
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    /// Replace one parameter tensor, keeping its shape.
    pub fn set_param(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))?;
        if slot.shape() != tensor.shape() {
            return Err(Error::ShapeMismatch {
                op: "set-param",
                detail: format!("{name}: {:?} vs {:?}", tensor.shape(), slot.shape()),
            });
        }
        *slot = tensor;
        Ok(())
    }

    /// Record the forward pass on `tape`; returns the input and logits nodes.
    pub fn trace_logits(&self, tape: &mut Tape, batch: Tensor) -> Result<(NodeId, NodeId)> {
        let s = batch.shape().to_vec();
        let (h, w, c) = self.input_shape;
        if s.len() != 4 || (s[1], s[2], s[3]) != (h, w, c) {
            return Err(Error::ShapeMismatch {
                op: "forward",
                detail: format!("batch {s:?} vs input {h}x{w}x{c}"),
            });
        }
        let input = tape.input(batch);
        let mut node = input;
        for (idx, layer) in self.layers.iter().enumerate() {
            node = match layer {
                LayerSpec::Conv { stride, padding, .. } => {
                    let weight = tape.param(
                        &format!("layer{idx}.weight"),
                        self.params[&format!("layer{idx}.weight")].clone(),
                    );
                    let bias = tape.param(
                        &format!("layer{idx}.bias"),
                        self.params[&format!("layer{idx}.bias")].clone(),
                    );
                    let conv = tape.conv2d(node, weight, *stride, *padding)?;
                    tape.add_bias(conv, bias)?
                }
                LayerSpec::Relu => tape.relu(node),
                LayerSpec::Pool { window } => tape.avg_pool(node, *window)?,
                LayerSpec::Flatten => tape.flatten(node)?,
                LayerSpec::Dense { .. } => {
                    let weight = tape.param(
                        &format!("layer{idx}.weight"),
                        self.params[&format!("layer{idx}.weight")].clone(),
                    );
                    let bias = tape.param(
                        &format!("layer{idx}.bias"),
                        self.params[&format!("layer{idx}.bias")].clone(),
                    );
                    let mm = tape.matmul(node, weight)?;
                    tape.add_bias(mm, bias)?
                }
            };
        }
        Ok((input, node))
    }

    /// Pre-softmax logits for a `[K, H, W, C]` batch.
    pub fn forward_logits(&self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (_, logits) = self.trace_logits(&mut tape, batch.clone())?;
        Ok(tape.value(logits).clone())
    }

    /// Logits for a single `[H, W, C]` image.
    pub fn forward_single(&self, image: &Tensor) -> Result<Vec<f32>> {
        let s = image.shape().to_vec();
        if s.len() != 3 {
            return Err(Error::ShapeMismatch {
                op: "forward",
                detail: format!("expected [H,W,C] image, got {s:?}"),
            });
        }
        let batch = image.reshaped(vec![1, s[0], s[1], s[2]])?;
        Ok(self.forward_logits(&batch)?.into_data())
    }
}

/// Argmax with ties broken toward the smallest class index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Training augmentation arm.
#[derive(Debug, Clone, PartialEq)]
pub enum Augmentation {
    None,
    Fpa(AugmentConfig),
    Rectangle(RectangleConfig),
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_drop_epochs: Vec<usize>,
    pub lr_drop_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub augmentation: Augmentation,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::InvalidConfig(format!("lr = {} must be > 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum = {} outside [0, 1)",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("weight_decay must be >= 0".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.lr_drop_factor <= 0.0 {
            return Err(Error::InvalidConfig("lr_drop_factor must be > 0".into()));
        }
        Ok(())
    }
}

/// One SGD-with-momentum update:
/// `v <- momentum * v + grad + weight_decay * param; param <- param - lr * v`.
/// Weight decay is the coupled L2 term and applies to all parameters,
/// biases included.
pub fn sgd_momentum_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    velocity: &mut BTreeMap<String, Tensor>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    for (name, param) in params.iter_mut() {
        let grad = grads
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing gradient for {name}")))?;
        if grad.shape() != param.shape() {
            return Err(Error::ShapeMismatch {
                op: "sgd-step",
                detail: format!("{name}: grad {:?} vs param {:?}", grad.shape(), param.shape()),
            });
        }
        let vel = velocity
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(param.shape().to_vec()));
        let pd = param.data_mut();
        let vd = vel.data_mut();
        for i in 0..pd.len() {
            let v = momentum * vd[i] as f64
                + grad.data()[i] as f64
                + weight_decay * pd[i] as f64;
            vd[i] = v as f32;
            pd[i] = (pd[i] as f64 - lr * v) as f32;
        }
    }
    Ok(())
}

/// Per-epoch training metrics.
#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Model,
    pub history: Vec<EpochMetrics>,
}

const DIVERGENCE_LOSS_LIMIT: f64 = 1e4;

fn flip_batch(batch: &mut Batch, rng: &mut impl Rng) {
    let s = batch.images.shape().to_vec();
    let (k, h, w, c) = (s[0], s[1], s[2], s[3]);
    let data = batch.images.data_mut();
    for sample in 0..k {
        if !rng.gen_bool(0.5) {
            continue;
        }
        for row in 0..h {
            for col in 0..w / 2 {
                for ch in 0..c {
                    let a = ((sample * h + row) * w + col) * c + ch;
                    let b = ((sample * h + row) * w + (w - 1 - col)) * c + ch;
                    data.swap(a, b);
                }
            }
        }
    }
}

/// Train a model from scratch: seeded mini-batch SGD with horizontal flips
/// always on and the configured masking augmentation applied afterwards.
/// Aborts with [`Error::Divergence`] when the loss becomes non-finite or
/// exceeds `1e4`.
pub fn train(
    input_shape: (usize, usize, usize),
    layers: &[LayerSpec],
    cfg: &TrainConfig,
    train_ds: &Dataset,
    val_ds: Option<&Dataset>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if train_ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = Model::build(input_shape, layers, seeds::derive(cfg.seed, "init", 0))?;
    let mut velocity: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut lr = cfg.lr;

    for epoch in 0..cfg.epochs {
        if cfg.lr_drop_epochs.contains(&epoch) {
            lr /= cfg.lr_drop_factor;
        }
        let mut flip_rng = seeds::rng(cfg.seed, "flip", epoch as u64);
        let mut aug_rng = seeds::rng(cfg.seed, "augment", epoch as u64);
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;

        for (batch_idx, mut batch) in
            batch_iter(train_ds, cfg.batch_size, seeds::derive(cfg.seed, "shuffle", epoch as u64))
                .enumerate()
        {
            flip_batch(&mut batch, &mut flip_rng);
            let images = match &cfg.augmentation {
                Augmentation::None => batch.images,
                Augmentation::Fpa(aug) => fpa_augment_batch(&batch.images, aug, &mut aug_rng)?,
                Augmentation::Rectangle(rect) => {
                    rectangle_erase_batch(&batch.images, rect, &mut aug_rng)?
                }
            };
            let k = batch.labels.len();

            let mut tape = Tape::new();
            let (_, logits) = model.trace_logits(&mut tape, images)?;
            let loss_node = tape.softmax_cross_entropy(logits, &batch.labels)?;
            let loss = tape.value(loss_node).item() as f64;
            if !loss.is_finite() || loss > DIVERGENCE_LOSS_LIMIT {
                return Err(Error::Divergence { epoch, batch: batch_idx, loss });
            }
            let grads = tape.backward(loss_node)?;
            sgd_momentum_step(
                &mut model.params,
                &grads.wrt_params,
                &mut velocity,
                lr,
                cfg.momentum,
                cfg.weight_decay,
            )?;
            loss_sum += loss * k as f64;
            seen += k;
        }

        let train_accuracy = evaluate_accuracy(&model, train_ds)?;
        let val_accuracy = match val_ds {
            Some(ds) => Some(evaluate_accuracy(&model, ds)?),
            None => None,
        };
        history.push(EpochMetrics {
            epoch,
            lr,
            mean_loss: loss_sum / seen as f64,
            train_accuracy,
            val_accuracy,
        });
    }
    Ok(TrainOutput { model, history })
}

/// Fraction of samples whose argmax logit equals the label.
pub fn evaluate_accuracy(model: &Model, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let chunk = 128;
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..ds.len()).collect();
    for start in (0..ds.len()).step_by(chunk) {
        let end = (start + chunk).min(ds.len());
        let batch = crate::data::assemble_batch(ds, &indices[start..end]);
        let logits = model.forward_logits(&batch.images)?;
        let c = model.num_classes();
        for (row, &label) in batch.labels.iter().enumerate() {
            if argmax(&logits.data()[row * c..(row + 1) * c]) == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

//! Dataset loading, normalization, flip augmentation, and seeded batching.
//!
//! Images travel as `[H, W, C]` tensors. Raw pixel values live in `[0, 255]`
//! (IDX files) or `[0, 1]` (synthetic data); training consumes normalized
//! values. No operation mutates its input dataset — augmentation happens on
//! copies at batch-assembly time.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// One image with its class label.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub pixels: Tensor,
    pub label: usize,
}

/// Range the raw pixel values are stored in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawRange {
    /// `[0, 255]`, as parsed from IDX files.
    Byte,
    /// `[0, 1]`, as produced by the synthetic generator.
    Unit,
}

impl RawRange {
    pub fn max(self) -> f32 {
        match self {
            RawRange::Byte => 255.0,
            RawRange::Unit => 1.0,
        }
    }
}

/// Requested normalization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    /// Map the raw range onto `[-1, 1]`.
    Range,
    /// Per-channel `(x - mean) / std` with statistics from the training split.
    ZScore,
}

/// Fitted normalization, stored in checkpoints so evaluation can reproduce
/// the training-time input space (and derive the masking value / black image).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum Normalization {
    Range { raw_max: f32 },
    ZScore { mean: Vec<f32>, std: Vec<f32> },
}

impl Normalization {
    pub fn apply(&self, raw: f32, channel: usize) -> f32 {
        match self {
            Normalization::Range { raw_max } => 2.0 * raw / raw_max - 1.0,
            Normalization::ZScore { mean, std } => (raw - mean[channel]) / std[channel],
        }
    }

    pub fn invert(&self, value: f32, channel: usize) -> f32 {
        match self {
            Normalization::Range { raw_max } => (value + 1.0) / 2.0 * raw_max,
            Normalization::ZScore { mean, std } => value * std[channel] + mean[channel],
        }
    }

    /// Normalized value of a raw black (zero) pixel.
    pub fn black(&self, channel: usize) -> f32 {
        self.apply(0.0, channel)
    }
}

/// A split of labeled images sharing one shape.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<LabeledImage>,
    num_classes: usize,
    raw_range: RawRange,
    normalization: Option<Normalization>,
}

impl Dataset {
    pub fn from_samples(
        samples: Vec<LabeledImage>,
        num_classes: usize,
        raw_range: RawRange,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let shape = samples[0].pixels.shape().to_vec();
        for s in &samples {
            if s.pixels.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "dataset",
                    detail: format!("{:?} vs {:?}", s.pixels.shape(), shape),
                });
            }
            if s.label >= num_classes {
                return Err(Error::IndexOutOfRange {
                    op: "dataset",
                    index: s.label,
                    bound: num_classes,
                });
            }
        }
        Ok(Self { samples, num_classes, raw_range, normalization: None })
    }

    pub fn samples(&self) -> &[LabeledImage] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn raw_range(&self) -> RawRange {
        self.raw_range
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    /// `(H, W, C)` shared by every sample.
    pub fn shape(&self) -> (usize, usize, usize) {
        let s = self.samples[0].pixels.shape();
        (s[0], s[1], s[2])
    }
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::IdxTruncated { expected: end, found: bytes.len() });
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

/// Parse a big-endian IDX image/label file pair into a dataset of
/// single-channel `[rows, cols, 1]` images with raw byte values.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = fs::read(images_path)?;
    let lbl_bytes = fs::read(labels_path)?;

    let magic = read_u32_be(&img_bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxBadMagic { expected: IDX_IMAGES_MAGIC, found: magic });
    }
    let count = read_u32_be(&img_bytes, 4)? as usize;
    let rows = read_u32_be(&img_bytes, 8)? as usize;
    let cols = read_u32_be(&img_bytes, 12)? as usize;
    let expected = 16 + count * rows * cols;
    if img_bytes.len() < expected {
        return Err(Error::IdxTruncated { expected, found: img_bytes.len() });
    }

    let lbl_magic = read_u32_be(&lbl_bytes, 0)?;
    if lbl_magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxBadMagic { expected: IDX_LABELS_MAGIC, found: lbl_magic });
    }
    let lbl_count = read_u32_be(&lbl_bytes, 4)? as usize;
    if lbl_count != count {
        return Err(Error::IdxCountMismatch { images: count, labels: lbl_count });
    }
    let lbl_expected = 8 + count;
    if lbl_bytes.len() < lbl_expected {
        return Err(Error::IdxTruncated { expected: lbl_expected, found: lbl_bytes.len() });
    }

    let mut samples = Vec::with_capacity(count);
    let mut max_label = 0usize;
    for i in 0..count {
        let start = 16 + i * rows * cols;
        let pixels = Tensor::new(
            vec![rows, cols, 1],
            img_bytes[start..start + rows * cols].iter().map(|&b| b as f32).collect(),
        )?;
        let label = lbl_bytes[8 + i] as usize;
        max_label = max_label.max(label);
        samples.push(LabeledImage { pixels, label });
    }
    Dataset::from_samples(samples, max_label + 1, RawRange::Byte)
}

/// Write a dataset back out as an IDX image/label file pair.
/// Requires single-channel byte-range data.
pub fn save_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (rows, cols, c) = ds.shape();
    if c != 1 || ds.raw_range != RawRange::Byte {
        return Err(Error::InvalidArgument(
            "save_idx requires single-channel byte-range data".into(),
        ));
    }
    let mut img = Vec::with_capacity(16 + ds.len() * rows * cols);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    let mut lbl = Vec::with_capacity(8 + ds.len());
    lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    for s in &ds.samples {
        img.extend(s.pixels.data().iter().map(|&v| v as u8));
        lbl.push(s.label as u8);
    }
    fs::write(images_path, img)?;
    fs::write(labels_path, lbl)?;
    Ok(())
}

const SYNTH_SIZE: usize = 28;
const SYNTH_CLASSES: usize = 10;
const SYNTH_ON: f32 = 0.8;
const SYNTH_OFF: f32 = 0.1;
const SYNTH_NOISE: f32 = 0.1;

/// Whether pixel `(row, col)` belongs to the class template.
///
/// The ten templates are localized, pairwise distinct, and symmetric under a
/// horizontal flip, so flip augmentation never maps one class onto another.
pub(crate) fn in_template(class: usize, row: usize, col: usize) -> bool {
    let bar = |r0: usize, r1: usize| row >= r0 && row < r1 && (6..22).contains(&col);
    match class {
        0 => bar(2, 5),
        1 => bar(7, 10),
        2 => bar(12, 15),
        3 => bar(17, 20),
        4 => bar(22, 25),
        5 => (10..18).contains(&row) && (10..18).contains(&col),
        6 => (4..24).contains(&row) && (12..16).contains(&col),
        7 => (4..10).contains(&row) && ((4..10).contains(&col) || (18..24).contains(&col)),
        8 => (18..24).contains(&row) && ((4..10).contains(&col) || (18..24).contains(&col)),
        9 => {
            (8..20).contains(&row)
                && (8..20).contains(&col)
                && !((11..17).contains(&row) && (11..17).contains(&col))
        }
        _ => unreachable!("class out of range"),
    }
}

/// Ten-class 28x28x1 synthetic dataset: each class is a distinct geometric
/// template (bars, squares, a ring) plus uniform pixel noise, so class
/// evidence is spatially localized. Labels are a shuffled balanced
/// assignment (counts per class differ by at most one).
pub fn gen_synthetic(num_samples: usize, seed: u64) -> Dataset {
    assert!(num_samples >= 1);
    let mut rng = crate::seeds::rng(seed, "synthetic", 0);
    let mut labels: Vec<usize> = (0..num_samples).map(|i| i % SYNTH_CLASSES).collect();
    labels.shuffle(&mut rng);
    let mut samples = Vec::with_capacity(num_samples);
    for label in labels {
        let mut data = Vec::with_capacity(SYNTH_SIZE * SYNTH_SIZE);
        for row in 0..SYNTH_SIZE {
            for col in 0..SYNTH_SIZE {
                let base = if in_template(label, row, col) { SYNTH_ON } else { SYNTH_OFF };
                data.push(base + rng.gen_range(0.0..SYNTH_NOISE));
            }
        }
        let pixels = Tensor::new(vec![SYNTH_SIZE, SYNTH_SIZE, 1], data).expect("fixed shape");
        samples.push(LabeledImage { pixels, label });
    }
    Dataset::from_samples(samples, SYNTH_CLASSES, RawRange::Unit).expect("non-empty")
}

/// Fit and apply a normalization to a dataset (z-score statistics come from
/// this split, so call it on the training split and reuse the returned
/// [`Normalization`] for the test split via [`normalize_with`]).
pub fn normalize(ds: &Dataset, mode: NormalizationMode) -> Result<(Dataset, Normalization)> {
    let norm = match mode {
        NormalizationMode::Range => Normalization::Range { raw_max: ds.raw_range.max() },
        NormalizationMode::ZScore => {
            let (_, _, c) = ds.shape();
            let mut sum = vec![0.0f64; c];
            let mut sumsq = vec![0.0f64; c];
            let mut count = vec![0.0f64; c];
            for s in &ds.samples {
                for (i, &v) in s.pixels.data().iter().enumerate() {
                    let ch = i % c;
                    sum[ch] += v as f64;
                    sumsq[ch] += (v as f64) * (v as f64);
                    count[ch] += 1.0;
                }
            }
            let mut mean = Vec::with_capacity(c);
            let mut std = Vec::with_capacity(c);
            for ch in 0..c {
                let m = sum[ch] / count[ch];
                let var = (sumsq[ch] / count[ch] - m * m).max(0.0);
                let sd = var.sqrt();
                if sd == 0.0 {
                    return Err(Error::ZeroStd { channel: ch });
                }
                mean.push(m as f32);
                std.push(sd as f32);
            }
            Normalization::ZScore { mean, std }
        }
    };
    Ok((normalize_with(ds, &norm)?, norm))
}

/// Apply an already-fitted normalization to a dataset.
pub fn normalize_with(ds: &Dataset, norm: &Normalization) -> Result<Dataset> {
    let (_, _, c) = ds.shape();
    if let Normalization::ZScore { mean, std } = norm {
        if mean.len() != c || std.len() != c {
            return Err(Error::ShapeMismatch {
                op: "normalize",
                detail: format!("{c} channels vs {} stats", mean.len()),
            });
        }
    }
    let samples = ds
        .samples
        .iter()
        .map(|s| {
            let mut pixels = s.pixels.clone();
            for (i, v) in pixels.data_mut().iter_mut().enumerate() {
                *v = norm.apply(*v, i % c);
            }
            LabeledImage { pixels, label: s.label }
        })
        .collect();
    Ok(Dataset {
        samples,
        num_classes: ds.num_classes,
        raw_range: ds.raw_range,
        normalization: Some(norm.clone()),
    })
}

/// Reverse the width axis of an `[H, W, C]` image.
pub fn flip_width(image: &Tensor) -> Tensor {
    let s = image.shape();
    let (w, c) = (s[1], s[2]);
    Tensor::from_fn(s.to_vec(), |i| {
        let ch = i % c;
        let col = (i / c) % w;
        let row = i / (c * w);
        image.at(&[row, w - 1 - col, ch])
    })
}

/// With probability 0.5, reverse the width axis; otherwise return unchanged.
pub fn horizontal_flip(image: &Tensor, rng: &mut impl Rng) -> Tensor {
    if rng.gen_bool(0.5) {
        flip_width(image)
    } else {
        image.clone()
    }
}

/// One mini-batch assembled from dataset samples.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[K, H, W, C]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    /// Dataset indices the rows came from.
    pub indices: Vec<usize>,
}

/// Stack dataset samples (by index) into a `[K, H, W, C]` batch.
pub fn assemble_batch(ds: &Dataset, indices: &[usize]) -> Batch {
    let (h, w, c) = ds.shape();
    let mut data = Vec::with_capacity(indices.len() * h * w * c);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        data.extend_from_slice(ds.samples[i].pixels.data());
        labels.push(ds.samples[i].label);
    }
    Batch {
        images: Tensor::new(vec![indices.len(), h, w, c], data).expect("shapes agree"),
        labels,
        indices: indices.to_vec(),
    }
}

/// Seeded epoch iteration: shuffle once per epoch, emit `batch_size` chunks,
/// keep the final partial batch. Every sample appears exactly once.
pub fn batch_iter(
    ds: &Dataset,
    batch_size: usize,
    epoch_seed: u64,
) -> impl Iterator<Item = Batch> + '_ {
    assert!(batch_size >= 1);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = crate::seeds::rng(epoch_seed, "batch-shuffle", 0);
    order.shuffle(&mut rng);
    (0..order.len())
        .step_by(batch_size)
        .map(move |start| {
            let end = (start + batch_size).min(order.len());
            assemble_batch(ds, &order[start..end])
        })
        .collect::<Vec<_>>()
        .into_iter()
}

//! Gradient-based importance estimators and their channel reductions.
//!
//! Four estimators produce 3D `[H, W, C]` score maps for the logit of the
//! predicted class: the plain input gradient, integrated gradients along a
//! straight path from a baseline, and the noise-averaged variants (plain and
//! squared). Channel reductions collapse them to 2D `[H, W]` maps, either
//! unsigned (absolute sums) or signed (element-wise input multiplication
//! followed by a channel sum). A seeded random map serves as the baseline.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::model::{argmax, Model};
use crate::seeds;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// The gradient-based estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorId {
    Vg,
    Ig,
    Sg,
    SqSg,
}

/// How a 3D map was collapsed over channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReductionMode {
    /// Sum of absolute channel values (unsigned).
    AbsSum,
    /// Element-wise input multiplication, then channel sum (signed).
    InputProductSum,
    /// Element-wise input multiplication, absolute value, then channel sum
    /// (unsigned).
    InputProductAbsSum,
    /// Plain channel sum.
    PlainSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signedness {
    Signed,
    Unsigned,
}

/// Raw per-channel importance scores for one sample.
#[derive(Debug, Clone)]
pub struct SaliencyMap3D {
    /// `[H, W, C]`, same shape as the input image.
    pub scores: Tensor,
    pub estimator: EstimatorId,
    pub class_index: usize,
    pub sample_id: usize,
}

/// Channel-reduced scores used for pixel ranking.
#[derive(Debug, Clone)]
pub struct SaliencyMap2D {
    /// `[H, W]`.
    pub scores: Tensor,
    pub signedness: Signedness,
    /// `None` for the random baseline.
    pub reduction: Option<ReductionMode>,
    /// `None` for the random baseline.
    pub estimator: Option<EstimatorId>,
}

/// Estimator hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub ig_steps: usize,
    pub sg_samples: usize,
    pub sg_sigma: f32,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        // sg_sigma defaults to 10% of the [-1, 1] input range.
        Self { ig_steps: 200, sg_samples: 15, sg_sigma: 0.2 }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ig_steps < 1 {
            return Err(Error::InvalidConfig("ig_steps must be >= 1".into()));
        }
        if self.sg_samples < 1 {
            return Err(Error::InvalidConfig("sg_samples must be >= 1".into()));
        }
        if self.sg_sigma.is_nan() || self.sg_sigma < 0.0 {
            return Err(Error::InvalidConfig("sg_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Predicted class and its logit on the unperturbed input.
pub fn predicted_class(model: &Model, image: &Tensor) -> Result<(usize, f32)> {
    let logits = model.forward_single(image)?;
    let c = argmax(&logits);
    Ok((c, logits[c]))
}

/// Gradient of the class-`class` logit with respect to the input pixels.
fn grad_wrt_input(model: &Model, image: &Tensor, class: usize) -> Result<Tensor> {
    let s = image.shape().to_vec();
    let mut tape = Tape::new();
    let batch = image.reshaped(vec![1, s[0], s[1], s[2]])?;
    let (_, logits) = model.trace_logits(&mut tape, batch)?;
    let root = tape.gather_logit(logits, 0, class)?;
    let grads = tape.backward(root)?;
    grads
        .wrt_input
        .expect("input leaf was registered")
        .reshaped(s)
}

/// Vanilla gradient: `e = dS_c / dx` at the input, against the pre-softmax
/// logit of class `c` (the unperturbed argmax).
pub fn vanilla_gradient(model: &Model, image: &Tensor, class: usize) -> Result<SaliencyMap3D> {
    let grad = grad_wrt_input(model, image, class)?;
    Ok(SaliencyMap3D { scores: grad, estimator: EstimatorId::Vg, class_index: class, sample_id: 0 })
}

/// Integrated gradients with the right-Riemann sum
/// `e = (x - x0) * (1/m) * sum_{k=1..m} dS_c(x0 + (k/m)(x - x0)) / dx`.
pub fn integrated_gradients(
    model: &Model,
    image: &Tensor,
    class: usize,
    baseline: &Tensor,
    steps: usize,
) -> Result<SaliencyMap3D> {
    if steps < 1 {
        return Err(Error::InvalidArgument("integrated gradients need m >= 1".into()));
    }
    if baseline.shape() != image.shape() {
        return Err(Error::ShapeMismatch {
            op: "integrated-gradients",
            detail: format!("baseline {:?} vs input {:?}", baseline.shape(), image.shape()),
        });
    }
    let n = image.numel();
    let mut acc = vec![0.0f64; n];
    for k in 1..=steps {
        let t = k as f64 / steps as f64;
        let point = Tensor::from_fn(image.shape().to_vec(), |i| {
            (baseline.data()[i] as f64
                + t * (image.data()[i] as f64 - baseline.data()[i] as f64)) as f32
        });
        let grad = grad_wrt_input(model, &point, class)?;
        for (a, &g) in acc.iter_mut().zip(grad.data()) {
            *a += g as f64;
        }
    }
    let m = steps as f64;
    let scores = Tensor::from_fn(image.shape().to_vec(), |i| {
        ((image.data()[i] as f64 - baseline.data()[i] as f64) * acc[i] / m) as f32
    });
    Ok(SaliencyMap3D { scores, estimator: EstimatorId::Ig, class_index: class, sample_id: 0 })
}

/// Per-draw noisy input gradients shared by the smoothed estimators: the
/// gradient of `S_c` at `x + xi_i`, `xi_i ~ Normal(0, sigma^2)` element-wise.
fn noisy_gradients(
    model: &Model,
    image: &Tensor,
    class: usize,
    samples: usize,
    sigma: f32,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Tensor>> {
    let mut grads = Vec::with_capacity(samples);
    for _ in 0..samples {
        let noisy = Tensor::from_fn(image.shape().to_vec(), |i| {
            let xi: f64 = rng.sample(rand_distr::StandardNormal);
            image.data()[i] + (xi * sigma as f64) as f32
        });
        grads.push(grad_wrt_input(model, &noisy, class)?);
    }
    Ok(grads)
}

fn average_maps(shape: Vec<usize>, grads: &[Tensor], square: bool) -> Tensor {
    let n = grads.len() as f64;
    let numel: usize = shape.iter().product();
    let mut acc = vec![0.0f64; numel];
    for g in grads {
        for (a, &v) in acc.iter_mut().zip(g.data()) {
            *a += if square { (v as f64) * (v as f64) } else { v as f64 };
        }
    }
    Tensor::from_fn(shape, |i| (acc[i] / n) as f32)
}

/// Noise-averaged gradient: mean of `samples` vanilla gradients at inputs
/// with injected Gaussian noise.
pub fn smoothgrad(
    model: &Model,
    image: &Tensor,
    class: usize,
    cfg: &EstimatorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SaliencyMap3D> {
    cfg.validate()?;
    let grads = noisy_gradients(model, image, class, cfg.sg_samples, cfg.sg_sigma, rng)?;
    let scores = average_maps(image.shape().to_vec(), &grads, false);
    Ok(SaliencyMap3D { scores, estimator: EstimatorId::Sg, class_index: class, sample_id: 0 })
}

/// Like [`smoothgrad`], but squares each per-draw gradient element-wise
/// before averaging; output is element-wise non-negative.
pub fn squared_smoothgrad(
    model: &Model,
    image: &Tensor,
    class: usize,
    cfg: &EstimatorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SaliencyMap3D> {
    cfg.validate()?;
    let grads = noisy_gradients(model, image, class, cfg.sg_samples, cfg.sg_sigma, rng)?;
    let scores = average_maps(image.shape().to_vec(), &grads, true);
    Ok(SaliencyMap3D { scores, estimator: EstimatorId::SqSg, class_index: class, sample_id: 0 })
}

/// Both smoothed estimators from one set of noise draws. Bit-identical to
/// calling [`smoothgrad`] and [`squared_smoothgrad`] with clones of the same
/// rng, at half the gradient cost.
pub fn smoothed_pair(
    model: &Model,
    image: &Tensor,
    class: usize,
    cfg: &EstimatorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(SaliencyMap3D, SaliencyMap3D)> {
    cfg.validate()?;
    let grads = noisy_gradients(model, image, class, cfg.sg_samples, cfg.sg_sigma, rng)?;
    let sg = SaliencyMap3D {
        scores: average_maps(image.shape().to_vec(), &grads, false),
        estimator: EstimatorId::Sg,
        class_index: class,
        sample_id: 0,
    };
    let sq = SaliencyMap3D {
        scores: average_maps(image.shape().to_vec(), &grads, true),
        estimator: EstimatorId::SqSg,
        class_index: class,
        sample_id: 0,
    };
    Ok((sg, sq))
}

/// Collapse a 3D map over channels.
///
/// Input-product modes need the input image; integrated gradients already
/// multiply by the input, so product modes are rejected for them.
pub fn reduce(
    map: &SaliencyMap3D,
    mode: ReductionMode,
    input: Option<&Tensor>,
) -> Result<SaliencyMap2D> {
    let s = map.scores.shape().to_vec();
    let (h, w, c) = (s[0], s[1], s[2]);
    let needs_input =
        matches!(mode, ReductionMode::InputProductSum | ReductionMode::InputProductAbsSum);
    if needs_input && map.estimator == EstimatorId::Ig {
        return Err(Error::InvalidArgument(
            "integrated gradients already include the input product; use plain-sum or abs-sum"
                .into(),
        ));
    }
    let input = if needs_input {
        let x = input.ok_or_else(|| {
            Error::InvalidArgument("input image required for input-product reductions".into())
        })?;
        if x.shape() != map.scores.shape() {
            return Err(Error::ShapeMismatch {
                op: "reduce",
                detail: format!("input {:?} vs map {:?}", x.shape(), map.scores.shape()),
            });
        }
        Some(x)
    } else {
        None
    };
    let scores = Tensor::from_fn(vec![h, w], |i| {
        let base = i * c;
        let mut acc = 0.0f64;
        for ch in 0..c {
            let e = map.scores.data()[base + ch] as f64;
            acc += match mode {
                ReductionMode::AbsSum => e.abs(),
                ReductionMode::PlainSum => e,
                ReductionMode::InputProductSum => e * input.unwrap().data()[base + ch] as f64,
                ReductionMode::InputProductAbsSum => {
                    (e * input.unwrap().data()[base + ch] as f64).abs()
                }
            };
        }
        acc as f32
    });
    let signedness = match (mode, map.estimator) {
        (ReductionMode::AbsSum | ReductionMode::InputProductAbsSum, _) => Signedness::Unsigned,
        (ReductionMode::PlainSum, EstimatorId::SqSg) => Signedness::Unsigned,
        _ => Signedness::Signed,
    };
    Ok(SaliencyMap2D {
        scores,
        signedness,
        reduction: Some(mode),
        estimator: Some(map.estimator),
    })
}

/// Baseline map with i.i.d. Uniform(-1, 1) scores.
pub fn random_saliency(height: usize, width: usize, rng: &mut ChaCha8Rng) -> SaliencyMap2D {
    let scores = Tensor::from_fn(vec![height, width], |_| rng.gen_range(-1.0..1.0));
    SaliencyMap2D { scores, signedness: Signedness::Signed, reduction: None, estimator: None }
}

/// Black image (raw zero) in normalized space — the integrated-gradients
/// reference point.
pub fn ig_baseline(norm: &Normalization, shape: (usize, usize, usize)) -> Tensor {
    let (h, w, c) = shape;
    Tensor::from_fn(vec![h, w, c], |i| norm.black(i % c))
}

/// One named estimator/reduction combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EstimatorKey {
    Random,
    IgSum,
    IgAbs,
    VgAbs,
    VgPrimeSum,
    VgPrimeAbs,
    SgAbs,
    SgPrimeSum,
    SgPrimeAbs,
    SqSgSum,
}

impl EstimatorKey {
    pub const ALL: [EstimatorKey; 10] = [
        EstimatorKey::Random,
        EstimatorKey::IgSum,
        EstimatorKey::IgAbs,
        EstimatorKey::VgAbs,
        EstimatorKey::VgPrimeSum,
        EstimatorKey::VgPrimeAbs,
        EstimatorKey::SgAbs,
        EstimatorKey::SgPrimeSum,
        EstimatorKey::SgPrimeAbs,
        EstimatorKey::SqSgSum,
    ];

    /// Stable identifier used in CLI arguments and file names.
    pub fn id(self) -> &'static str {
        match self {
            EstimatorKey::Random => "random",
            EstimatorKey::IgSum => "ig_sum",
            EstimatorKey::IgAbs => "ig_abs",
            EstimatorKey::VgAbs => "vg_abs",
            EstimatorKey::VgPrimeSum => "vg-prime_sum",
            EstimatorKey::VgPrimeAbs => "vg-prime_abs",
            EstimatorKey::SgAbs => "sg_abs",
            EstimatorKey::SgPrimeSum => "sg-prime_sum",
            EstimatorKey::SgPrimeAbs => "sg-prime_abs",
            EstimatorKey::SqSgSum => "sq-sg_sum",
        }
    }

    /// Human-readable name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            EstimatorKey::Random => "Random",
            EstimatorKey::IgSum => "IG_sum",
            EstimatorKey::IgAbs => "IG_abs",
            EstimatorKey::VgAbs => "VG_abs",
            EstimatorKey::VgPrimeSum => "VG'_sum",
            EstimatorKey::VgPrimeAbs => "VG'_abs",
            EstimatorKey::SgAbs => "SG_abs",
            EstimatorKey::SgPrimeSum => "SG'_sum",
            EstimatorKey::SgPrimeAbs => "SG'_abs",
            EstimatorKey::SqSgSum => "SQ-SG_sum",
        }
    }

    pub fn parse(s: &str) -> Option<EstimatorKey> {
        EstimatorKey::ALL.into_iter().find(|k| k.id() == s)
    }

    /// Underlying estimator, or `None` for the random baseline.
    pub fn estimator(self) -> Option<EstimatorId> {
        self.estimator_and_reduction().map(|(e, _)| e)
    }

    /// Channel reduction, or `None` for the random baseline.
    pub fn reduction(self) -> Option<ReductionMode> {
        self.estimator_and_reduction().map(|(_, r)| r)
    }

    fn estimator_and_reduction(self) -> Option<(EstimatorId, ReductionMode)> {
        match self {
            EstimatorKey::Random => None,
            EstimatorKey::IgSum => Some((EstimatorId::Ig, ReductionMode::PlainSum)),
            EstimatorKey::IgAbs => Some((EstimatorId::Ig, ReductionMode::AbsSum)),
            EstimatorKey::VgAbs => Some((EstimatorId::Vg, ReductionMode::AbsSum)),
            EstimatorKey::VgPrimeSum => Some((EstimatorId::Vg, ReductionMode::InputProductSum)),
            EstimatorKey::VgPrimeAbs => {
                Some((EstimatorId::Vg, ReductionMode::InputProductAbsSum))
            }
            EstimatorKey::SgAbs => Some((EstimatorId::Sg, ReductionMode::AbsSum)),
            EstimatorKey::SgPrimeSum => Some((EstimatorId::Sg, ReductionMode::InputProductSum)),
            EstimatorKey::SgPrimeAbs => {
                Some((EstimatorId::Sg, ReductionMode::InputProductAbsSum))
            }
            EstimatorKey::SqSgSum => Some((EstimatorId::SqSg, ReductionMode::PlainSum)),
        }
    }
}

/// Compute the reduced 2D map for one sample under a named combination.
/// The class is fixed to the argmax on the unperturbed input; the smoothed
/// estimators draw their noise from a stream derived from
/// `(seed, estimator, sample_id)`, and the random baseline likewise.
#[allow(clippy::too_many_arguments)]
pub fn compute_map(
    model: &Model,
    image: &Tensor,
    key: EstimatorKey,
    cfg: &EstimatorConfig,
    baseline: &Tensor,
    seed: u64,
    sample_id: usize,
) -> Result<SaliencyMap2D> {
    let Some((estimator, mode)) = key.estimator_and_reduction() else {
        let s = image.shape();
        let mut rng = seeds::rng(seed, "random-saliency", sample_id as u64);
        return Ok(random_saliency(s[0], s[1], &mut rng));
    };
    let (class, _) = predicted_class(model, image)?;
    let mut map = match estimator {
        EstimatorId::Vg => vanilla_gradient(model, image, class)?,
        EstimatorId::Ig => integrated_gradients(model, image, class, baseline, cfg.ig_steps)?,
        EstimatorId::Sg => {
            let mut rng = seeds::rng(seed, "smoothgrad", sample_id as u64);
            smoothgrad(model, image, class, cfg, &mut rng)?
        }
        EstimatorId::SqSg => {
            let mut rng = seeds::rng(seed, "smoothgrad", sample_id as u64);
            squared_smoothgrad(model, image, class, cfg, &mut rng)?
        }
    };
    map.sample_id = sample_id;
    let needs_input =
        matches!(mode, ReductionMode::InputProductSum | ReductionMode::InputProductAbsSum);
    reduce(&map, mode, needs_input.then_some(image))
}

//! Feature perturbation augmentation and the rectangle-erasing baseline.
//!
//! Both operate on `[K, H, W, C]` batches in normalized pixel space and
//! return fresh tensors; inputs are never mutated. Masking a pixel always
//! masks all of its channels, and outputs contain only original values and
//! the configured masking value.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters of the pixel/square masking augmentation.
///
/// With probability `p` a mini-batch is selected for perturbation. For a
/// selected batch one masking probability `p1 ~ Uniform(0, p1_max)` is drawn,
/// then every pixel of every sample is masked with probability `p1`, and —
/// independently — with probability `p2` becomes the anchor of a square of
/// side `s ~ Uniform{1..s_max}` that is masked as a whole (clipped at the
/// image border).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub p: f64,
    pub p1_max: f64,
    pub p2: f64,
    pub s_max: usize,
    #[serde(default)]
    pub mask_value: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { p: 0.5, p1_max: 0.25, p2: 0.1, s_max: 3, mask_value: 0.0 }
    }
}

impl AugmentConfig {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        for (name, v) in [("p", self.p), ("p1_max", self.p1_max), ("p2", self.p2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.s_max < 1 || self.s_max >= height.min(width) {
            return Err(Error::InvalidConfig(format!(
                "s_max = {} outside [1, {})",
                self.s_max,
                height.min(width)
            )));
        }
        if !self.mask_value.is_finite() {
            return Err(Error::InvalidConfig("mask_value must be finite".into()));
        }
        Ok(())
    }
}

/// Apply feature perturbation augmentation to a batch.
pub fn fpa_augment_batch(
    batch: &Tensor,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let s = batch.shape();
    if s.len() != 4 {
        return Err(Error::ShapeMismatch {
            op: "fpa-augment",
            detail: format!("need [K,H,W,C], got {s:?}"),
        });
    }
    let (k, h, w, c) = (s[0], s[1], s[2], s[3]);
    cfg.validate(h, w)?;

    if !rng.gen_bool(cfg.p) {
        return Ok(batch.clone());
    }
    let p1 = if cfg.p1_max > 0.0 { rng.gen_range(0.0..cfg.p1_max) } else { 0.0 };

    let mut out = batch.clone();
    let data = out.data_mut();
    let mask_pixel = |data: &mut [f32], sample: usize, row: usize, col: usize| {
        let base = ((sample * h + row) * w + col) * c;
        for ch in 0..c {
            data[base + ch] = cfg.mask_value;
        }
    };
    for sample in 0..k {
        for col in 0..w {
            for row in 0..h {
                if p1 > 0.0 && rng.gen_bool(p1) {
                    mask_pixel(data, sample, row, col);
                }
                let side = rng.gen_range(1..=cfg.s_max);
                if cfg.p2 > 0.0 && rng.gen_bool(cfg.p2) {
                    for dc in 0..side {
                        for dr in 0..side {
                            if row + dr < h && col + dc < w {
                                mask_pixel(data, sample, row + dr, col + dc);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Parameters of the rectangle-erasing baseline: per sample, with probability
/// `prob`, one random rectangle (area and aspect ratio drawn from the given
/// ranges) is filled with `mask_value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectangleConfig {
    pub prob: f64,
    pub area_range: (f64, f64),
    pub aspect_range: (f64, f64),
    #[serde(default)]
    pub mask_value: f32,
}

impl Default for RectangleConfig {
    fn default() -> Self {
        Self {
            prob: 0.5,
            area_range: (0.02, 0.33),
            aspect_range: (0.3, 3.3),
            mask_value: 0.0,
        }
    }
}

impl RectangleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prob) {
            return Err(Error::InvalidConfig(format!("prob = {} outside [0, 1]", self.prob)));
        }
        let (alo, ahi) = self.area_range;
        if !(alo > 0.0 && ahi < 1.0 && alo <= ahi) {
            return Err(Error::InvalidConfig(format!(
                "area_range ({alo}, {ahi}) not inside (0, 1)"
            )));
        }
        let (rlo, rhi) = self.aspect_range;
        if !(rlo > 0.0 && rlo <= rhi) {
            return Err(Error::InvalidConfig(format!(
                "aspect_range ({rlo}, {rhi}) must be positive"
            )));
        }
        if !self.mask_value.is_finite() {
            return Err(Error::InvalidConfig("mask_value must be finite".into()));
        }
        Ok(())
    }
}

/// Apply rectangle erasing to a batch. A sample is left unchanged when no
/// feasible rectangle is found within 10 attempts.
pub fn rectangle_erase_batch(
    batch: &Tensor,
    cfg: &RectangleConfig,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let s = batch.shape();
    if s.len() != 4 {
        return Err(Error::ShapeMismatch {
            op: "rectangle-erase",
            detail: format!("need [K,H,W,C], got {s:?}"),
        });
    }
    cfg.validate()?;
    let (k, h, w, c) = (s[0], s[1], s[2], s[3]);
    let mut out = batch.clone();
    let data = out.data_mut();
    for sample in 0..k {
        if !rng.gen_bool(cfg.prob) {
            continue;
        }
        for _attempt in 0..10 {
            let area = rng.gen_range(cfg.area_range.0..=cfg.area_range.1) * (h * w) as f64;
            let aspect = rng.gen_range(cfg.aspect_range.0..=cfg.aspect_range.1);
            let rect_h = (area * aspect).sqrt().round() as usize;
            let rect_w = (area / aspect).sqrt().round() as usize;
            if rect_h == 0 || rect_w == 0 || rect_h > h || rect_w > w {
                continue;
            }
            let row0 = rng.gen_range(0..=h - rect_h);
            let col0 = rng.gen_range(0..=w - rect_w);
            for row in row0..row0 + rect_h {
                for col in col0..col0 + rect_w {
                    let base = ((sample * h + row) * w + col) * c;
                    for ch in 0..c {
                        data[base + ch] = cfg.mask_value;
                    }
                }
            }
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn batch(k: usize, h: usize, w: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = crate::seeds::rng(seed, "augment-test", 0);
        Tensor::from_fn(vec![k, h, w, c], |_| rng.gen_range(0.1..1.0f32))
    }

    fn masked_fraction(orig: &Tensor, out: &Tensor, mask: f32) -> f64 {
        let changed = orig
            .data()
            .iter()
            .zip(out.data())
            .filter(|(a, b)| a != b && **b == mask)
            .count();
        changed as f64 / orig.numel() as f64
    }

    #[test]
    fn p_zero_is_identity() {
        let b = batch(4, 8, 8, 1, 1);
        let cfg = AugmentConfig { p: 0.0, ..AugmentConfig::default() };
        let mut rng = crate::seeds::rng(5, "fpa", 0);
        let out = fpa_augment_batch(&b, &cfg, &mut rng).unwrap();
        assert_eq!(out.data(), b.data());
    }

    #[test]
    fn selected_but_no_masking_is_identity() {
        let b = batch(4, 8, 8, 1, 2);
        let cfg = AugmentConfig { p: 1.0, p1_max: 0.0, p2: 0.0, ..AugmentConfig::default() };
        let mut rng = crate::seeds::rng(6, "fpa", 0);
        let out = fpa_augment_batch(&b, &cfg, &mut rng).unwrap();
        assert_eq!(out.data(), b.data());
    }

    #[test]
    fn pixel_masking_fraction_matches_expectation() {
        // p1 ~ Uniform(0, 0.5) per batch, squares disabled: E[fraction] = 0.25.
        let cfg = AugmentConfig { p: 1.0, p1_max: 0.5, p2: 0.0, ..AugmentConfig::default() };
        let mut rng = crate::seeds::rng(7, "fpa", 0);
        let mut total = 0.0;
        let batches = 200;
        for i in 0..batches {
            let b = batch(2, 16, 16, 1, 100 + i);
            let out = fpa_augment_batch(&b, &cfg, &mut rng).unwrap();
            total += masked_fraction(&b, &out, 0.0);
        }
        let mean = total / batches as f64;
        assert!((mean - 0.25).abs() <= 0.02, "masked fraction {mean}");
    }

    #[test]
    fn full_config_matches_independent_simulation() {
        // Boolean-grid simulation of the same two-level process, written
        // independently of the tensor code path.
        let cfg = AugmentConfig::default(); // p1_max 0.25, p2 0.1, s_max 3
        let (h, w) = (28, 28);
        let sim_batches = 400;
        let mut sim_rng = crate::seeds::rng(1234, "fpa-sim", 0);
        let mut sim_total = 0.0;
        for _ in 0..sim_batches {
            let p1 = sim_rng.gen_range(0.0..cfg.p1_max);
            let mut grid = vec![false; h * w];
            for col in 0..w {
                for row in 0..h {
                    if sim_rng.gen_bool(p1) {
                        grid[row * w + col] = true;
                    }
                    let side = sim_rng.gen_range(1..=cfg.s_max);
                    if sim_rng.gen_bool(cfg.p2) {
                        for dc in 0..side {
                            for dr in 0..side {
                                if row + dr < h && col + dc < w {
                                    grid[(row + dr) * w + col + dc] = true;
                                }
                            }
                        }
                    }
                }
            }
            sim_total += grid.iter().filter(|&&v| v).count() as f64 / (h * w) as f64;
        }
        let sim_mean = sim_total / sim_batches as f64;

        let apply_cfg = AugmentConfig { p: 1.0, ..cfg };
        let mut rng = crate::seeds::rng(77, "fpa", 0);
        let mut total = 0.0;
        let batches = 400;
        for i in 0..batches {
            let b = batch(1, h, w, 1, 500 + i);
            let out = fpa_augment_batch(&b, &apply_cfg, &mut rng).unwrap();
            total += masked_fraction(&b, &out, 0.0);
        }
        let mean = total / batches as f64;
        assert!(
            (mean - sim_mean).abs() <= 0.02,
            "implementation {mean} vs simulation {sim_mean}"
        );
    }

    #[test]
    fn masks_all_channels_together() {
        let b = batch(2, 10, 10, 3, 9);
        let cfg = AugmentConfig { p: 1.0, p1_max: 0.5, p2: 0.1, s_max: 3, mask_value: -7.0 };
        let mut rng = crate::seeds::rng(8, "fpa", 0);
        let out = fpa_augment_batch(&b, &cfg, &mut rng).unwrap();
        let s = b.shape();
        for k in 0..s[0] {
            for r in 0..s[1] {
                for c in 0..s[2] {
                    let masked: Vec<bool> = (0..s[3])
                        .map(|ch| out.at(&[k, r, c, ch]) == -7.0)
                        .collect();
                    assert!(
                        masked.iter().all(|&m| m) || masked.iter().all(|&m| !m),
                        "channels masked inconsistently at ({k},{r},{c})"
                    );
                }
            }
        }
    }

    #[test]
    fn fixed_seed_reproduces() {
        let b = batch(3, 12, 12, 1, 10);
        let cfg = AugmentConfig::default();
        let out1 =
            fpa_augment_batch(&b, &cfg, &mut crate::seeds::rng(21, "fpa", 3)).unwrap();
        let out2 =
            fpa_augment_batch(&b, &cfg, &mut crate::seeds::rng(21, "fpa", 3)).unwrap();
        assert_eq!(out1.data(), out2.data());
    }

    #[test]
    fn config_validation() {
        let cfg = AugmentConfig { p: 1.5, ..AugmentConfig::default() };
        assert!(cfg.validate(28, 28).is_err());
        let cfg = AugmentConfig { s_max: 28, ..AugmentConfig::default() };
        assert!(cfg.validate(28, 28).is_err());
        assert!(AugmentConfig::default().validate(28, 28).is_ok());
    }

    #[test]
    fn rectangle_prob_zero_is_identity() {
        let b = batch(4, 8, 8, 1, 11);
        let cfg = RectangleConfig { prob: 0.0, ..RectangleConfig::default() };
        let mut rng = crate::seeds::rng(5, "rect", 0);
        let out = rectangle_erase_batch(&b, &cfg, &mut rng).unwrap();
        assert_eq!(out.data(), b.data());
    }

    #[test]
    fn rectangle_forced_geometry() {
        // area 0.25 of a 4x4 image with aspect 1 is exactly a 2x2 square.
        let b = batch(1, 4, 4, 1, 12);
        let cfg = RectangleConfig {
            prob: 1.0,
            area_range: (0.25, 0.25),
            aspect_range: (1.0, 1.0),
            mask_value: 0.0,
        };
        let mut rng = crate::seeds::rng(6, "rect", 0);
        let out = rectangle_erase_batch(&b, &cfg, &mut rng).unwrap();
        let masked = b
            .data()
            .iter()
            .zip(out.data())
            .filter(|(a, b)| a != b && **b == 0.0)
            .count();
        assert_eq!(masked, 4);
    }

    #[test]
    fn rectangle_infeasible_geometry_leaves_sample_unchanged() {
        // aspect 100 on an 8x8 image can never fit: height would need to be
        // sqrt(area * aspect) >> 8, so all 10 attempts fail
        let b = batch(3, 8, 8, 1, 14);
        let cfg = RectangleConfig {
            prob: 1.0,
            area_range: (0.3, 0.33),
            aspect_range: (100.0, 100.0),
            mask_value: 0.0,
        };
        let mut rng = crate::seeds::rng(7, "rect", 0);
        let out = rectangle_erase_batch(&b, &cfg, &mut rng).unwrap();
        assert_eq!(out.data(), b.data());
    }

    #[test]
    fn rectangle_masked_fraction_envelope() {
        let cfg = RectangleConfig::default();
        let mut rng = crate::seeds::rng(13, "rect", 0);
        let mut total = 0.0;
        let n = 1000;
        for i in 0..n {
            let b = batch(1, 16, 16, 1, 900 + i);
            let out = rectangle_erase_batch(&b, &cfg, &mut rng).unwrap();
            total += masked_fraction(&b, &out, 0.0);
        }
        let mean = total / n as f64;
        // prob * min area as lower bound, max area as upper bound
        assert!(
            (0.5 * 0.02..=0.33).contains(&mean),
            "mean masked fraction {mean} outside envelope"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn outputs_only_original_or_mask_value(seed in 0u64..500) {
            let b = batch(2, 9, 9, 2, seed);
            let cfg = AugmentConfig { p: 1.0, p1_max: 0.4, p2: 0.15, s_max: 4, mask_value: 0.25 };
            let mut rng = crate::seeds::rng(seed, "prop-fpa", 0);
            let out = fpa_augment_batch(&b, &cfg, &mut rng).unwrap();
            for (a, o) in b.data().iter().zip(out.data()) {
                prop_assert!(*o == *a || *o == 0.25);
            }
        }

        #[test]
        fn rectangle_outputs_only_original_or_mask_value(seed in 0u64..200) {
            let b = batch(2, 8, 8, 3, seed);
            let cfg = RectangleConfig::default();
            let mut rng = crate::seeds::rng(seed, "prop-rect", 0);
            let out = rectangle_erase_batch(&b, &cfg, &mut rng).unwrap();
            for (a, o) in b.data().iter().zip(out.data()) {
                prop_assert!(*o == *a || *o == 0.0);
            }
        }
    }
}

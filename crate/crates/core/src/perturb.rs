//! MIF/LIF pixel rankings, perturbation curves, the area fidelity metric,
//! and bootstrap confidence intervals.
//!
//! Pixels are ranked by their 2D importance scores and masked incrementally
//! (most- or least-important first); the curve tracks the predicted-class
//! logit, normalized by its unperturbed value, over a grid of masking
//! fractions. The fidelity metric is the trapezoidal area between the LIF
//! and MIF mean curves with the fraction axis in percentage points, so a
//! constant gap of 1.0 over the whole grid yields an area of 100.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{argmax, Model};
use crate::saliency::SaliencyMap2D;
use crate::seeds;
use crate::tensor::Tensor;

/// Masking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Mif,
    Lif,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Mif => "mif",
            Direction::Lif => "lif",
        }
    }
}

/// A permutation of the `H*W` pixel indices (row-major ids).
#[derive(Debug, Clone)]
pub struct PixelRanking {
    pub order: Vec<usize>,
    pub direction: Direction,
}

impl PixelRanking {
    /// The opposite direction: exactly the reversed order.
    pub fn reversed(&self) -> PixelRanking {
        PixelRanking {
            order: self.order.iter().rev().copied().collect(),
            direction: match self.direction {
                Direction::Mif => Direction::Lif,
                Direction::Lif => Direction::Mif,
            },
        }
    }
}

/// Most-important-first ranking: descending score, ties broken by ascending
/// row-major pixel index. LIF is obtained via [`PixelRanking::reversed`].
pub fn rank_pixels(map: &SaliencyMap2D) -> PixelRanking {
    let scores = map.scores.data();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    PixelRanking { order, direction: Direction::Mif }
}

/// The default masking-fraction grid: 0% to 100% in 2% steps.
pub fn default_fraction_grid() -> Vec<f64> {
    (0..=50).map(|k| k as f64 / 50.0).collect()
}

pub fn validate_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() {
        return Err(Error::GridMismatch("empty fraction grid".into()));
    }
    if fractions[0] != 0.0 {
        return Err(Error::GridMismatch(format!(
            "grid must start at 0, starts at {}",
            fractions[0]
        )));
    }
    for w in fractions.windows(2) {
        // NaN comparisons land here as well
        if w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::GridMismatch(format!(
                "grid must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if let Some(&last) = fractions.last() {
        if last > 1.0 {
            return Err(Error::GridMismatch(format!("fractions must stay within [0, 1], got {last}")));
        }
    }
    Ok(())
}

fn masked_count(fraction: f64, pixels: usize) -> usize {
    ((fraction * pixels as f64).floor() as usize).min(pixels)
}

/// Samples whose unperturbed predicted-class logit is this close to zero are
/// excluded from curve averaging (normalization would blow up).
pub const NEAR_ZERO_LOGIT: f32 = 1e-6;

/// Normalized-logit curve for one sample, masking pixels in ranking order.
///
/// For each fraction `f`, the first `floor(f * H * W)` pixels of the ranking
/// are set to `mask_value` across all channels (incrementally; masked sets
/// are nested along the grid) and the predicted-class logit is recorded,
/// divided by its unperturbed value. Returns `None` when the unperturbed
/// logit is smaller than [`NEAR_ZERO_LOGIT`] in magnitude.
pub fn perturbation_curve(
    model: &Model,
    image: &Tensor,
    ranking: &PixelRanking,
    fractions: &[f64],
    mask_value: f32,
) -> Result<Option<Vec<f64>>> {
    validate_fractions(fractions)?;
    let s = image.shape().to_vec();
    let (h, w, c) = (s[0], s[1], s[2]);
    let pixels = h * w;
    if ranking.order.len() != pixels {
        return Err(Error::ShapeMismatch {
            op: "perturbation-curve",
            detail: format!("ranking over {} pixels, image has {pixels}", ranking.order.len()),
        });
    }
    let logits = model.forward_single(image)?;
    let class = argmax(&logits);
    let s0 = logits[class];
    if s0.abs() < NEAR_ZERO_LOGIT {
        return Ok(None);
    }

    let mut working = image.clone();
    let mut masked = 0usize;
    let mut values = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let target = masked_count(fraction, pixels);
        while masked < target {
            let pixel = ranking.order[masked];
            let base = pixel * c;
            for ch in 0..c {
                working.data_mut()[base + ch] = mask_value;
            }
            masked += 1;
        }
        let s_masked = model.forward_single(&working)?[class];
        values.push(s_masked as f64 / s0 as f64);
    }
    Ok(Some(values))
}

/// Mean curve over samples, with the per-sample matrix retained for
/// bootstrap resampling.
#[derive(Debug, Clone, Serialize)]
pub struct PerturbationCurve {
    pub fractions: Vec<f64>,
    pub mean: Vec<f64>,
    pub per_sample: Vec<Vec<f64>>,
    pub direction: Direction,
}

/// Arithmetic mean per fraction over per-sample curves.
pub fn aggregate_curves(
    fractions: &[f64],
    direction: Direction,
    per_sample: Vec<Vec<f64>>,
) -> Result<PerturbationCurve> {
    if per_sample.is_empty() {
        return Err(Error::InvalidArgument("no curves to aggregate".into()));
    }
    for c in &per_sample {
        if c.len() != fractions.len() {
            return Err(Error::GridMismatch(format!(
                "curve has {} points, grid has {}",
                c.len(),
                fractions.len()
            )));
        }
    }
    let mean = mean_curve(&per_sample, None);
    Ok(PerturbationCurve {
        fractions: fractions.to_vec(),
        mean,
        per_sample,
        direction,
    })
}

/// Mean over all rows, or over a resampled multiset of row indices.
fn mean_curve(per_sample: &[Vec<f64>], indices: Option<&[usize]>) -> Vec<f64> {
    let points = per_sample[0].len();
    let mut mean = vec![0.0f64; points];
    let n = match indices {
        Some(ids) => {
            for &i in ids {
                for (m, v) in mean.iter_mut().zip(&per_sample[i]) {
                    *m += v;
                }
            }
            ids.len() as f64
        }
        None => {
            for row in per_sample {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            per_sample.len() as f64
        }
    };
    for m in &mut mean {
        *m /= n;
    }
    mean
}

/// Trapezoidal integral of `(lif - mif)` over the fraction axis expressed in
/// percentage points `[0, 100]`.
pub fn area_between(fractions: &[f64], lif_mean: &[f64], mif_mean: &[f64]) -> f64 {
    let mut area = 0.0f64;
    for i in 1..fractions.len() {
        let dx = (fractions[i] - fractions[i - 1]) * 100.0;
        let d0 = lif_mean[i - 1] - mif_mean[i - 1];
        let d1 = lif_mean[i] - mif_mean[i];
        area += dx * (d0 + d1) / 2.0;
    }
    area
}

/// Fidelity metric: area between the LIF and MIF mean curves.
pub fn fidelity_area(lif: &PerturbationCurve, mif: &PerturbationCurve) -> Result<f64> {
    if lif.fractions != mif.fractions {
        return Err(Error::GridMismatch("LIF and MIF grids differ".into()));
    }
    Ok(area_between(&lif.fractions, &lif.mean, &mif.mean))
}

/// Area estimate with a bootstrap confidence interval.
#[derive(Debug, Clone, Serialize)]
pub struct FidelityResult {
    pub a: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub num_samples: usize,
    pub bootstrap_resamples: usize,
    pub seed: u64,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Nonparametric paired bootstrap over samples: resample sample indices with
/// replacement, recompute the mean-curve area per resample, and report the
/// 2.5/97.5 percentile interval. The point estimate is the area of the full
/// mean curves, the same statistic the resamples recompute.
pub fn bootstrap_ci(
    lif: &PerturbationCurve,
    mif: &PerturbationCurve,
    resamples: usize,
    seed: u64,
) -> Result<FidelityResult> {
    if lif.fractions != mif.fractions {
        return Err(Error::GridMismatch("LIF and MIF grids differ".into()));
    }
    let n = lif.per_sample.len();
    if n != mif.per_sample.len() {
        return Err(Error::InvalidArgument(format!(
            "unpaired curves: {n} LIF vs {} MIF samples",
            mif.per_sample.len()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("bootstrap needs at least 2 samples".into()));
    }
    if resamples < 1 {
        return Err(Error::InvalidArgument("bootstrap needs at least 1 resample".into()));
    }
    let a = area_between(&lif.fractions, &lif.mean, &mif.mean);
    let mut areas = Vec::with_capacity(resamples);
    for b in 0..resamples {
        let mut rng = seeds::rng(seed, "bootstrap", b as u64);
        let indices: Vec<usize> =
            (0..n).map(|_| rand::Rng::gen_range(&mut rng, 0..n)).collect();
        let lif_mean = mean_curve(&lif.per_sample, Some(&indices));
        let mif_mean = mean_curve(&mif.per_sample, Some(&indices));
        areas.push(area_between(&lif.fractions, &lif_mean, &mif_mean));
    }
    areas.sort_by(f64::total_cmp);
    Ok(FidelityResult {
        a,
        ci_low: percentile(&areas, 0.025),
        ci_high: percentile(&areas, 0.975),
        num_samples: n,
        bootstrap_resamples: resamples,
        seed,
    })
}

/// Scores emitted in ranking order, for plotting against the logit curve.
pub fn ranked_score_series(map: &SaliencyMap2D, ranking: &PixelRanking) -> Vec<f32> {
    ranking.order.iter().map(|&i| map.scores.data()[i]).collect()
}

/// Per-sample MIF and LIF curves for a set of samples sharing one model.
#[derive(Debug, Clone)]
pub struct PairedSampleCurves {
    pub fractions: Vec<f64>,
    pub mif: Vec<Vec<f64>>,
    pub lif: Vec<Vec<f64>>,
    /// Samples skipped because their unperturbed logit was near zero.
    pub excluded: usize,
}

/// Rank each sample's map and compute both curves, dropping excluded samples
/// from both directions so the pairing stays intact.
pub fn paired_curves(
    model: &Model,
    images: &[Tensor],
    maps: &[SaliencyMap2D],
    fractions: &[f64],
    mask_value: f32,
) -> Result<PairedSampleCurves> {
    if images.len() != maps.len() {
        return Err(Error::InvalidArgument(format!(
            "{} images vs {} maps",
            images.len(),
            maps.len()
        )));
    }
    validate_fractions(fractions)?;
    let mut mif_curves = Vec::with_capacity(images.len());
    let mut lif_curves = Vec::with_capacity(images.len());
    let mut excluded = 0usize;
    for (image, map) in images.iter().zip(maps) {
        let mif_ranking = rank_pixels(map);
        let lif_ranking = mif_ranking.reversed();
        let mif = perturbation_curve(model, image, &mif_ranking, fractions, mask_value)?;
        let lif = perturbation_curve(model, image, &lif_ranking, fractions, mask_value)?;
        match (mif, lif) {
            (Some(m), Some(l)) => {
                mif_curves.push(m);
                lif_curves.push(l);
            }
            _ => excluded += 1,
        }
    }
    Ok(PairedSampleCurves {
        fractions: fractions.to_vec(),
        mif: mif_curves,
        lif: lif_curves,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerSpec;
    use crate::saliency::Signedness;
    use proptest::prelude::*;
    use rand::Rng;

    fn map2d(scores: Tensor) -> SaliencyMap2D {
        SaliencyMap2D {
            scores,
            signedness: Signedness::Signed,
            reduction: None,
            estimator: None,
        }
    }

    #[test]
    fn rank_four_pixel_example() {
        let map = map2d(Tensor::new(vec![2, 2], vec![3.0, 1.0, -2.0, 0.0]).unwrap());
        let mif = rank_pixels(&map);
        // (0,0)=3, (0,1)=1, (1,1)=0, (1,0)=-2
        assert_eq!(mif.order, vec![0, 1, 3, 2]);
        let lif = mif.reversed();
        assert_eq!(lif.order, vec![2, 3, 1, 0]);
        assert_eq!(lif.direction, Direction::Lif);
    }

    #[test]
    fn rank_ties_break_row_major() {
        let map = map2d(Tensor::filled(vec![2, 3], 0.5));
        let mif = rank_pixels(&map);
        assert_eq!(mif.order, vec![0, 1, 2, 3, 4, 5]);
    }

    fn tiny_model(inputs: (usize, usize, usize), classes: usize, seed: u64) -> Model {
        let layers = vec![LayerSpec::Flatten, LayerSpec::Dense { units: classes }];
        Model::build(inputs, &layers, seed).unwrap()
    }

    #[test]
    fn curve_starts_at_one_and_full_mask_ignores_ranking() {
        let model = tiny_model((2, 2, 1), 3, 5);
        let image = Tensor::new(vec![2, 2, 1], vec![0.9, -0.4, 0.2, 0.6]).unwrap();
        let grid = vec![0.0, 0.5, 1.0];
        let map_a = map2d(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let map_b = map2d(Tensor::new(vec![2, 2], vec![4.0, 3.0, 2.0, 1.0]).unwrap());
        let curve_a =
            perturbation_curve(&model, &image, &rank_pixels(&map_a), &grid, 0.0)
                .unwrap()
                .unwrap();
        let curve_b =
            perturbation_curve(&model, &image, &rank_pixels(&map_b), &grid, 0.0)
                .unwrap()
                .unwrap();
        assert_eq!(curve_a[0], 1.0);
        assert_eq!(curve_b[0], 1.0);
        assert_eq!(curve_a[2], curve_b[2], "full mask must not depend on ranking");
    }

    #[test]
    fn curve_matches_brute_force_masked_copies() {
        for (h, w) in [(2usize, 2usize), (4, 4)] {
            let model = tiny_model((h, w, 1), 4, 9);
            let mut rng = seeds::rng(77, "curve-oracle", (h * w) as u64);
            let image = Tensor::from_fn(vec![h, w, 1], |_| rng.gen_range(-1.0..1.0f32));
            let scores = Tensor::from_fn(vec![h, w], |_| rng.gen_range(-1.0..1.0f32));
            let ranking = rank_pixels(&map2d(scores));
            let grid: Vec<f64> = (0..=(h * w)).map(|k| k as f64 / (h * w) as f64).collect();
            let curve = perturbation_curve(&model, &image, &ranking, &grid, 0.0)
                .unwrap()
                .unwrap();

            // brute force: fresh copy per fraction
            let logits = model.forward_single(&image).unwrap();
            let class = argmax(&logits);
            let s0 = logits[class] as f64;
            for (gi, &f) in grid.iter().enumerate() {
                let k = (f * (h * w) as f64).floor() as usize;
                let mut fresh = image.clone();
                for &pixel in &ranking.order[..k] {
                    fresh.data_mut()[pixel] = 0.0;
                }
                let s = model.forward_single(&fresh).unwrap()[class] as f64;
                let expect = s / s0;
                assert!(
                    (curve[gi] - expect).abs() < 1e-6,
                    "{h}x{w} fraction {f}: {} vs {expect}",
                    curve[gi]
                );
            }
        }
    }

    #[test]
    fn near_zero_logit_is_excluded() {
        let layers = vec![LayerSpec::Flatten, LayerSpec::Dense { units: 2 }];
        let mut model = Model::build((1, 2, 1), &layers, 0).unwrap();
        model.set_param("layer1.weight", Tensor::zeros(vec![2, 2])).unwrap();
        let image = Tensor::new(vec![1, 2, 1], vec![0.4, 0.6]).unwrap();
        let ranking = rank_pixels(&map2d(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap()));
        let out = perturbation_curve(&model, &image, &ranking, &[0.0, 1.0], 0.0).unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn invalid_grids_are_rejected() {
        let model = tiny_model((1, 2, 1), 2, 1);
        let image = Tensor::new(vec![1, 2, 1], vec![0.4, 0.6]).unwrap();
        let ranking = rank_pixels(&map2d(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap()));
        for bad in [vec![], vec![0.1, 0.5], vec![0.0, 0.5, 0.5], vec![0.0, 1.5]] {
            assert!(
                perturbation_curve(&model, &image, &ranking, &bad, 0.0).is_err(),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn aggregate_examples() {
        let grid = vec![0.0, 0.5, 1.0];
        let one = aggregate_curves(&grid, Direction::Mif, vec![vec![1.0, 0.5, 0.2]]).unwrap();
        assert_eq!(one.mean, vec![1.0, 0.5, 0.2]);

        let two = aggregate_curves(
            &grid,
            Direction::Mif,
            vec![vec![1.0, 0.4, 0.0], vec![1.0, 0.8, 0.4]],
        )
        .unwrap();
        assert_eq!(two.mean, vec![1.0, 0.6000000000000001, 0.2]);

        assert!(aggregate_curves(&grid, Direction::Mif, vec![]).is_err());
        assert!(aggregate_curves(&grid, Direction::Mif, vec![vec![1.0]]).is_err());
    }

    #[test]
    fn aggregate_mean_matches_recomputation() {
        let mut rng = seeds::rng(5, "aggregate", 0);
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let curves: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..11).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let agg = aggregate_curves(&grid, Direction::Lif, curves.clone()).unwrap();
        for j in 0..11 {
            let expect: f64 = curves.iter().map(|c| c[j]).sum::<f64>() / 100.0;
            assert!((agg.mean[j] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn area_trivial_cases() {
        let grid = default_fraction_grid();
        let flat = vec![1.0; grid.len()];
        let zero = vec![0.0; grid.len()];
        let lif = aggregate_curves(&grid, Direction::Lif, vec![flat.clone()]).unwrap();
        let mif_same = aggregate_curves(&grid, Direction::Mif, vec![flat]).unwrap();
        assert_eq!(fidelity_area(&lif, &mif_same).unwrap(), 0.0);
        let mif_zero = aggregate_curves(&grid, Direction::Mif, vec![zero]).unwrap();
        assert!((fidelity_area(&lif, &mif_zero).unwrap() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn area_matches_piecewise_linear_antiderivative() {
        // lif - mif is piecewise linear with breakpoints on the grid; the
        // oracle integrates each piece with the antiderivative a*x + b*x^2/2.
        let grid = default_fraction_grid();
        let breaks = [0.0, 0.2, 0.6, 1.0];
        let knot_vals = [0.0, 0.8, -0.4, 0.3];
        let diff_at = |f: f64| -> f64 {
            for i in 1..breaks.len() {
                if f <= breaks[i] {
                    let t = (f - breaks[i - 1]) / (breaks[i] - breaks[i - 1]);
                    return knot_vals[i - 1] + t * (knot_vals[i] - knot_vals[i - 1]);
                }
            }
            unreachable!()
        };
        let lif_vals: Vec<f64> = grid.iter().map(|&f| 0.5 + diff_at(f)).collect();
        let mif_vals: Vec<f64> = grid.iter().map(|_| 0.5).collect();
        let lif = aggregate_curves(&grid, Direction::Lif, vec![lif_vals]).unwrap();
        let mif = aggregate_curves(&grid, Direction::Mif, vec![mif_vals]).unwrap();

        let mut analytic = 0.0f64;
        for i in 1..breaks.len() {
            // segment from breaks[i-1] to breaks[i] in percent units
            let x0 = breaks[i - 1] * 100.0;
            let x1 = breaks[i] * 100.0;
            let y0 = knot_vals[i - 1];
            let y1 = knot_vals[i];
            let slope = (y1 - y0) / (x1 - x0);
            let integral = |x: f64| y0 * (x - x0) + slope * (x - x0) * (x - x0) / 2.0;
            analytic += integral(x1);
        }
        let got = fidelity_area(&lif, &mif).unwrap();
        assert!((got - analytic).abs() < 1e-9, "{got} vs {analytic}");
    }

    #[test]
    fn area_rejects_grid_mismatch() {
        let a = aggregate_curves(&[0.0, 1.0], Direction::Lif, vec![vec![1.0, 0.0]]).unwrap();
        let b =
            aggregate_curves(&[0.0, 0.5, 1.0], Direction::Mif, vec![vec![1.0, 0.5, 0.0]]).unwrap();
        assert!(fidelity_area(&a, &b).is_err());
    }

    #[test]
    fn bootstrap_degenerate_distribution() {
        let grid = vec![0.0, 1.0];
        let lif = aggregate_curves(&grid, Direction::Lif, vec![vec![1.0, 0.8]; 5]).unwrap();
        let mif = aggregate_curves(&grid, Direction::Mif, vec![vec![1.0, 0.3]; 5]).unwrap();
        let r = bootstrap_ci(&lif, &mif, 200, 3).unwrap();
        assert_eq!(r.ci_low, r.a);
        assert_eq!(r.ci_high, r.a);
        assert_eq!(r.num_samples, 5);
    }

    #[test]
    fn bootstrap_needs_two_samples() {
        let grid = vec![0.0, 1.0];
        let lif = aggregate_curves(&grid, Direction::Lif, vec![vec![1.0, 0.8]]).unwrap();
        let mif = aggregate_curves(&grid, Direction::Mif, vec![vec![1.0, 0.3]]).unwrap();
        assert!(bootstrap_ci(&lif, &mif, 100, 0).is_err());
    }

    #[test]
    fn bootstrap_interval_brackets_the_point_estimate() {
        let mut rng = seeds::rng(77, "ci-bracket", 0);
        let grid = vec![0.0, 0.5, 1.0];
        let rows = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..60)
                .map(|_| vec![1.0, rng.gen_range(0.2..1.1), rng.gen_range(-0.2..0.7)])
                .collect()
        };
        let lif = aggregate_curves(&grid, Direction::Lif, rows(&mut rng)).unwrap();
        let mif = aggregate_curves(&grid, Direction::Mif, rows(&mut rng)).unwrap();
        let r = bootstrap_ci(&lif, &mif, 1000, 5).unwrap();
        assert!(r.ci_low <= r.a && r.a <= r.ci_high, "{r:?}");
    }

    #[test]
    fn bootstrap_coverage_on_gaussian_areas() {
        // Per-sample areas ~ Normal(1, 5^2) constructed on a two-point grid;
        // the 95% CI should cover the true mean in roughly 95% of trials.
        let grid = vec![0.0, 1.0];
        let true_mean = 1.0;
        let mut covered = 0usize;
        let trials = 200;
        let mut rng = seeds::rng(2024, "coverage", 0);
        for t in 0..trials {
            let n = 40;
            let mut lif_rows = Vec::with_capacity(n);
            let mut mif_rows = Vec::with_capacity(n);
            for _ in 0..n {
                let a: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * 5.0 + true_mean;
                // area = 50 * (lif_1 - mif_1) when curves share value 1 at f=0
                let delta = a / 100.0;
                lif_rows.push(vec![1.0, 0.5 + delta]);
                mif_rows.push(vec![1.0, 0.5 - delta]);
            }
            let lif = aggregate_curves(&grid, Direction::Lif, lif_rows).unwrap();
            let mif = aggregate_curves(&grid, Direction::Mif, mif_rows).unwrap();
            let r = bootstrap_ci(&lif, &mif, 1000, 9000 + t).unwrap();
            if r.ci_low <= true_mean && true_mean <= r.ci_high {
                covered += 1;
            }
        }
        let coverage = covered as f64 / trials as f64;
        assert!(
            (0.88..=0.99).contains(&coverage),
            "bootstrap coverage {coverage} far from nominal 0.95"
        );
    }

    #[test]
    fn ranked_series_properties() {
        let map = map2d(Tensor::new(vec![2, 2], vec![0.3, -0.7, 0.1, 0.9]).unwrap());
        let mif = rank_pixels(&map);
        let lif = mif.reversed();
        let series_lif = ranked_score_series(&map, &lif);
        let series_mif = ranked_score_series(&map, &mif);
        assert_eq!(series_lif.len(), 4);
        assert_eq!(series_lif[0], -0.7, "first LIF element is the minimum score");
        assert!(series_lif.windows(2).all(|w| w[0] <= w[1]));
        let rev: Vec<f32> = series_mif.iter().rev().copied().collect();
        assert_eq!(series_lif, rev);
    }

    #[test]
    fn masked_sets_are_nested_along_the_grid() {
        let grid = default_fraction_grid();
        let mut prev = 0usize;
        for &f in &grid {
            let k = masked_count(f, 784);
            assert!(k >= prev);
            prev = k;
        }
        assert_eq!(masked_count(1.0, 784), 784);
        assert_eq!(masked_count(0.0, 784), 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn mif_reversed_is_lif_and_both_are_permutations(seed in 0u64..10_000) {
            let mut rng = seeds::rng(seed, "prop-rank", 0);
            let map = map2d(Tensor::from_fn(vec![5, 4], |_| rng.gen_range(-1.0..1.0f32)));
            let mif = rank_pixels(&map);
            let lif = mif.reversed();
            let mut seen = [false; 20];
            for &i in &mif.order {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
            prop_assert!(seen.iter().all(|&s| s));
            let rev: Vec<usize> = mif.order.iter().rev().copied().collect();
            prop_assert_eq!(rev, lif.order);
            // scores along MIF never increase
            for w in mif.order.windows(2) {
                prop_assert!(map.scores.data()[w[0]] >= map.scores.data()[w[1]]);
            }
        }
    }
}

//! Finite-difference gradient checking harness. Test-support only: shared by
//! the crate's integration tests and the workspace acceptance suite.
//!
//! Every check compares tape gradients against central finite differences of
//! the independent f64 [`reference`](crate::reference) kernels, using step
//! `h = 1e-3` and the relative error `|analytic - numeric| / max(1, |analytic|)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::model::{LayerSpec, Model};
use crate::reference;
use crate::seeds;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct OpReport {
    pub op: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
}

fn rand_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn f64_of(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Reduce `[K, ...]` node output to a scalar: flatten, right-multiply by a
/// fixed weight column, and sum the per-row results via gather + add.
fn scalarize(tape: &mut Tape, node: NodeId, weights: &Tensor) -> NodeId {
    let flat = tape.flatten(node).expect("rank >= 2");
    let w = tape.constant(weights.clone());
    let cols = tape.matmul(flat, w).expect("weight column fits");
    let rows = tape.value(cols).shape()[0];
    let mut acc = tape.gather_logit(cols, 0, 0).expect("row 0");
    for row in 1..rows {
        let g = tape.gather_logit(cols, row, 0).expect("row in range");
        acc = tape.add(acc, g).expect("scalars");
    }
    acc
}

/// Same functional on the reference side: dot every row of the flattened
/// output with the weight column and sum.
fn dot_rows(out: &[f64], rest: usize, weights: &Tensor) -> f64 {
    let mut acc = 0.0;
    for (i, v) in out.iter().enumerate() {
        acc += v * weights.data()[i % rest] as f64;
    }
    acc
}

fn fd_max_err(analytic: &Tensor, x0: &[f64], f: impl FnMut(&[f64]) -> f64) -> f64 {
    let numeric = reference::central_diff(x0, FD_STEP, f);
    reference::max_rel_err(analytic.data(), &numeric)
}

pub fn check_matmul(instances: usize, seed: u64) -> OpReport {
    let mut max_err = 0.0f64;
    for i in 0..instances {
        let mut rng = seeds::rng(seed, "gc-matmul", i as u64);
        let (k, m, n) = (rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=3));
        let a = rand_tensor(vec![k, m], &mut rng);
        let b = rand_tensor(vec![m, n], &mut rng);
        let w = rand_tensor(vec![n, 1], &mut rng);

        let mut tape = Tape::new();
        let an = tape.input(a.clone());
        let bn = tape.param("b", b.clone());
        let c = tape.matmul(an, bn).unwrap();
        let s = scalarize(&mut tape, c, &w);
        let g = tape.backward(s).unwrap();

        let (af, bf) = (f64_of(&a), f64_of(&b));
        max_err = max_err.max(fd_max_err(g.wrt_input.as_ref().unwrap(), &af, |ad| {
            dot_rows(&reference::matmul(ad, &bf, k, m, n), n, &w)
        }));
        max_err = max_err.max(fd_max_err(&g.wrt_params["b"], &bf, |bd| {
            dot_rows(&reference::matmul(&af, bd, k, m, n), n, &w)
        }));
    }
    OpReport { op: "matmul", instances, max_rel_err: max_err }
}

pub fn check_conv2d(instances: usize, seed: u64) -> OpReport {
    let mut max_err = 0.0f64;
    for i in 0..instances {
        let mut rng = seeds::rng(seed, "gc-conv2d", i as u64);
        let kk = rng.gen_range(1..=3);
        let stride = rng.gen_range(1..=2);
        let padding = rng.gen_range(0..=1);
        let (k, cin, cout) = (rng.gen_range(1..=2), rng.gen_range(1..=2), rng.gen_range(1..=3));
        let h = rng.gen_range(kk.max(2)..=5);
        let wd = rng.gen_range(kk.max(2)..=5);
        let x = rand_tensor(vec![k, h, wd, cin], &mut rng);
        let kernel = rand_tensor(vec![kk, kk, cin, cout], &mut rng);
        let hout = (h + 2 * padding - kk) / stride + 1;
        let wout = (wd + 2 * padding - kk) / stride + 1;
        let rest = hout * wout * cout;
        let w = rand_tensor(vec![rest, 1], &mut rng);

        let mut tape = Tape::new();
        let xn = tape.input(x.clone());
        let kn = tape.param("k", kernel.clone());
        let c = tape.conv2d(xn, kn, stride, padding).unwrap();
        let s = scalarize(&mut tape, c, &w);
        let g = tape.backward(s).unwrap();

        let (xf, kf) = (f64_of(&x), f64_of(&kernel));
        max_err = max_err.max(fd_max_err(g.wrt_input.as_ref().unwrap(), &xf, |xd| {
            dot_rows(
                &reference::conv2d(xd, k, h, wd, cin, &kf, kk, kk, cout, stride, padding),
                rest,
                &w,
            )
        }));
        max_err = max_err.max(fd_max_err(&g.wrt_params["k"], &kf, |kd| {
            dot_rows(
                &reference::conv2d(&xf, k, h, wd, cin, kd, kk, kk, cout, stride, padding),
                rest,
                &w,
            )
        }));
    }
    OpReport { op: "conv2d", instances, max_rel_err: max_err }
}

pub fn check_relu(instances: usize, seed: u64) -> OpReport {
    let mut max_err = 0.0f64;
    for i in 0..instances {
        let mut rng = seeds::rng(seed, "gc-relu", i as u64);
        // keep activations away from the kink so finite differences are valid
        let x = Tensor::from_fn(vec![2, 5], |_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(0.05..1.0f32)
        });
        let w = rand_tensor(vec![5, 1], &mut rng);

        let mut tape = Tape::new();
        let xn = tape.input(x.clone());
        let r = tape.relu(xn);
        let s = scalarize(&mut tape, r, &w);
        let g = tape.backward(s).unwrap();

        max_err = max_err.max(fd_max_err(g.wrt_input.as_ref().unwrap(), &f64_of(&x), |xd| {
            dot_rows(&reference::relu(xd), 5, &w)
        }));
    }
    OpReport { op: "relu", instances, max_rel_err: max_err }
}

pub fn check_add_bias(instances: usize, seed: u64) -> OpReport {
    let mut max_err = 0.0f64;
    for i in 0..instances {
        let mut rng = seeds::rng(seed, "gc-add-bias", i as u64);
        let shape = if i % 2 == 0 {
            vec![rng.gen_range(1..=3), rng.gen_range(1..=4)]
        } else {
            vec![rng.gen_range(1..=2), 2, 3, rng.gen_range(1..=3)]
        };
        let u = *shape.last().unwrap();
        let rest: usize = shape[1..].iter().product();
        let x = rand_tensor(shape, &mut rng);
        let b = rand_tensor(vec![u], &mut rng);
        let w = rand_tensor(vec![rest, 1], &mut rng);

        let mut tape = Tape::new();
        let xn = tape.input(x.clone());
        let bn = tape.param("b", b.clone());
        let y = tape.add_bias(xn, bn).unwrap();
        let s = scalarize(&mut tape, y, &w);
        let g = tape.backward(s).unwrap();

        let (xf, bf) = (f64_of(&x), f64_of(&b));
        max_err = max_err.max(fd_max_err(g.wrt_input.as_ref().unwrap(), &xf, |xd| {
            dot_rows(&reference::add_bias(xd, &bf), rest, &w)
        }));
        max_err = max_err.max(fd_max_err(&g.wrt_params["b"], &bf, |bd| {
            dot_rows(&reference::add_bias(&xf, bd), rest, &w)
        }));
    }
    OpReport { op: "add-bias", instances, max_rel_err: max_err }
}

pub fn check_flatten(instances: usize, seed: u64) -> OpReport {
    let mut max_err = 0.0f64;
    for i in 0..instances {
        let mut rng = seeds::rng(seed, "gc-flatten", i as u64);
        let shape = vec![rng.gen_range(1..=2), 2, rng.gen_range(1..=3), rng.gen_range(1..=2)];
        let rest: usize = shape[1..].iter().product();
        let x = rand_tensor(shape, &mut rng);
        let w = rand_tensor(vec![rest, 1], &mut rng);

        let mut tape = Tape::new();
        let xn = tape.input(x.clone());
        let f = tape.flatten(xn).unwrap();
        let s = scalarize(&mut tape, f, &w);
        let g = tape.backward(s).unwrap();

        max_err = max_err.max(fd_max_err(g.wrt_input.as_ref().unwrap(), &f64_of(&x), |xd| {
            dot_rows(xd, rest, &w)
        }));
    }
    OpReport { op: "flatten", instances, max_rel_err: max_err }
}

pub fn check_pool(instances: usize, seed: u64) -> OpReport {
    let mut max_err = 0.0f64;
    for i in 0..instances {
        let mut rng = seeds::rng(seed, "gc-pool", i as u64);
        let window = if i % 2 == 0 { 2 } else { 3 };
        let (k, c) = (rng.gen_range(1..=2), rng.gen_range(1..=2));
        let (h, wd) = (6, 6);
        let x = rand_tensor(vec![k, h, wd, c], &mut rng);
        let rest = (h / window) * (wd / window) * c;
        let w = rand_tensor(vec![rest, 1], &mut rng);

        let mut tape = Tape::new();
        let xn = tape.input(x.clone());
        let p = tape.avg_pool(xn, window).unwrap();
        let s = scalarize(&mut tape, p, &w);
        let g = tape.backward(s).unwrap();

        max_err = max_err.max(fd_max_err(g.wrt_input.as_ref().unwrap(), &f64_of(&x), |xd| {
            dot_rows(&reference::avg_pool(xd, k, h, wd, c, window), rest, &w)
        }));
    }
    OpReport { op: "pool", instances, max_rel_err: max_err }
}

pub fn check_softmax_xent(instances: usize, seed: u64) -> OpReport {
    let mut max_err = 0.0f64;
    for i in 0..instances {
        let mut rng = seeds::rng(seed, "gc-xent", i as u64);
        let (k, c) = (rng.gen_range(1..=3), rng.gen_range(2..=5));
        let x = Tensor::from_fn(vec![k, c], |_| rng.gen_range(-2.0..2.0));
        let labels: Vec<usize> = (0..k).map(|_| rng.gen_range(0..c)).collect();

        let mut tape = Tape::new();
        let xn = tape.input(x.clone());
        let loss = tape.softmax_cross_entropy(xn, &labels).unwrap();
        let g = tape.backward(loss).unwrap();

        max_err = max_err.max(fd_max_err(g.wrt_input.as_ref().unwrap(), &f64_of(&x), |xd| {
            reference::softmax_xent(xd, k, c, &labels)
        }));
    }
    OpReport { op: "softmax-xent", instances, max_rel_err: max_err }
}

pub fn check_scale(instances: usize, seed: u64) -> OpReport {
    let mut max_err = 0.0f64;
    for i in 0..instances {
        let mut rng = seeds::rng(seed, "gc-scale", i as u64);
        let x = rand_tensor(vec![2, 4], &mut rng);
        let factor: f32 = rng.gen_range(-2.0..2.0);
        let w = rand_tensor(vec![4, 1], &mut rng);

        let mut tape = Tape::new();
        let xn = tape.input(x.clone());
        let y = tape.scale(xn, factor);
        let s = scalarize(&mut tape, y, &w);
        let g = tape.backward(s).unwrap();

        max_err = max_err.max(fd_max_err(g.wrt_input.as_ref().unwrap(), &f64_of(&x), |xd| {
            let scaled: Vec<f64> = xd.iter().map(|v| v * factor as f64).collect();
            dot_rows(&scaled, 4, &w)
        }));
    }
    OpReport { op: "scale", instances, max_rel_err: max_err }
}

pub fn check_add(instances: usize, seed: u64) -> OpReport {
    check_binary("add", instances, seed, false)
}

pub fn check_mul(instances: usize, seed: u64) -> OpReport {
    check_binary("mul", instances, seed, true)
}

fn check_binary(op: &'static str, instances: usize, seed: u64, is_mul: bool) -> OpReport {
    let mut max_err = 0.0f64;
    for i in 0..instances {
        let mut rng = seeds::rng(seed, if is_mul { "gc-mul" } else { "gc-add" }, i as u64);
        let a = rand_tensor(vec![2, 3], &mut rng);
        let b = rand_tensor(vec![2, 3], &mut rng);
        let w = rand_tensor(vec![3, 1], &mut rng);

        let mut tape = Tape::new();
        let an = tape.input(a.clone());
        let bn = tape.param("b", b.clone());
        let y = if is_mul { tape.mul(an, bn).unwrap() } else { tape.add(an, bn).unwrap() };
        let s = scalarize(&mut tape, y, &w);
        let g = tape.backward(s).unwrap();

        let (af, bf) = (f64_of(&a), f64_of(&b));
        let combine = |ad: &[f64], bd: &[f64]| -> Vec<f64> {
            ad.iter()
                .zip(bd)
                .map(|(x, y)| if is_mul { x * y } else { x + y })
                .collect()
        };
        max_err = max_err.max(fd_max_err(g.wrt_input.as_ref().unwrap(), &af, |ad| {
            dot_rows(&combine(ad, &bf), 3, &w)
        }));
        max_err = max_err.max(fd_max_err(&g.wrt_params["b"], &bf, |bd| {
            dot_rows(&combine(&af, bd), 3, &w)
        }));
    }
    OpReport { op, instances, max_rel_err: max_err }
}

pub fn check_gather_logit(instances: usize, seed: u64) -> OpReport {
    let mut max_err = 0.0f64;
    for i in 0..instances {
        let mut rng = seeds::rng(seed, "gc-gather", i as u64);
        let (k, c) = (rng.gen_range(1..=3), rng.gen_range(2..=5));
        let x = rand_tensor(vec![k, c], &mut rng);
        let row = rng.gen_range(0..k);
        let class = rng.gen_range(0..c);

        let mut tape = Tape::new();
        let xn = tape.input(x.clone());
        let s = tape.gather_logit(xn, row, class).unwrap();
        let g = tape.backward(s).unwrap();

        max_err = max_err.max(fd_max_err(g.wrt_input.as_ref().unwrap(), &f64_of(&x), |xd| {
            xd[row * c + class]
        }));
    }
    OpReport { op: "gather-logit", instances, max_rel_err: max_err }
}

/// Gradcheck every primitive op.
pub fn check_all_ops(instances: usize, seed: u64) -> Vec<OpReport> {
    vec![
        check_matmul(instances, seed),
        check_conv2d(instances, seed),
        check_relu(instances, seed),
        check_add_bias(instances, seed),
        check_flatten(instances, seed),
        check_pool(instances, seed),
        check_softmax_xent(instances, seed),
        check_scale(instances, seed),
        check_add(instances, seed),
        check_mul(instances, seed),
        check_gather_logit(instances, seed),
    ]
}

/// Randomized two-layer MLP: every parameter gradient and the input gradient
/// against finite differences of the reference forward pass.
pub fn check_mlp(instances: usize, seed: u64) -> ModelGradcheck {
    let layers = vec![
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 6 },
        LayerSpec::Relu,
        LayerSpec::Dense { units: 3 },
    ];
    let input_shape = (1, 4, 1);
    let mut total = ModelGradcheck { max_rel_err: 0.0, checked: 0, skipped: 0 };
    for i in 0..instances {
        let mut rng = seeds::rng(seed, "gc-mlp", i as u64);
        let model = Model::build(input_shape, &layers, seeds::derive(seed, "gc-mlp-init", i as u64))
            .unwrap();
        let x = rand_tensor(vec![1, 4, 1], &mut rng);
        let class = rng.gen_range(0..3);
        let result = model_gradcheck(&model, &x, class);
        total.max_rel_err = total.max_rel_err.max(result.max_rel_err);
        total.checked += result.checked;
        total.skipped += result.skipped;
    }
    total
}

/// Outcome of a model-level gradient check with kink filtering.
#[derive(Debug, Clone, Copy)]
pub struct ModelGradcheck {
    pub max_rel_err: f64,
    /// Coordinates whose central difference was valid (no relu input changed
    /// sign across the probe interval).
    pub checked: usize,
    pub skipped: usize,
}

/// Finite differences of a model scalar with respect to one coordinate
/// vector, skipping coordinates where a relu kink falls inside the probe
/// interval (there the two-sided difference does not estimate a derivative).
fn filtered_central_diff(
    x0: &[f64],
    analytic: &[f32],
    mut eval: impl FnMut(&[f64]) -> (f64, Vec<bool>),
) -> ModelGradcheck {
    let mut probe = x0.to_vec();
    let mut max_rel_err = 0.0f64;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    for i in 0..x0.len() {
        let orig = probe[i];
        probe[i] = orig + FD_STEP;
        let (fp, pat_p) = eval(&probe);
        probe[i] = orig - FD_STEP;
        let (fm, pat_m) = eval(&probe);
        probe[i] = orig;
        if pat_p != pat_m {
            skipped += 1;
            continue;
        }
        checked += 1;
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        let a = analytic[i] as f64;
        max_rel_err = max_rel_err.max((a - numeric).abs() / a.abs().max(1.0));
    }
    ModelGradcheck { max_rel_err, checked, skipped }
}

/// Input-gradient check of a full model against finite differences of the
/// reference forward pass.
pub fn model_input_gradcheck(model: &Model, image: &Tensor, class: usize) -> ModelGradcheck {
    let mut tape = Tape::new();
    let s = image.shape().to_vec();
    let batch = image.reshaped(vec![1, s[0], s[1], s[2]]).unwrap();
    let (_, logits) = model.trace_logits(&mut tape, batch).unwrap();
    let root = tape.gather_logit(logits, 0, class).unwrap();
    let g = tape.backward(root).unwrap();
    let analytic = g.wrt_input.unwrap();

    let params = reference::params_f64(model);
    filtered_central_diff(&f64_of(image), analytic.data(), |xd| {
        let (logits, pattern) = reference::model_logits_and_relu_pattern(
            model.input_shape(),
            model.layers(),
            &params,
            xd,
        );
        (logits[class], pattern)
    })
}

fn model_gradcheck(model: &Model, image: &Tensor, class: usize) -> ModelGradcheck {
    let input = model_input_gradcheck(model, image, class);
    let mut max_err = input.max_rel_err;
    let mut checked = input.checked;
    let mut skipped = input.skipped;

    let mut tape = Tape::new();
    let s = image.shape().to_vec();
    let batch = image.reshaped(vec![1, s[0], s[1], s[2]]).unwrap();
    let (_, logits) = model.trace_logits(&mut tape, batch).unwrap();
    let root = tape.gather_logit(logits, 0, class).unwrap();
    let g = tape.backward(root).unwrap();

    let image_f64 = f64_of(image);
    let base_params = reference::params_f64(model);
    for (name, analytic) in &g.wrt_params {
        let mut params = base_params.clone();
        let x0 = params[name].clone();
        let result = filtered_central_diff(&x0, analytic.data(), |pd| {
            params.get_mut(name).unwrap().copy_from_slice(pd);
            let (logits, pattern) = reference::model_logits_and_relu_pattern(
                model.input_shape(),
                model.layers(),
                &params,
                &image_f64,
            );
            (logits[class], pattern)
        });
        max_err = max_err.max(result.max_rel_err);
        checked += result.checked;
        skipped += result.skipped;
    }
    ModelGradcheck { max_rel_err: max_err, checked, skipped }
}

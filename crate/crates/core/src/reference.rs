//! Slow all-`f64` reference kernels, kept deliberately independent of the
//! tape implementation. Test-support only: integration tests use these as
//! oracles for finite-difference gradient checks and forward-value
//! comparisons. Not part of the supported API.

use crate::model::{LayerSpec, Model};

/// `[k, m] @ [m, n]` in plain f64.
pub fn matmul(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..k {
        for p in 0..m {
            let av = a[i * m + p];
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Zero-padded convolution, input `[k,h,w,cin]`, kernel `[kh,kw,cin,cout]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    k: usize,
    h: usize,
    w: usize,
    cin: usize,
    kernel: &[f64],
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let hout = (h + 2 * padding - kh) / stride + 1;
    let wout = (w + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0; k * hout * wout * cout];
    for bk in 0..k {
        for ho in 0..hout {
            for wo in 0..wout {
                let obase = ((bk * hout + ho) * wout + wo) * cout;
                for i in 0..kh {
                    for j in 0..kw {
                        let hi = (ho * stride + i) as isize - padding as isize;
                        let wi = (wo * stride + j) as isize - padding as isize;
                        if hi < 0 || hi >= h as isize || wi < 0 || wi >= w as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            let xv = x[((bk * h + hi as usize) * w + wi as usize) * cin + ci];
                            let wrow = &kernel
                                [((i * kw + j) * cin + ci) * cout..((i * kw + j) * cin + ci + 1) * cout];
                            for (o, &wv) in out[obase..obase + cout].iter_mut().zip(wrow) {
                                *o += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn avg_pool(x: &[f64], k: usize, h: usize, w: usize, c: usize, window: usize) -> Vec<f64> {
    let (hout, wout) = (h / window, w / window);
    let mut out = vec![0.0; k * hout * wout * c];
    for bk in 0..k {
        for ho in 0..hout {
            for wo in 0..wout {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for i in 0..window {
                        for j in 0..window {
                            acc += x[((bk * h + ho * window + i) * w + wo * window + j) * c + ch];
                        }
                    }
                    out[((bk * hout + ho) * wout + wo) * c + ch] =
                        acc / (window * window) as f64;
                }
            }
        }
    }
    out
}

pub fn add_bias(x: &[f64], bias: &[f64]) -> Vec<f64> {
    let u = bias.len();
    x.iter().enumerate().map(|(i, &v)| v + bias[i % u]).collect()
}

/// Mean softmax cross-entropy over rows of `[k, c]` logits.
pub fn softmax_xent(logits: &[f64], k: usize, c: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for row in 0..k {
        let r = &logits[row * c..(row + 1) * c];
        let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = r.iter().map(|&v| (v - m).exp()).sum();
        total += -(r[labels[row]] - m) + z.ln();
    }
    total / k as f64
}

/// Convert a model's parameters to f64 vectors keyed by name.
pub fn params_f64(model: &Model) -> std::collections::BTreeMap<String, Vec<f64>> {
    model
        .params()
        .iter()
        .map(|(k, v)| (k.clone(), v.data().iter().map(|&x| x as f64).collect()))
        .collect()
}

/// Forward pass of a layer chain on one `[h, w, c]` image, entirely in f64,
/// with explicit parameter values (so finite differences can perturb them
/// without f32 quantization).
pub fn model_logits_f64(
    input_shape: (usize, usize, usize),
    layers: &[LayerSpec],
    params: &std::collections::BTreeMap<String, Vec<f64>>,
    image: &[f64],
) -> Vec<f64> {
    let (h0, w0, c0) = input_shape;
    assert_eq!(image.len(), h0 * w0 * c0, "image size mismatch");
    let mut act = image.to_vec();
    let (mut h, mut w, mut c) = (h0, w0, c0);
    let mut flat: Option<usize> = None;
    for (idx, layer) in layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv { out_channels, kernel, stride, padding } => {
                let wt = &params[&format!("layer{idx}.weight")];
                let bias = &params[&format!("layer{idx}.bias")];
                act = conv2d(&act, 1, h, w, c, wt, *kernel, *kernel, *out_channels, *stride, *padding);
                act = add_bias(&act, bias);
                h = (h + 2 * padding - kernel) / stride + 1;
                w = (w + 2 * padding - kernel) / stride + 1;
                c = *out_channels;
            }
            LayerSpec::Relu => act = relu(&act),
            LayerSpec::Pool { window } => {
                act = avg_pool(&act, 1, h, w, c, *window);
                h /= window;
                w /= window;
            }
            LayerSpec::Flatten => flat = Some(h * w * c),
            LayerSpec::Dense { units } => {
                let m = flat.unwrap_or(h * w * c);
                let wt = &params[&format!("layer{idx}.weight")];
                let bias = &params[&format!("layer{idx}.bias")];
                act = matmul(&act, wt, 1, m, *units);
                act = add_bias(&act, bias);
                flat = Some(*units);
            }
        }
    }
    act
}

/// Forward pass of a whole model on one `[h, w, c]` image, entirely in f64.
pub fn model_logits(model: &Model, image: &[f64]) -> Vec<f64> {
    model_logits_f64(model.input_shape(), model.layers(), &params_f64(model), image)
}

/// Forward pass that also records the sign of every relu input. Central
/// differences are only valid where the network is smooth on the whole probe
/// interval, so gradient checks compare these patterns at `x + h` and
/// `x - h` and skip probes that cross a relu kink.
pub fn model_logits_and_relu_pattern(
    input_shape: (usize, usize, usize),
    layers: &[LayerSpec],
    params: &std::collections::BTreeMap<String, Vec<f64>>,
    image: &[f64],
) -> (Vec<f64>, Vec<bool>) {
    let (h0, w0, c0) = input_shape;
    let mut act = image.to_vec();
    let (mut h, mut w, mut c) = (h0, w0, c0);
    let mut flat: Option<usize> = None;
    let mut pattern = Vec::new();
    for (idx, layer) in layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv { out_channels, kernel, stride, padding } => {
                let wt = &params[&format!("layer{idx}.weight")];
                let bias = &params[&format!("layer{idx}.bias")];
                act = conv2d(&act, 1, h, w, c, wt, *kernel, *kernel, *out_channels, *stride, *padding);
                act = add_bias(&act, bias);
                h = (h + 2 * padding - kernel) / stride + 1;
                w = (w + 2 * padding - kernel) / stride + 1;
                c = *out_channels;
            }
            LayerSpec::Relu => {
                pattern.extend(act.iter().map(|&v| v > 0.0));
                act = relu(&act);
            }
            LayerSpec::Pool { window } => {
                act = avg_pool(&act, 1, h, w, c, *window);
                h /= window;
                w /= window;
            }
            LayerSpec::Flatten => flat = Some(h * w * c),
            LayerSpec::Dense { units } => {
                let m = flat.unwrap_or(h * w * c);
                let wt = &params[&format!("layer{idx}.weight")];
                let bias = &params[&format!("layer{idx}.bias")];
                act = matmul(&act, wt, 1, m, *units);
                act = add_bias(&act, bias);
                flat = Some(*units);
            }
        }
    }
    (act, pattern)
}

/// Central finite difference of `f` with respect to each entry of `x`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Max relative error with the gradcheck denominator `max(1, |analytic|)`.
pub fn max_rel_err(analytic: &[f32], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a as f64 - n).abs() / (a as f64).abs().max(1.0))
        .fold(0.0, f64::max)
}

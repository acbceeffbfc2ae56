//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! Operations execute eagerly and record themselves on the tape; nodes only
//! reference earlier nodes, so insertion order is a topological order and the
//! backward pass is a single reverse sweep that visits each node once.
//! Forward kernels accumulate in `f64` and store `f32`; gradient buffers stay
//! in `f64` until they are handed back. A tape is single-threaded and is
//! rebuilt for every forward pass; recorded tensors are never mutated.
//!
//! Layout conventions: image batches are `[K, H, W, C]`, convolution kernels
//! `[kh, kw, Cin, Cout]`, matrices `[rows, cols]`, scalars `[1]`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(String),
    Constant,
    MatMul { lhs: NodeId, rhs: NodeId },
    Conv2d { input: NodeId, kernel: NodeId, stride: usize, padding: usize },
    Relu { input: NodeId },
    AddBias { input: NodeId, bias: NodeId },
    Flatten { input: NodeId },
    AvgPool { input: NodeId, window: usize },
    SoftmaxXent { logits: NodeId, labels: Vec<usize> },
    Scale { input: NodeId, factor: f32 },
    Add { lhs: NodeId, rhs: NodeId },
    Mul { lhs: NodeId, rhs: NodeId },
    GatherLogit { input: NodeId, row: usize, class: usize },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients of a scalar root with respect to the tape's leaves.
#[derive(Debug, Clone)]
pub struct GradientResult {
    /// Gradient with respect to the input leaf, if one was registered.
    pub wrt_input: Option<Tensor>,
    /// Gradients with respect to each named parameter leaf.
    pub wrt_params: BTreeMap<String, Tensor>,
}

/// Recording tape. Create one per forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    input: Option<NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    /// Register the input leaf. At most one input per tape.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        assert!(self.input.is_none(), "tape already has an input leaf");
        let id = self.push(Op::Input, value);
        self.input = Some(id);
        id
    }

    /// Register a named parameter leaf.
    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        self.push(Op::Param(name.to_string()), value)
    }

    /// Register a constant leaf; no gradient is reported for it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// `[K, M] @ [M, N] -> [K, N]`.
    pub fn matmul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        let (ashape, bshape) = (a.shape().to_vec(), b.shape().to_vec());
        if ashape.len() != 2 || bshape.len() != 2 || ashape[1] != bshape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{ashape:?} @ {bshape:?}"),
            });
        }
        let (k, m, n) = (ashape[0], ashape[1], bshape[1]);
        let out = matmul_raw(a.data(), b.data(), k, m, n);
        let value = Tensor::new(vec![k, n], out)?;
        Ok(self.push(Op::MatMul { lhs, rhs }, value))
    }

    /// 2D convolution with zero padding: input `[K, H, W, Cin]`, kernel
    /// `[kh, kw, Cin, Cout]` -> `[K, Hout, Wout, Cout]`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let (x, w) = (self.value(input), self.value(kernel));
        let xs = x.shape().to_vec();
        let ws = w.shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[3] != ws[2] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("input {xs:?}, kernel {ws:?}"),
            });
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d: stride must be >= 1".into()));
        }
        let (k, h, wd, cin) = (xs[0], xs[1], xs[2], xs[3]);
        let (kh, kw, _, cout) = (ws[0], ws[1], ws[2], ws[3]);
        if h + 2 * padding < kh || wd + 2 * padding < kw {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("kernel {kh}x{kw} larger than padded input {h}x{wd}+{padding}"),
            });
        }
        let hout = (h + 2 * padding - kh) / stride + 1;
        let wout = (wd + 2 * padding - kw) / stride + 1;
        let xd = x.data();
        let kd = w.data();
        let mut out = vec![0.0f32; k * hout * wout * cout];
        let mut acc = vec![0.0f64; cout];
        for bk in 0..k {
            for ho in 0..hout {
                for wo in 0..wout {
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    for i in 0..kh {
                        let hi = (ho * stride + i) as isize - padding as isize;
                        if hi < 0 || hi >= h as isize {
                            continue;
                        }
                        for j in 0..kw {
                            let wi = (wo * stride + j) as isize - padding as isize;
                            if wi < 0 || wi >= wd as isize {
                                continue;
                            }
                            let xbase = ((bk * h + hi as usize) * wd + wi as usize) * cin;
                            let wbase = (i * kw + j) * cin;
                            for ci in 0..cin {
                                let xv = xd[xbase + ci] as f64;
                                let wrow = &kd[(wbase + ci) * cout..(wbase + ci + 1) * cout];
                                for (a, &wv) in acc.iter_mut().zip(wrow) {
                                    *a += xv * wv as f64;
                                }
                            }
                        }
                    }
                    let obase = ((bk * hout + ho) * wout + wo) * cout;
                    for (o, &a) in out[obase..obase + cout].iter_mut().zip(&acc) {
                        *o = a as f32;
                    }
                }
            }
        }
        let value = Tensor::new(vec![k, hout, wout, cout], out)?;
        Ok(self.push(Op::Conv2d { input, kernel, stride, padding }, value))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(|v| v.max(0.0));
        self.push(Op::Relu { input }, value)
    }

    /// Broadcast `bias` of shape `[U]` over the trailing axis of `input`.
    pub fn add_bias(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        let (x, b) = (self.value(input), self.value(bias));
        let u = *x.shape().last().unwrap_or(&0);
        if b.shape().len() != 1 || b.shape()[0] != u {
            return Err(Error::ShapeMismatch {
                op: "add-bias",
                detail: format!("input {:?}, bias {:?}", x.shape(), b.shape()),
            });
        }
        let mut out = x.data().to_vec();
        for (i, v) in out.iter_mut().enumerate() {
            *v = (*v as f64 + b.data()[i % u] as f64) as f32;
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(Op::AddBias { input, bias }, value))
    }

    /// `[K, d1, d2, ...] -> [K, d1*d2*...]`.
    pub fn flatten(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        if x.shape().len() < 2 {
            return Err(Error::ShapeMismatch {
                op: "flatten",
                detail: format!("need rank >= 2, got {:?}", x.shape()),
            });
        }
        let k = x.shape()[0];
        let rest: usize = x.shape()[1..].iter().product();
        let value = x.reshaped(vec![k, rest])?;
        Ok(self.push(Op::Flatten { input }, value))
    }

    /// Non-overlapping average pooling over `[K, H, W, C]` with a square window.
    pub fn avg_pool(&mut self, input: NodeId, window: usize) -> Result<NodeId> {
        let x = self.value(input);
        let xs = x.shape().to_vec();
        if xs.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "pool",
                detail: format!("need rank 4, got {xs:?}"),
            });
        }
        if window == 0 || !xs[1].is_multiple_of(window) || !xs[2].is_multiple_of(window) {
            return Err(Error::ShapeMismatch {
                op: "pool",
                detail: format!("window {window} does not divide H x W = {}x{}", xs[1], xs[2]),
            });
        }
        let (k, h, wd, c) = (xs[0], xs[1], xs[2], xs[3]);
        let (hout, wout) = (h / window, wd / window);
        let inv = 1.0 / (window * window) as f64;
        let mut out = vec![0.0f32; k * hout * wout * c];
        for bk in 0..k {
            for ho in 0..hout {
                for wo in 0..wout {
                    for ch in 0..c {
                        let mut acc = 0.0f64;
                        for i in 0..window {
                            for j in 0..window {
                                acc += x.data()
                                    [((bk * h + ho * window + i) * wd + wo * window + j) * c + ch]
                                    as f64;
                            }
                        }
                        out[((bk * hout + ho) * wout + wo) * c + ch] = (acc * inv) as f32;
                    }
                }
            }
        }
        let value = Tensor::new(vec![k, hout, wout, c], out)?;
        Ok(self.push(Op::AvgPool { input, window }, value))
    }

    /// Mean softmax cross-entropy over the rows of `[K, C]` logits, with
    /// max-subtraction stabilization. Returns a scalar node.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let x = self.value(logits);
        let xs = x.shape().to_vec();
        if xs.len() != 2 || xs[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "softmax-xent",
                detail: format!("logits {xs:?}, {} labels", labels.len()),
            });
        }
        let (k, c) = (xs[0], xs[1]);
        for (row, &label) in labels.iter().enumerate() {
            if label >= c {
                return Err(Error::IndexOutOfRange {
                    op: "softmax-xent",
                    index: label,
                    bound: c,
                });
            }
            let _ = row;
        }
        let mut total = 0.0f64;
        for row in 0..k {
            let r = &x.data()[row * c..(row + 1) * c];
            let m = r.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let z: f64 = r.iter().map(|&v| (v as f64 - m).exp()).sum();
            total += -(r[labels[row]] as f64 - m) + z.ln();
        }
        let value = Tensor::scalar((total / k as f64) as f32);
        Ok(self.push(
            Op::SoftmaxXent { logits, labels: labels.to_vec() },
            value,
        ))
    }

    pub fn scale(&mut self, input: NodeId, factor: f32) -> NodeId {
        let value = self.value(input).map(|v| (v as f64 * factor as f64) as f32);
        self.push(Op::Scale { input, factor }, value)
    }

    pub fn add(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                detail: format!("{:?} + {:?}", a.shape(), b.shape()),
            });
        }
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x as f64 + y as f64) as f32)
            .collect();
        let value = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.push(Op::Add { lhs, rhs }, value))
    }

    pub fn mul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                detail: format!("{:?} * {:?}", a.shape(), b.shape()),
            });
        }
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x as f64 * y as f64) as f32)
            .collect();
        let value = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul { lhs, rhs }, value))
    }

    /// Select one pre-softmax activation from `[K, C]` logits as a scalar node.
    /// Gradients flow only through the selected component.
    pub fn gather_logit(&mut self, input: NodeId, row: usize, class: usize) -> Result<NodeId> {
        let x = self.value(input);
        let xs = x.shape().to_vec();
        if xs.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "gather-logit",
                detail: format!("need rank 2 logits, got {xs:?}"),
            });
        }
        if row >= xs[0] {
            return Err(Error::IndexOutOfRange { op: "gather-logit", index: row, bound: xs[0] });
        }
        if class >= xs[1] {
            return Err(Error::IndexOutOfRange { op: "gather-logit", index: class, bound: xs[1] });
        }
        let value = Tensor::scalar(x.data()[row * xs[1] + class]);
        Ok(self.push(Op::GatherLogit { input, row, class }, value))
    }

    /// Reverse sweep from a scalar root; returns gradients for every leaf.
    pub fn backward(&self, root: NodeId) -> Result<GradientResult> {
        let root_value = self.value(root);
        if root_value.numel() != 1 {
            return Err(Error::NonScalarRoot { shape: root_value.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        let mut result = GradientResult {
            wrt_input: None,
            wrt_params: BTreeMap::new(),
        };

        for id in (0..=root.0).rev() {
            let Some(grad) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {
                    result.wrt_input =
                        Some(to_f32_tensor(node.value.shape().to_vec(), &grad));
                }
                Op::Param(name) => {
                    result
                        .wrt_params
                        .insert(name.clone(), to_f32_tensor(node.value.shape().to_vec(), &grad));
                }
                Op::Constant => {}
                Op::MatMul { lhs, rhs } => {
                    let a = self.value(*lhs);
                    let b = self.value(*rhs);
                    let (k, m) = (a.shape()[0], a.shape()[1]);
                    let n = b.shape()[1];
                    // dA = dC . B^T, dB = A^T . dC
                    {
                        let da = accum(&mut grads, *lhs, k * m);
                        for i in 0..k {
                            let grow = &grad[i * n..(i + 1) * n];
                            for j in 0..m {
                                let brow = &b.data()[j * n..(j + 1) * n];
                                let mut acc = 0.0f64;
                                for (g, &bv) in grow.iter().zip(brow) {
                                    acc += g * bv as f64;
                                }
                                da[i * m + j] += acc;
                            }
                        }
                    }
                    let db = accum(&mut grads, *rhs, m * n);
                    for p in 0..k {
                        let grow = &grad[p * n..(p + 1) * n];
                        let arow = &a.data()[p * m..(p + 1) * m];
                        for (i, &av) in arow.iter().enumerate() {
                            let dbrow = &mut db[i * n..(i + 1) * n];
                            let av = av as f64;
                            for (slot, g) in dbrow.iter_mut().zip(grow) {
                                *slot += av * g;
                            }
                        }
                    }
                }
                Op::Conv2d { input, kernel, stride, padding } => {
                    let x = self.value(*input);
                    let w = self.value(*kernel);
                    let xs = x.shape();
                    let ws = w.shape();
                    let (k, h, wd, cin) = (xs[0], xs[1], xs[2], xs[3]);
                    let (kh, kw, cout) = (ws[0], ws[1], ws[3]);
                    let hout = (h + 2 * padding - kh) / stride + 1;
                    let wout = (wd + 2 * padding - kw) / stride + 1;
                    let xd = x.data();
                    let kd = w.data();
                    {
                        let dx = accum(&mut grads, *input, x.numel());
                        for bk in 0..k {
                            for ho in 0..hout {
                                for wo in 0..wout {
                                    let gbase = ((bk * hout + ho) * wout + wo) * cout;
                                    let grow = &grad[gbase..gbase + cout];
                                    for i in 0..kh {
                                        let hi = (ho * stride + i) as isize - *padding as isize;
                                        if hi < 0 || hi >= h as isize {
                                            continue;
                                        }
                                        for j in 0..kw {
                                            let wi =
                                                (wo * stride + j) as isize - *padding as isize;
                                            if wi < 0 || wi >= wd as isize {
                                                continue;
                                            }
                                            let xbase =
                                                ((bk * h + hi as usize) * wd + wi as usize) * cin;
                                            let wbase = (i * kw + j) * cin;
                                            for ci in 0..cin {
                                                let wrow = &kd
                                                    [(wbase + ci) * cout..(wbase + ci + 1) * cout];
                                                let mut acc = 0.0f64;
                                                for (g, &wv) in grow.iter().zip(wrow) {
                                                    acc += g * wv as f64;
                                                }
                                                dx[xbase + ci] += acc;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    {
                        let dw = accum(&mut grads, *kernel, w.numel());
                        for bk in 0..k {
                            for ho in 0..hout {
                                for wo in 0..wout {
                                    let gbase = ((bk * hout + ho) * wout + wo) * cout;
                                    let grow = &grad[gbase..gbase + cout];
                                    for i in 0..kh {
                                        let hi = (ho * stride + i) as isize - *padding as isize;
                                        if hi < 0 || hi >= h as isize {
                                            continue;
                                        }
                                        for j in 0..kw {
                                            let wi =
                                                (wo * stride + j) as isize - *padding as isize;
                                            if wi < 0 || wi >= wd as isize {
                                                continue;
                                            }
                                            let xbase =
                                                ((bk * h + hi as usize) * wd + wi as usize) * cin;
                                            let wbase = (i * kw + j) * cin;
                                            for ci in 0..cin {
                                                let xv = xd[xbase + ci] as f64;
                                                let wslot = &mut dw
                                                    [(wbase + ci) * cout..(wbase + ci + 1) * cout];
                                                for (slot, g) in wslot.iter_mut().zip(grow) {
                                                    *slot += g * xv;
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Relu { input } => {
                    let x = self.value(*input);
                    let dx = accum(&mut grads, *input, x.numel());
                    for (i, &v) in x.data().iter().enumerate() {
                        if v > 0.0 {
                            dx[i] += grad[i];
                        }
                    }
                }
                Op::AddBias { input, bias } => {
                    let x = self.value(*input);
                    let u = *x.shape().last().unwrap();
                    {
                        let dx = accum(&mut grads, *input, x.numel());
                        for (i, g) in grad.iter().enumerate() {
                            dx[i] += g;
                        }
                    }
                    let db = accum(&mut grads, *bias, u);
                    for (i, g) in grad.iter().enumerate() {
                        db[i % u] += g;
                    }
                }
                Op::Flatten { input } => {
                    let n = self.value(*input).numel();
                    let dx = accum(&mut grads, *input, n);
                    for (i, g) in grad.iter().enumerate() {
                        dx[i] += g;
                    }
                }
                Op::AvgPool { input, window } => {
                    let x = self.value(*input);
                    let xs = x.shape();
                    let (k, h, wd, c) = (xs[0], xs[1], xs[2], xs[3]);
                    let (hout, wout) = (h / window, wd / window);
                    let inv = 1.0 / (window * window) as f64;
                    let dx = accum(&mut grads, *input, x.numel());
                    for bk in 0..k {
                        for ho in 0..hout {
                            for wo in 0..wout {
                                for ch in 0..c {
                                    let g =
                                        grad[((bk * hout + ho) * wout + wo) * c + ch] * inv;
                                    for i in 0..*window {
                                        for j in 0..*window {
                                            dx[((bk * h + ho * window + i) * wd
                                                + wo * window
                                                + j)
                                                * c
                                                + ch] += g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::SoftmaxXent { logits, labels } => {
                    let x = self.value(*logits);
                    let (k, c) = (x.shape()[0], x.shape()[1]);
                    let g = grad[0] / k as f64;
                    let dx = accum(&mut grads, *logits, k * c);
                    for row in 0..k {
                        let r = &x.data()[row * c..(row + 1) * c];
                        let m = r.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
                        let z: f64 = r.iter().map(|&v| (v as f64 - m).exp()).sum();
                        for col in 0..c {
                            let p = (r[col] as f64 - m).exp() / z;
                            let indicator = if col == labels[row] { 1.0 } else { 0.0 };
                            dx[row * c + col] += g * (p - indicator);
                        }
                    }
                }
                Op::Scale { input, factor } => {
                    let n = self.value(*input).numel();
                    let dx = accum(&mut grads, *input, n);
                    for (i, g) in grad.iter().enumerate() {
                        dx[i] += g * *factor as f64;
                    }
                }
                Op::Add { lhs, rhs } => {
                    let n = grad.len();
                    {
                        let da = accum(&mut grads, *lhs, n);
                        for (i, g) in grad.iter().enumerate() {
                            da[i] += g;
                        }
                    }
                    let db = accum(&mut grads, *rhs, n);
                    for (i, g) in grad.iter().enumerate() {
                        db[i] += g;
                    }
                }
                Op::Mul { lhs, rhs } => {
                    let a = self.value(*lhs);
                    let b = self.value(*rhs);
                    let n = grad.len();
                    {
                        let da = accum(&mut grads, *lhs, n);
                        for (i, g) in grad.iter().enumerate() {
                            da[i] += g * b.data()[i] as f64;
                        }
                    }
                    let db = accum(&mut grads, *rhs, n);
                    for (i, g) in grad.iter().enumerate() {
                        db[i] += g * a.data()[i] as f64;
                    }
                }
                Op::GatherLogit { input, row, class } => {
                    let x = self.value(*input);
                    let c = x.shape()[1];
                    let dx = accum(&mut grads, *input, x.numel());
                    dx[row * c + class] += grad[0];
                }
            }
        }
        Ok(result)
    }
}

fn accum(grads: &mut [Option<Vec<f64>>], id: NodeId, numel: usize) -> &mut Vec<f64> {
    grads[id.0].get_or_insert_with(|| vec![0.0; numel])
}

fn to_f32_tensor(shape: Vec<usize>, data: &[f64]) -> Tensor {
    Tensor::new(shape, data.iter().map(|&v| v as f32).collect())
        .expect("gradient buffer matches leaf shape")
}

fn matmul_raw(a: &[f32], b: &[f32], k: usize, m: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; k * n];
    let mut row = vec![0.0f64; n];
    for i in 0..k {
        row.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..m {
            let av = a[i * m + p] as f64;
            let brow = &b[p * n..(p + 1) * n];
            for (r, &bv) in row.iter_mut().zip(brow) {
                *r += av * bv as f64;
            }
        }
        for (o, &r) in out[i * n..(i + 1) * n].iter_mut().zip(&row) {
            *o = r as f32;
        }
    }
    out
}

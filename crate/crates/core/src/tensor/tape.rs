//! Forward recording and reverse sweep.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order; backward walks it once in reverse.

use super::gemm::{sgemm, Layout};
use super::{window_output_len, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const PROB_FLOOR: f64 = 1e-7;

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var, geom: ConvGeom },
    Dense { input: Var, weight: Var, bias: Var, batch: usize },
    Relu(Var),
    Sigmoid(Var),
    MaxPool { input: Var, argmax: Vec<u32> },
    Upsample { input: Var, src: Vec<u32> },
    Reshape(Var),
    Add(Var, Var),
    Scale(Var, f32),
    Sum(Var),
    Mse { pred: Var, target: Var, mask: Option<Vec<bool>>, count: usize },
    Bce { prob: Var, labels: Vec<f32> },
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn kdim(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f32>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Splits a rank-3 `[C,H,W]` or rank-4 `[N,C,H,W]` shape into `(n, c, h, w, batched)`.
fn image_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w, false)),
        [n, c, h, w] => Ok((n, c, h, w, true)),
        _ => Err(Error::shape(op, format!("expected [C,H,W] or [N,C,H,W], got {shape:?}"))),
    }
}

fn image_shape(n: usize, c: usize, h: usize, w: usize, batched: bool) -> Vec<usize> {
    if batched {
        vec![n, c, h, w]
    } else {
        vec![c, h, w]
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f32>, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { shape, value, op, requires_grad, grad: None });
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.node(v).value
    }

    /// The single value of a one-element node.
    pub fn scalar(&self, v: Var) -> f32 {
        self.node(v).value[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.node(v).grad.as_deref()
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor { shape: n.shape.clone(), data: n.value.clone(), requires_grad: false, grad: None }
    }

    fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape: t.shape.clone(),
            value: t.data.clone(),
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.leaf(t, true)
    }

    /// Non-trainable leaf (inputs, targets, frozen weights).
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.leaf(t, false)
    }

    /// Non-trainable leaf that takes ownership of its data.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { shape: t.shape, value: t.data, op: Op::Leaf, requires_grad: t.requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).requires_grad)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: (usize, usize), padding: (usize, usize)) -> Result<Var> {
        let (n, c, h, w, batched) = image_dims("conv2d", self.shape(input))?;
        let (o, kc, kh, kw) = match *self.shape(kernel) {
            [o, kc, kh, kw] => (o, kc, kh, kw),
            ref s => return Err(Error::shape("conv2d", format!("kernel must be [O,C,kH,kW], got {s:?}"))),
        };
        if kc != c {
            return Err(Error::shape("conv2d", format!("input has {c} channels, kernel expects {kc}")));
        }
        if self.shape(bias) != [o] {
            return Err(Error::shape("conv2d", format!("bias must be [{o}], got {:?}", self.shape(bias))));
        }
        let (sh, sw) = stride;
        let (ph, pw) = padding;
        let (ho, wo) = match (window_output_len(h, kh, sh, ph), window_output_len(w, kw, sw, pw)) {
            (Some(ho), Some(wo)) => (ho, wo),
            _ => {
                return Err(Error::EmptyWindow {
                    op: "conv2d",
                    detail: format!("{h}x{w} input, {kh}x{kw} kernel, stride {stride:?}, padding {padding:?}"),
                })
            }
        };
        let geom = ConvGeom { n, c, h, w, o, kh, kw, sh, sw, ph, pw, ho, wo };
        let (kdim, p) = (geom.kdim(), geom.positions());
        let x = self.value(input);
        let k = self.value(kernel);
        let b = self.value(bias);
        let mut out = vec![0.0f32; n * o * p];
        let mut cols = vec![0.0f32; kdim * p];
        for bi in 0..n {
            im2col(&x[bi * c * h * w..(bi + 1) * c * h * w], &geom, &mut cols);
            let ob = &mut out[bi * o * p..(bi + 1) * o * p];
            for (oc, row) in ob.chunks_exact_mut(p).enumerate() {
                row.fill(b[oc]);
            }
            sgemm(o, kdim, p, k, Layout::row_major(kdim), &cols, Layout::row_major(p), 1.0, ob, Layout::row_major(p));
        }
        let rg = self.needs(&[input, kernel, bias]);
        self.push(image_shape(n, o, ho, wo, batched), out, Op::Conv2d { input, kernel, bias, geom }, rg, "conv2d")
    }

    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (batch, fan_in, batched) = match *self.shape(input) {
            [f] => (1, f, false),
            [n, f] => (n, f, true),
            ref s => return Err(Error::shape("dense", format!("input must be [N] or [B,N], got {s:?}"))),
        };
        let fan_out = match *self.shape(weight) {
            [m, f] if f == fan_in => m,
            ref s => return Err(Error::shape("dense", format!("weight {s:?} does not accept {fan_in} inputs"))),
        };
        if self.shape(bias) != [fan_out] {
            return Err(Error::shape("dense", format!("bias must be [{fan_out}], got {:?}", self.shape(bias))));
        }
        let mut out = Vec::with_capacity(batch * fan_out);
        for _ in 0..batch {
            out.extend_from_slice(self.value(bias));
        }
        sgemm(
            batch,
            fan_in,
            fan_out,
            self.value(input),
            Layout::row_major(fan_in),
            self.value(weight),
            Layout::transposed(fan_in),
            1.0,
            &mut out,
            Layout::row_major(fan_out),
        );
        let shape = if batched { vec![batch, fan_out] } else { vec![fan_out] };
        let rg = self.needs(&[input, weight, bias]);
        self.push(shape, out, Op::Dense { input, weight, bias, batch }, rg, "dense")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let rg = self.needs(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Relu(x), rg, "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let rg = self.needs(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Sigmoid(x), rg, "sigmoid")
    }

    pub fn max_pool2d(&mut self, x: Var, window: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let (n, c, h, w, batched) = image_dims("max_pool2d", self.shape(x))?;
        let (ho, wo) = match (window_output_len(h, window.0, stride.0, 0), window_output_len(w, window.1, stride.1, 0)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::EmptyWindow {
                    op: "max_pool2d",
                    detail: format!("{h}x{w} input, window {window:?}, stride {stride:?}"),
                })
            }
        };
        let v = self.value(x);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * stride.0 * w + ox * stride.1;
                    for dy in 0..window.0 {
                        let row = base + (oy * stride.0 + dy) * w + ox * stride.1;
                        for idx in row..row + window.1 {
                            if v[idx] > v[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(v[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let rg = self.needs(&[x]);
        self.push(image_shape(n, c, ho, wo, batched), out, Op::MaxPool { input: x, argmax }, rg, "max_pool2d")
    }

    /// Nearest-neighbour resize of the two spatial axes to `(out_h, out_w)`.
    pub fn upsample_nearest(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (n, c, h, w, batched) = image_dims("upsample_nearest", self.shape(x))?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::EmptyWindow { op: "upsample_nearest", detail: format!("target {out_h}x{out_w}") });
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(n * c * out_h * out_w);
        let mut src = Vec::with_capacity(n * c * out_h * out_w);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..out_h {
                let iy = oy * h / out_h;
                for ox in 0..out_w {
                    let idx = base + iy * w + ox * w / out_w;
                    out.push(v[idx]);
                    src.push(idx as u32);
                }
            }
        }
        let rg = self.needs(&[x]);
        self.push(image_shape(n, c, out_h, out_w, batched), out, Op::Upsample { input: x, src }, rg, "upsample_nearest")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let out = self.value(x).to_vec();
        let rg = self.needs(&[x]);
        self.push(shape.to_vec(), out, Op::Reshape(x), rg, "reshape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.needs(&[a, b]);
        self.push(self.shape(a).to_vec(), out, Op::Add(a, b), rg, "add")
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v * factor).collect();
        let rg = self.needs(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, factor), rg, "scale")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).iter().map(|&v| v as f64).sum();
        let rg = self.needs(&[x]);
        self.push(vec![1], vec![s as f32], Op::Sum(x), rg, "sum")
    }

    /// Mean squared error over all elements.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.mse_impl(pred, target, None)
    }

    /// Mean squared error over the cells where `mask` is set.
    pub fn masked_mse_loss(&mut self, pred: Var, target: Var, mask: Vec<bool>) -> Result<Var> {
        if mask.len() != self.value(pred).len() {
            return Err(Error::shape("masked_mse_loss", format!("mask has {} cells for {:?}", mask.len(), self.shape(pred))));
        }
        self.mse_impl(pred, target, Some(mask))
    }

    fn mse_impl(&mut self, pred: Var, target: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::shape("mse_loss", format!("{:?} vs {:?}", self.shape(pred), self.shape(target))));
        }
        let (p, t) = (self.value(pred), self.value(target));
        let mut acc = 0.0f64;
        let mut count = 0usize;
        for i in 0..p.len() {
            if mask.as_ref().is_none_or(|m| m[i]) {
                let d = p[i] as f64 - t[i] as f64;
                acc += d * d;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::shape("mse_loss", "no cells selected"));
        }
        let loss = (acc / count as f64) as f32;
        let rg = self.needs(&[pred, target]);
        self.push(vec![1], vec![loss], Op::Mse { pred, target, mask, count }, rg, "mse_loss")
    }

    /// Mean binary cross-entropy of probabilities `prob` against 0/1 `labels`.
    ///
    /// Probabilities are clamped to `[1e-7, 1 - 1e-7]` before the logarithm.
    pub fn bce_loss(&mut self, prob: Var, labels: &[f32]) -> Result<Var> {
        let p = self.value(prob);
        if p.len() != labels.len() {
            return Err(Error::shape("bce_loss", format!("{} probabilities, {} labels", p.len(), labels.len())));
        }
        if p.is_empty() {
            return Err(Error::shape("bce_loss", "empty batch"));
        }
        let mut acc = 0.0f64;
        for (&pi, &y) in p.iter().zip(labels) {
            let pc = (pi as f64).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            let y = y as f64;
            acc -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        }
        let loss = (acc / p.len() as f64) as f32;
        let rg = self.needs(&[prob]);
        self.push(vec![1], vec![loss], Op::Bce { prob, labels: labels.to_vec() }, rg, "bce_loss")
    }

    /// Reverse sweep from a one-element `loss`; gradients land on every
    /// node that requires them and can be read with [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let numel = self.value(loss).len();
        if numel != 1 {
            return Err(Error::NonScalarLoss { numel });
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, geom } => self.conv_backward(*input, *kernel, *bias, geom, g, grads),
            Op::Dense { input, weight, bias, batch } => {
                let fan_in = *self.shape(*weight).last().unwrap();
                let fan_out = self.shape(*weight)[0];
                if self.node(*input).requires_grad {
                    let dx = slot(grads, *input, batch * fan_in);
                    sgemm(*batch, fan_out, fan_in, g, Layout::row_major(fan_out), self.value(*weight), Layout::row_major(fan_in), 1.0, dx, Layout::row_major(fan_in));
                }
                if self.node(*weight).requires_grad {
                    let dw = slot(grads, *weight, fan_out * fan_in);
                    sgemm(fan_out, *batch, fan_in, g, Layout::transposed(fan_out), self.value(*input), Layout::row_major(fan_in), 1.0, dw, Layout::row_major(fan_in));
                }
                if self.node(*bias).requires_grad {
                    let db = slot(grads, *bias, fan_out);
                    for row in g.chunks_exact(fan_out) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                }
            }
            Op::Relu(x) => {
                if self.node(*x).requires_grad {
                    let xv = self.value(*x);
                    let dx = slot(grads, *x, g.len());
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                        if v > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if self.node(*x).requires_grad {
                    let y = &node.value;
                    let dx = slot(grads, *x, g.len());
                    for ((d, &gv), &s) in dx.iter_mut().zip(g).zip(y) {
                        *d += gv * s * (1.0 - s);
                    }
                }
            }
            Op::MaxPool { input, argmax } => {
                if self.node(*input).requires_grad {
                    let n = self.value(*input).len();
                    let dx = slot(grads, *input, n);
                    for (&gv, &src) in g.iter().zip(argmax) {
                        dx[src as usize] += gv;
                    }
                }
            }
            Op::Upsample { input, src } => {
                if self.node(*input).requires_grad {
                    let n = self.value(*input).len();
                    let dx = slot(grads, *input, n);
                    for (&gv, &s) in g.iter().zip(src) {
                        dx[s as usize] += gv;
                    }
                }
            }
            Op::Reshape(x) => {
                if self.node(*x).requires_grad {
                    let dx = slot(grads, *x, g.len());
                    dx.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.node(*v).requires_grad {
                        let dx = slot(grads, *v, g.len());
                        dx.iter_mut().zip(g).for_each(|(d, gv)| *d += gv);
                    }
                }
            }
            Op::Scale(x, f) => {
                if self.node(*x).requires_grad {
                    let dx = slot(grads, *x, g.len());
                    dx.iter_mut().zip(g).for_each(|(d, gv)| *d += gv * f);
                }
            }
            Op::Sum(x) => {
                if self.node(*x).requires_grad {
                    let n = self.value(*x).len();
                    let dx = slot(grads, *x, n);
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mse { pred, target, mask, count } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let scale = 2.0 * g[0] as f64 / *count as f64;
                let selected = |k: usize| mask.as_ref().is_none_or(|m| m[k]);
                if self.node(*pred).requires_grad {
                    let dp = slot(grads, *pred, p.len());
                    for k in 0..p.len() {
                        if selected(k) {
                            dp[k] += (scale * (p[k] as f64 - t[k] as f64)) as f32;
                        }
                    }
                }
                if self.node(*target).requires_grad {
                    let dt = slot(grads, *target, t.len());
                    for k in 0..t.len() {
                        if selected(k) {
                            dt[k] -= (scale * (p[k] as f64 - t[k] as f64)) as f32;
                        }
                    }
                }
            }
            Op::Bce { prob, labels } => {
                if self.node(*prob).requires_grad {
                    let p = self.value(*prob);
                    let n = p.len() as f64;
                    let dp = slot(grads, *prob, p.len());
                    for k in 0..p.len() {
                        let pk = p[k] as f64;
                        if !(PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&pk) {
                            continue;
                        }
                        let y = labels[k] as f64;
                        dp[k] += (g[0] as f64 * (-y / pk + (1.0 - y) / (1.0 - pk)) / n) as f32;
                    }
                }
            }
        }
    }

    fn conv_backward(&self, input: Var, kernel: Var, bias: Var, geom: &ConvGeom, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let ConvGeom { n, c, h, w, o, .. } = *geom;
        let (kdim, p) = (geom.kdim(), geom.positions());
        if self.node(bias).requires_grad {
            let db = slot(grads, bias, o);
            for gb in g.chunks_exact(o * p) {
                for (oc, row) in gb.chunks_exact(p).enumerate() {
                    db[oc] += row.iter().map(|&v| v as f64).sum::<f64>() as f32;
                }
            }
        }
        if self.node(kernel).requires_grad {
            let x = self.value(input);
            let mut cols = vec![0.0f32; kdim * p];
            let dk = slot(grads, kernel, o * kdim);
            for bi in 0..n {
                im2col(&x[bi * c * h * w..(bi + 1) * c * h * w], geom, &mut cols);
                let gb = &g[bi * o * p..(bi + 1) * o * p];
                sgemm(o, p, kdim, gb, Layout::row_major(p), &cols, Layout::transposed(p), 1.0, dk, Layout::row_major(kdim));
            }
        }
        if self.node(input).requires_grad {
            let k = self.value(kernel);
            let mut dcols = vec![0.0f32; kdim * p];
            let dx = slot(grads, input, n * c * h * w);
            for bi in 0..n {
                let gb = &g[bi * o * p..(bi + 1) * o * p];
                sgemm(kdim, o, p, k, Layout::transposed(kdim), gb, Layout::row_major(p), 0.0, &mut dcols, Layout::row_major(p));
                col2im(&dcols, geom, &mut dx[bi * c * h * w..(bi + 1) * c * h * w]);
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f32>>], v: Var, len: usize) -> &mut [f32] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Range of output columns whose input column `o*stride + offset - pad` is in `[0, len)`.
fn valid_range(out_len: usize, len: usize, stride: usize, offset: usize, pad: usize) -> (usize, usize) {
    // ix = o*stride + offset - pad >= 0  <=>  o >= ceil((pad - offset) / stride)
    let lo = if pad > offset { (pad - offset).div_ceil(stride) } else { 0 };
    // ix < len  <=>  o*stride < len + pad - offset
    let hi = if len + pad > offset { (len + pad - offset).div_ceil(stride) } else { 0 };
    (lo.min(out_len), hi.min(out_len))
}

fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let p = g.positions();
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for i in 0..g.kh {
            let (ylo, yhi) = valid_range(g.ho, g.h, g.sh, i, g.ph);
            for j in 0..g.kw {
                let (xlo, xhi) = valid_range(g.wo, g.w, g.sw, j, g.pw);
                let row = (ci * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * p..(row + 1) * p];
                dst.fill(0.0);
                if xlo >= xhi {
                    continue;
                }
                for oy in ylo..yhi {
                    let iy = oy * g.sh + i - g.ph;
                    let src_row = &plane[iy * g.w..(iy + 1) * g.w];
                    let d = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if g.sw == 1 {
                        let ix0 = xlo + j - g.pw;
                        d[xlo..xhi].copy_from_slice(&src_row[ix0..ix0 + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            d[ox] = src_row[ox * g.sw + j - g.pw];
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let p = g.positions();
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for i in 0..g.kh {
            let (ylo, yhi) = valid_range(g.ho, g.h, g.sh, i, g.ph);
            for j in 0..g.kw {
                let (xlo, xhi) = valid_range(g.wo, g.w, g.sw, j, g.pw);
                if xlo >= xhi {
                    continue;
                }
                let row = (ci * g.kh + i) * g.kw + j;
                let src = &cols[row * p..(row + 1) * p];
                for oy in ylo..yhi {
                    let iy = oy * g.sh + i - g.ph;
                    let d = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let s = &src[oy * g.wo..(oy + 1) * g.wo];
                    for ox in xlo..xhi {
                        d[ox * g.sw + j - g.pw] += s[ox];
                    }
                }
            }
        }
    }
}

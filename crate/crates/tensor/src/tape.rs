use std::hash::{DefaultHasher, Hash, Hasher};

use crate::kernels::{self, ConvShape, Tap};
use crate::{Tensor, TensorError};

/// Batch-norm variance floor.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the current batch in running-statistic updates.
pub const BN_MOMENTUM: f64 = 0.1;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl Conv2dGeom {
    /// Stride 1 with "same" padding for a `k`×`k` kernel at the given dilation.
    pub fn same(k: usize, dilation: usize) -> Self {
        Conv2dGeom { stride: 1, pad: dilation * (k / 2), dilation }
    }
}

impl Default for Conv2dGeom {
    fn default() -> Self {
        Conv2dGeom { stride: 1, pad: 0, dilation: 1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ResizeMode {
    #[default]
    Bilinear,
    Nearest,
}

/// Per-channel running mean / variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    /// Mean 0, variance 1: the statistics an untrained layer evaluates with.
    pub fn new(channels: usize) -> Self {
        RunningStats { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }
}

pub enum BatchNormMode<'a> {
    /// Normalize with batch statistics; fold them into `running` when given.
    Train { running: Option<&'a mut RunningStats> },
    /// Normalize with stored running statistics.
    Eval { running: &'a RunningStats },
}

enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, shape: ConvShape },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
    Relu(Var),
    Sigmoid(Var),
    MaxPool { x: Var, argmax: Vec<usize> },
    Resize { x: Var, rows: Vec<Tap>, cols: Vec<Tap> },
    Concat(Vec<Var>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    SumPerSample(Var),
    MeanChannels(Var),
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Append-only computation graph. Node order is a topological order, so
/// backward is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input; no gradient is accumulated for it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, false, Op::Leaf)
    }

    /// A trainable leaf; backward accumulates into its gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient left by the most recent [`Tape::backward`]. Leaf gradients
    /// accumulate across calls until [`Tape::zero_grad`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ── convolution / normalization ────────────────────────────────────

    /// Cross-correlation of `x` (N×C_in×H×W) with `w` (C_out×C_in×k×k) plus
    /// optional per-channel bias, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: Conv2dGeom) -> Result<Var, TensorError> {
        const OP: &str = "conv2d";
        let (n, c_in, h, wd) = self.value(x).dims4(OP)?;
        let (c_out, wc, kh, kw) = self.value(w).dims4(OP)?;
        if wc != c_in {
            return Err(TensorError::shape(OP, format!("input has {c_in} channels, kernel expects {wc}")));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(TensorError::invalid(OP, format!("kernel must be square with odd size, got {kh}×{kw}")));
        }
        if geom.stride == 0 || geom.dilation == 0 {
            return Err(TensorError::invalid(OP, "stride and dilation must be ≥ 1"));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [c_out] {
                return Err(TensorError::shape(OP, format!("bias shape {:?}, expected [{c_out}]", self.value(b).shape())));
            }
        }
        let extent = |len| kernels::conv_output_extent(len, kh, geom.stride, geom.pad, geom.dilation);
        let (oh, ow) = match (extent(h), extent(wd)) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => {
                return Err(TensorError::Extent {
                    op: OP,
                    detail: format!("input {h}×{wd}, kernel {kh}, pad {}, dilation {}, stride {}", geom.pad, geom.dilation, geom.stride),
                })
            }
        };
        let shape = ConvShape {
            n,
            c_in,
            h,
            w: wd,
            c_out,
            k: kh,
            oh,
            ow,
            stride: geom.stride,
            pad: geom.pad,
            dilation: geom.dilation,
        };
        let y = kernels::conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &shape,
        );
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        let t = Tensor::new(vec![n, c_out, oh, ow], y)?;
        Ok(self.push(t, rg, Op::Conv2d { x, w, b, shape }))
    }

    /// Per-channel batch normalization, `γ·x̂ + β`. Train mode uses the
    /// population statistics of the batch (divisor N·H·W).
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
        eps: f64,
    ) -> Result<Var, TensorError> {
        const OP: &str = "batchnorm2d";
        let (n, c, h, w) = self.value(x).dims4(OP)?;
        for p in [gamma, beta] {
            if self.value(p).shape() != [c] {
                return Err(TensorError::shape(OP, format!("affine parameter shape {:?}, expected [{c}]", self.value(p).shape())));
            }
        }
        let plane = h * w;
        let m = n * plane;
        let xs = self.value(x).data();
        let channel_iter = |ch: usize| (0..n).flat_map(move |b| (0..plane).map(move |i| (b * c + ch) * plane + i));
        let (mean, var, batch_stats) = match &mode {
            BatchNormMode::Train { .. } => {
                // one value per channel has variance 0 and normalizes to 0
                if m == 0 {
                    return Err(TensorError::invalid(OP, "train mode needs at least one value per channel"));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mu = channel_iter(ch).map(|i| xs[i]).sum::<f64>() / m as f64;
                    let v = channel_iter(ch).map(|i| (xs[i] - mu).powi(2)).sum::<f64>() / m as f64;
                    mean[ch] = mu;
                    var[ch] = v;
                }
                (mean, var, true)
            }
            BatchNormMode::Eval { running } => {
                if running.mean.len() != c || running.var.len() != c {
                    return Err(TensorError::shape(OP, format!("running stats for {} channels, input has {c}", running.mean.len())));
                }
                (running.mean.clone(), running.var.clone(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; xs.len()];
        let mut y = vec![0.0; xs.len()];
        for ch in 0..c {
            for i in channel_iter(ch) {
                let xh = (xs[i] - mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                y[i] = g[ch] * xh + bt[ch];
            }
        }
        if let BatchNormMode::Train { running: Some(stats) } = mode {
            if stats.mean.len() != c || stats.var.len() != c {
                return Err(TensorError::shape(OP, format!("running stats for {} channels, input has {c}", stats.mean.len())));
            }
            for ch in 0..c {
                stats.mean[ch] = (1.0 - BN_MOMENTUM) * stats.mean[ch] + BN_MOMENTUM * mean[ch];
                stats.var[ch] = (1.0 - BN_MOMENTUM) * stats.var[ch] + BN_MOMENTUM * var[ch];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        let t = Tensor::new(vec![n, c, h, w], y)?;
        Ok(self.push(t, rg, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats }))
    }

    // ── activations ────────────────────────────────────────────────────

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| a.max(0.0)).collect()).unwrap();
        let rg = self.rg(&[x]);
        self.push(t, rg, Op::Relu(x))
    }

    /// Logistic function in the overflow-free branch form, clamped so that
    /// outputs stay strictly inside (0, 1).
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| sigmoid(a)).collect()).unwrap();
        let rg = self.rg(&[x]);
        self.push(t, rg, Op::Sigmoid(x))
    }

    // ── resizing ───────────────────────────────────────────────────────

    /// 2×2, stride-2 max-pool; odd extents round up.
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var, TensorError> {
        const OP: &str = "maxpool2d";
        let (n, c, h, w) = self.value(x).dims4(OP)?;
        if h < 2 || w < 2 {
            return Err(TensorError::Extent { op: OP, detail: format!("input {h}×{w} is smaller than the 2×2 window") });
        }
        let (y, argmax) = kernels::maxpool_forward(self.value(x).data(), n, c, h, w);
        let t = Tensor::new(vec![n, c, kernels::pool_output_extent(h), kernels::pool_output_extent(w)], y)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, rg, Op::MaxPool { x, argmax }))
    }

    pub fn upsample2d(&mut self, x: Var, factor: usize, mode: ResizeMode) -> Result<Var, TensorError> {
        if factor < 2 {
            return Err(TensorError::invalid("upsample2d", format!("factor must be ≥ 2, got {factor}")));
        }
        let (_, _, h, w) = self.value(x).dims4("upsample2d")?;
        self.resize_to(x, h * factor, w * factor, mode)
    }

    /// Resamples the spatial extents to `oh`×`ow`.
    pub fn resize_to(&mut self, x: Var, oh: usize, ow: usize, mode: ResizeMode) -> Result<Var, TensorError> {
        const OP: &str = "resize";
        let (n, c, h, w) = self.value(x).dims4(OP)?;
        if h == 0 || w == 0 || oh == 0 || ow == 0 {
            return Err(TensorError::Extent { op: OP, detail: format!("{h}×{w} → {oh}×{ow}") });
        }
        let (rows, cols) = match mode {
            ResizeMode::Bilinear => (kernels::bilinear_taps(h, oh), kernels::bilinear_taps(w, ow)),
            ResizeMode::Nearest => (kernels::nearest_taps(h, oh), kernels::nearest_taps(w, ow)),
        };
        let y = kernels::resize_forward(self.value(x).data(), n * c, h, w, &rows, &cols);
        let t = Tensor::new(vec![n, c, oh, ow], y)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, rg, Op::Resize { x, rows, cols }))
    }

    // ── structural ─────────────────────────────────────────────────────

    /// Concatenates along the channel axis in argument order.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        const OP: &str = "concat_channels";
        let first = *xs.first().ok_or_else(|| TensorError::invalid(OP, "no inputs"))?;
        let (n, _, h, w) = self.value(first).dims4(OP)?;
        let mut total_c = 0;
        for &v in xs {
            let (vn, vc, vh, vw) = self.value(v).dims4(OP)?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(TensorError::shape(OP, format!("extent {vn}×{vh}×{vw} differs from {n}×{h}×{w}")));
            }
            total_c += vc;
        }
        let plane = h * w;
        let mut y = Vec::with_capacity(n * total_c * plane);
        for b in 0..n {
            for &v in xs {
                let c = self.value(v).shape()[1];
                y.extend_from_slice(&self.value(v).data()[b * c * plane..][..c * plane]);
            }
        }
        let t = Tensor::new(vec![n, total_c, h, w], y)?;
        let rg = self.rg(xs);
        Ok(self.push(t, rg, Op::Concat(xs.to_vec())))
    }

    // ── elementwise ────────────────────────────────────────────────────

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::shape(op, format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        Ok(va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect())
    }

    fn push_like(&mut self, like: Var, data: Vec<f64>, inputs: &[Var], op: Op) -> Var {
        let t = Tensor::new(self.value(like).shape().to_vec(), data).unwrap();
        let rg = self.rg(inputs);
        self.push(t, rg, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let y = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push_like(a, y, &[a, b], Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let y = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push_like(a, y, &[a, b], Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let y = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push_like(a, y, &[a, b], Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let y = self.binary("div", a, b, |x, y| x / y)?;
        Ok(self.push_like(a, y, &[a, b], Op::Div(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x).data().iter().map(|&v| v * c).collect();
        self.push_like(x, y, &[x], Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x).data().iter().map(|&v| v + c).collect();
        self.push_like(x, y, &[x], Op::AddScalar(x))
    }

    // ── reductions ─────────────────────────────────────────────────────

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Mean(x))
    }

    /// Sums over every axis but the first: shape `[N, ...]` → `[N]`.
    pub fn sum_per_sample(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        let n = *v.shape().first().ok_or_else(|| TensorError::invalid("sum_per_sample", "scalar input"))?;
        let per = v.numel().checked_div(n).unwrap_or(0);
        let y = (0..n).map(|b| v.data()[b * per..][..per].iter().sum()).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![n], y)?, rg, Op::SumPerSample(x)))
    }

    /// Averages over channels: N×C×H×W → N×1×H×W.
    pub fn mean_channels(&mut self, x: Var) -> Result<Var, TensorError> {
        let (n, c, h, w) = self.value(x).dims4("mean_channels")?;
        let plane = h * w;
        let xs = self.value(x).data();
        let mut y = vec![0.0; n * plane];
        for b in 0..n {
            for ch in 0..c {
                for (o, &v) in y[b * plane..][..plane].iter_mut().zip(&xs[(b * c + ch) * plane..][..plane]) {
                    *o += v;
                }
            }
        }
        for v in &mut y {
            *v /= c as f64;
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![n, 1, h, w], y)?, rg, Op::MeanChannels(x)))
    }

    /// Hash of every branch decision of the piecewise-linear ops: relu input
    /// signs and max-pool winners.
    pub fn activation_pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => self.nodes[x.0].value.data().iter().for_each(|&v| (v > 0.0).hash(&mut h)),
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    // ── backward ───────────────────────────────────────────────────────

    /// Reverse sweep from a scalar root. Gradients of intermediate nodes are
    /// recomputed on every call; leaf gradients accumulate.
    pub fn backward(&mut self, root: Var) -> Result<(), TensorError> {
        let root_shape = self.value(root).shape().to_vec();
        if self.value(root).numel() != 1 {
            return Err(TensorError::NonScalarRoot(root_shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let stored = self.nodes[i].grad.get_or_insert_with(|| vec![0.0; gy.len()]);
                axpy(stored, 1.0, &gy);
                continue;
            }
            let node = &self.nodes[i];
            let nodes = &self.nodes;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d { x, w, b, shape } => {
                    let xv = nodes[x.0].value.data();
                    let wv = nodes[w.0].value.data();
                    // distinct indices, so take them one at a time
                    let mut gx = slot(&mut grads, nodes, *x).map(std::mem::take);
                    let mut gw = slot(&mut grads, nodes, *w).map(std::mem::take);
                    let mut gb = b.and_then(|b| slot(&mut grads, nodes, b).map(std::mem::take));
                    kernels::conv_backward(xv, wv, &gy, shape, gx.as_deref_mut(), gw.as_deref_mut(), gb.as_deref_mut());
                    if let Some(g) = gx {
                        grads[x.0] = Some(g);
                    }
                    if let Some(g) = gw {
                        grads[w.0] = Some(g);
                    }
                    if let (Some(b), Some(g)) = (b, gb) {
                        grads[b.0] = Some(g);
                    }
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                    let (n, c, h, w) = nodes[x.0].value.dims4("batchnorm2d")?;
                    let plane = h * w;
                    let m = (n * plane) as f64;
                    let gam = nodes[gamma.0].value.data();
                    let mut sum_dy = vec![0.0; c];
                    let mut sum_dy_xhat = vec![0.0; c];
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * plane;
                            for k in base..base + plane {
                                sum_dy[ch] += gy[k];
                                sum_dy_xhat[ch] += gy[k] * xhat[k];
                            }
                        }
                    }
                    if let Some(gg) = slot(&mut grads, nodes, *gamma) {
                        for ch in 0..c {
                            gg[ch] += sum_dy_xhat[ch];
                        }
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *beta) {
                        for ch in 0..c {
                            gb[ch] += sum_dy[ch];
                        }
                    }
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for b in 0..n {
                            for ch in 0..c {
                                let base = (b * c + ch) * plane;
                                let k0 = gam[ch] * inv_std[ch];
                                for k in base..base + plane {
                                    gx[k] += if *batch_stats {
                                        k0 * (gy[k] - sum_dy[ch] / m - xhat[k] * sum_dy_xhat[ch] / m)
                                    } else {
                                        k0 * gy[k]
                                    };
                                }
                            }
                        }
                    }
                }
                Op::Relu(x) => {
                    let xv = nodes[x.0].value.data();
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for ((g, &a), &d) in gx.iter_mut().zip(xv).zip(&gy) {
                            if a > 0.0 {
                                *g += d;
                            }
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let yv = node.value.data();
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for ((g, &s), &d) in gx.iter_mut().zip(yv).zip(&gy) {
                            *g += d * s * (1.0 - s);
                        }
                    }
                }
                Op::MaxPool { x, argmax } => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for (&idx, &d) in argmax.iter().zip(&gy) {
                            gx[idx] += d;
                        }
                    }
                }
                Op::Resize { x, rows, cols } => {
                    let (n, c, h, w) = nodes[x.0].value.dims4("resize")?;
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        kernels::resize_backward(&gy, gx, n * c, h, w, rows, cols);
                    }
                }
                Op::Concat(xs) => {
                    let (n, _, h, w) = node.value.dims4("concat_channels")?;
                    let total_c = node.value.shape()[1];
                    let plane = h * w;
                    let mut offset = 0;
                    for &v in xs {
                        let c = nodes[v.0].value.shape()[1];
                        if let Some(gx) = slot(&mut grads, nodes, v) {
                            for b in 0..n {
                                let src = &gy[(b * total_c + offset) * plane..][..c * plane];
                                for (g, &d) in gx[b * c * plane..][..c * plane].iter_mut().zip(src) {
                                    *g += d;
                                }
                            }
                        }
                        offset += c;
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        axpy(ga, 1.0, &gy);
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        axpy(gb, sign, &gy);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for ((g, &d), &y) in ga.iter_mut().zip(&gy).zip(bv) {
                            *g += d * y;
                        }
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        for ((g, &d), &x) in gb.iter_mut().zip(&gy).zip(av) {
                            *g += d * x;
                        }
                    }
                }
                Op::Div(a, b) => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for ((g, &d), &y) in ga.iter_mut().zip(&gy).zip(bv) {
                            *g += d / y;
                        }
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        for (((g, &d), &x), &y) in gb.iter_mut().zip(&gy).zip(av).zip(bv) {
                            *g -= d * x / (y * y);
                        }
                    }
                }
                Op::Scale(x, c) => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        axpy(gx, *c, &gy);
                    }
                }
                Op::AddScalar(x) => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        axpy(gx, 1.0, &gy);
                    }
                }
                Op::Sum(x) | Op::Mean(x) => {
                    let n = nodes[x.0].value.numel();
                    let d = if matches!(node.op, Op::Mean(_)) { gy[0] / n as f64 } else { gy[0] };
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for g in gx.iter_mut() {
                            *g += d;
                        }
                    }
                }
                Op::SumPerSample(x) => {
                    let numel = nodes[x.0].value.numel();
                    let per = numel / gy.len().max(1);
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for (k, g) in gx.iter_mut().enumerate() {
                            *g += gy[k / per];
                        }
                    }
                }
                Op::MeanChannels(x) => {
                    let (n, c, h, w) = nodes[x.0].value.dims4("mean_channels")?;
                    let plane = h * w;
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for b in 0..n {
                            for ch in 0..c {
                                let dst = &mut gx[(b * c + ch) * plane..][..plane];
                                for (g, &d) in dst.iter_mut().zip(&gy[b * plane..][..plane]) {
                                    *g += d / c as f64;
                                }
                            }
                        }
                    }
                }
            }
            self.nodes[i].grad = Some(gy);
        }
        Ok(())
    }
}

fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'g mut Vec<f64>> {
    let n = &nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n.value.numel()]))
}

fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

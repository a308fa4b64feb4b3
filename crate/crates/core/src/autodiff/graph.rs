//! Tape-based reverse-mode differentiation.
//!
//! Every op evaluates eagerly and appends a node; parents always precede
//! children, so the backward pass is a single reverse sweep.

use super::tensor::{gemm, Tensor};
use crate::error::TensorError;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction applied to the per-side chamfer sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    SumAxis { x: Var, axis: usize },
    MaxAxis { x: Var, axis: usize, argmax: Vec<usize> },
    SumAll(Var),
    LeakyRelu(Var, f64),
    Softplus(Var),
    Exp(Var),
    Square(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Reshape(Var),
    Conv2d(Box<ConvCache>),
    Chamfer { a: Var, b: Var, nn_ab: Vec<usize>, nn_ba: Vec<usize>, reduction: Reduction },
}

#[derive(Debug, Clone)]
struct ConvCache {
    input: Var,
    kernel: Var,
    bias: Option<Var>,
    geom: ConvGeometry,
    cols: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeometry {
    /// Output geometry; (H + 2p − k) must be divisible by the stride.
    pub fn new(
        input: [usize; 3],
        kernel: [usize; 4],
        stride: usize,
        padding: (usize, usize),
    ) -> Result<Self, TensorError> {
        let [c_in, h, w] = input;
        let [c_out, kc, kh, kw] = kernel;
        if kc != c_in {
            return Err(TensorError::shape("conv2d", &input, &kernel));
        }
        if stride == 0 {
            return Err(TensorError::invalid("conv2d", "stride must be positive"));
        }
        let (pad_h, pad_w) = padding;
        let out = |n: usize, p: usize, k: usize| -> Result<usize, TensorError> {
            let span = n + 2 * p;
            if span < k || (span - k) % stride != 0 {
                return Err(TensorError::invalid(
                    "conv2d",
                    format!(
                        "non-integral output size: ({n} + 2·{p} − {k}) / {stride} for input {input:?}"
                    ),
                ));
            }
            Ok((span - k) / stride + 1)
        };
        Ok(ConvGeometry {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad_h,
            pad_w,
            h_out: out(h, pad_h, kh)?,
            w_out: out(w, pad_w, kw)?,
        })
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Source pixel for column-matrix entry (row r, column c), if inside.
    #[inline]
    fn source(&self, r: usize, c: usize) -> Option<usize> {
        let ch = r / (self.kh * self.kw);
        let ki = (r / self.kw) % self.kh;
        let kj = r % self.kw;
        let oi = c / self.w_out;
        let oj = c % self.w_out;
        let y = (oi * self.stride + ki) as isize - self.pad_h as isize;
        let x = (oj * self.stride + kj) as isize - self.pad_w as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            return None;
        }
        Some((ch * self.h + y as usize) * self.w + x as usize)
    }

    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let (rows, cols) = (self.col_rows(), self.col_cols());
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                if let Some(s) = self.source(r, c) {
                    out[r * cols + c] = input[s];
                }
            }
        }
        out
    }

    fn col2im(&self, cols_grad: &[f64], out: &mut [f64]) {
        let (rows, cols) = (self.col_rows(), self.col_cols());
        for r in 0..rows {
            for c in 0..cols {
                if let Some(s) = self.source(r, c) {
                    out[s] += cols_grad[r * cols + c];
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients from one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    /// Nodes whose vector-Jacobian product was evaluated.
    pub visited: usize,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Recording tape. Build one per forward pass.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Index maps for a broadcast binary op: the smaller operand's shape must be a
/// suffix of the larger one's.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>, TensorError> {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if long[long.len() - short.len()..] != *short {
        return Err(TensorError::shape(op, a, b));
    }
    Ok(long.to_vec())
}

/// Sums a full-size gradient down to a suffix-broadcast operand of size `n`.
fn reduce_to(g: &[f64], n: usize) -> Vec<f64> {
    if g.len() == n {
        return g.to_vec();
    }
    let mut out = vec![0.0; n];
    for chunk in g.chunks_exact(n) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.to_vec();
    s.remove(axis);
    if s.is_empty() {
        s.push(1);
    }
    s
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    let d2 = a[2] - b[2];
    d0 * d0 + d1 * d1 + d2 * d2
}

/// Nearest neighbor in `b` of every point of `a` (ties: lowest index).
fn nearest(a: &[f64], b: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let mut idx = Vec::with_capacity(a.len() / 3);
    let mut dist = Vec::with_capacity(a.len() / 3);
    for p in a.chunks_exact(3) {
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for (j, q) in b.chunks_exact(3).enumerate() {
            let d = sq_dist(p, q);
            if d < best {
                best = d;
                arg = j;
            }
        }
        idx.push(arg);
        dist.push(best);
    }
    (idx, dist)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant leaf; no gradient is accumulated for it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let shape = broadcast_shape(name, self.shape(a), self.shape(b))?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let (na, nb) = (va.len(), vb.len());
        let n: usize = shape.iter().product();
        let out: Vec<f64> = (0..n).map(|i| f(va[i % na], vb[i % nb])).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    /// Element-wise sum; the smaller shape broadcasts as a suffix.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| f(a)).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |a| a * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |a| a + c, Op::AddScalar(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, |a| if a >= 0.0 { a } else { slope * a }, Op::LeakyRelu(x, slope))
    }

    /// ln(1 + eˣ), evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, |a| a.max(0.0) + (-a.abs()).exp().ln_1p(), Op::Softplus(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |a| a * a, Op::Square(x))
    }

    /// Clamp to [lo, hi]; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |a| a.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::invalid("sum_axis", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let v = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += v[(o * len + l) * inner + i];
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(reduced_shape(&shape, axis), out)?, Op::SumAxis { x, axis }, rg))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let len = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| TensorError::invalid("mean_axis", format!("axis {axis}")))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / len as f64))
    }

    /// Maximum over `axis`; ties resolve to the lowest index, which also
    /// receives the whole gradient.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(TensorError::shape("max_axis", &shape, &[axis]));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let v = self.value(x).data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    let val = v[(o * len + l) * inner + i];
                    let k = o * inner + i;
                    if val > out[k] || l == 0 {
                        out[k] = val;
                        argmax[k] = l;
                    }
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(reduced_shape(&shape, axis), out)?,
            Op::MaxAxis { x, axis, argmax },
            rg,
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Cross-correlation of a `[C_in, H, W]` input with `[C_out, C_in, kh, kw]`
    /// kernels, optional per-channel bias, per-axis zero padding.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: (usize, usize),
    ) -> Result<Var, TensorError> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if si.len() != 3 || sk.len() != 4 {
            return Err(TensorError::shape("conv2d", &si, &sk));
        }
        let geom = ConvGeometry::new([si[0], si[1], si[2]], [sk[0], sk[1], sk[2], sk[3]], stride, padding)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.c_out] {
                return Err(TensorError::shape("conv2d bias", self.shape(b), &[geom.c_out]));
            }
        }
        let cols = geom.im2col(self.value(input).data());
        let (k, n) = (geom.col_rows(), geom.col_cols());
        let mut out = vec![0.0; geom.c_out * n];
        gemm(geom.c_out, k, n, self.value(kernel).data(), false, &cols, false, &mut out, false);
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for (row, &bc) in out.chunks_exact_mut(n).zip(bv) {
                row.iter_mut().for_each(|o| *o += bc);
            }
        }
        let rg = self.rg(input) || self.rg(kernel) || bias.is_some_and(|b| self.rg(b));
        let value = Tensor::new(vec![geom.c_out, geom.h_out, geom.w_out], out)?;
        Ok(self.push(
            value,
            Op::Conv2d(Box::new(ConvCache {
                input,
                kernel,
                bias,
                geom,
                cols,
            })),
            rg,
        ))
    }

    /// Chamfer distance between `[n, 3]` and `[m, 3]` clouds:
    /// reduce_i min_j ‖a_i − b_j‖² + reduce_j min_i ‖a_i − b_j‖².
    pub fn chamfer(&mut self, a: Var, b: Var, reduction: Reduction) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != 3 || sb[1] != 3 || sa[0] == 0 || sb[0] == 0 {
            return Err(TensorError::shape("chamfer", sa, sb));
        }
        let (n, m) = (sa[0] as f64, sb[0] as f64);
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let (nn_ab, d_ab) = nearest(va, vb);
        let (nn_ba, d_ba) = nearest(vb, va);
        let (sab, sba): (f64, f64) = (d_ab.iter().sum(), d_ba.iter().sum());
        let total = match reduction {
            Reduction::Mean => sab / n + sba / m,
            Reduction::Sum => sab + sba,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::scalar(total),
            Op::Chamfer {
                a,
                b,
                nn_ab,
                nn_ba,
                reduction,
            },
            rg,
        ))
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients, TensorError> {
        if self.value(output).len() != 1 {
            return Err(TensorError::invalid(
                "backward",
                format!("output must be a single value, got shape {:?}", self.shape(output)),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::full(self.shape(output), 1.0));
        let mut visited = 0;
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            visited += 1;
            self.vjp(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn like(&self, v: Var, data: Vec<f64>) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), data).expect("gradient matches value shape")
    }

    fn vjp(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), TensorError> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, self.value(*b).data(), true, &mut da, false);
                    self.accumulate(grads, *a, self.like(*a, da));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, gd, false, &mut db, false);
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let (na, nb) = (self.value(*a).len(), self.value(*b).len());
                if self.rg(*a) {
                    self.accumulate(grads, *a, self.like(*a, reduce_to(gd, na)));
                }
                if self.rg(*b) {
                    let mut db = reduce_to(gd, nb);
                    db.iter_mut().for_each(|v| *v *= sign);
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let (na, nb) = (va.len(), vb.len());
                if self.rg(*a) {
                    let full: Vec<f64> = gd.iter().enumerate().map(|(i, g)| g * vb[i % nb]).collect();
                    self.accumulate(grads, *a, self.like(*a, reduce_to(&full, na)));
                }
                if self.rg(*b) {
                    let full: Vec<f64> = gd.iter().enumerate().map(|(i, g)| g * va[i % na]).collect();
                    self.accumulate(grads, *b, self.like(*b, reduce_to(&full, nb)));
                }
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, self.like(*x, gd.iter().map(|g| g * c).collect()));
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                self.accumulate(grads, *x, self.like(*x, gd.to_vec()));
            }
            Op::SumAxis { x, axis } => {
                let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            dx[(o * len + l) * inner + i] = gd[o * inner + i];
                        }
                    }
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::MaxAxis { x, axis, argmax } => {
                let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let k = o * inner + i;
                        dx[(o * len + argmax[k]) * inner + i] = gd[k];
                    }
                }
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::SumAll(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, self.like(*x, vec![gd[0]; n]));
            }
            Op::LeakyRelu(x, slope) => {
                let v = self.value(*x).data();
                let dx = v
                    .iter()
                    .zip(gd)
                    .map(|(&a, &g)| if a >= 0.0 { g } else { slope * g })
                    .collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Softplus(x) => {
                let v = self.value(*x).data();
                let dx = v
                    .iter()
                    .zip(gd)
                    .map(|(&a, &g)| {
                        let s = if a >= 0.0 {
                            1.0 / (1.0 + (-a).exp())
                        } else {
                            let e = a.exp();
                            e / (1.0 + e)
                        };
                        g * s
                    })
                    .collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Exp(x) => {
                let dx = node.value.data().iter().zip(gd).map(|(y, g)| y * g).collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Square(x) => {
                let v = self.value(*x).data();
                let dx = v.iter().zip(gd).map(|(a, g)| 2.0 * a * g).collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Clamp { x, lo, hi } => {
                let v = self.value(*x).data();
                let dx = v
                    .iter()
                    .zip(gd)
                    .map(|(&a, &g)| if a >= *lo && a <= *hi { g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, self.like(*x, dx));
            }
            Op::Conv2d(c) => {
                let geom = &c.geom;
                let (k, n) = (geom.col_rows(), geom.col_cols());
                if self.rg(c.kernel) {
                    let mut dk = vec![0.0; geom.c_out * k];
                    gemm(geom.c_out, n, k, gd, false, &c.cols, true, &mut dk, false);
                    self.accumulate(grads, c.kernel, self.like(c.kernel, dk));
                }
                if self.rg(c.input) {
                    let mut dcols = vec![0.0; k * n];
                    gemm(k, geom.c_out, n, self.value(c.kernel).data(), true, gd, false, &mut dcols, false);
                    let mut dx = vec![0.0; geom.c_in * geom.h * geom.w];
                    geom.col2im(&dcols, &mut dx);
                    self.accumulate(grads, c.input, self.like(c.input, dx));
                }
                if let Some(b) = c.bias {
                    if self.rg(b) {
                        let db = gd.chunks_exact(n).map(|row| row.iter().sum()).collect();
                        self.accumulate(grads, b, self.like(b, db));
                    }
                }
            }
            Op::Chamfer {
                a,
                b,
                nn_ab,
                nn_ba,
                reduction,
            } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let (n, m) = (nn_ab.len(), nn_ba.len());
                let (wa, wb) = match reduction {
                    Reduction::Mean => (1.0 / n as f64, 1.0 / m as f64),
                    Reduction::Sum => (1.0, 1.0),
                };
                let g0 = gd[0];
                let mut da = vec![0.0; 3 * n];
                let mut db = vec![0.0; 3 * m];
                for (i, &j) in nn_ab.iter().enumerate() {
                    for d in 0..3 {
                        let diff = 2.0 * wa * g0 * (va[3 * i + d] - vb[3 * j + d]);
                        da[3 * i + d] += diff;
                        db[3 * j + d] -= diff;
                    }
                }
                for (j, &i) in nn_ba.iter().enumerate() {
                    for d in 0..3 {
                        let diff = 2.0 * wb * g0 * (vb[3 * j + d] - va[3 * i + d]);
                        db[3 * j + d] += diff;
                        da[3 * i + d] -= diff;
                    }
                }
                if self.rg(*a) {
                    self.accumulate(grads, *a, self.like(*a, da));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
        }
        Ok(())
    }
}

/// Central finite-difference check of `f` at `inputs`. Returns the largest
/// norm-wise relative error ‖g_analytic − g_fd‖ / max(‖g_fd‖, ‖g_analytic‖, 1e-12)
/// over the inputs.
pub fn gradient_check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let eval = |perturbed: &[Tensor]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; t.len()]);
        let mut numeric = vec![0.0; t.len()];
        let mut work = inputs.to_vec();
        for i in 0..t.len() {
            let x0 = t.data()[i];
            work[k].data_mut()[i] = x0 + h;
            let fp = eval(&work)?;
            work[k].data_mut()[i] = x0 - h;
            let fm = eval(&work)?;
            work[k].data_mut()[i] = x0;
            numeric[i] = (fp - fm) / (2.0 * h);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / na.max(nn).max(1e-12));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Values bounded away from zero so kinks are not straddled by ±h.
    fn random_off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let mut t = random(shape, rng);
        for v in t.data_mut() {
            *v = v.signum() * (0.05 + v.abs());
        }
        t
    }

    const TOL: f64 = 1e-5;
    const H: f64 = 1e-6;

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let eye = g.constant(Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap());
        let b = Tensor::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let bv = g.constant(b.clone());
        let c = g.matmul(eye, bv).unwrap();
        assert_eq!(g.value(c), &b);
    }

    #[test]
    fn bilinear_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (random(&[4, 5], &mut rng), random(&[4, 5], &mut rng));
        let mut g = Graph::new();
        let (va, vb) = (g.param(a), g.constant(b.clone()));
        let p = g.mul(va, vb).unwrap();
        let s = g.sum_all(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(va).unwrap(), &b);
        assert!(grads.get(vb).is_none());
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        match g.matmul(a, b) {
            Err(TensorError::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("{other:?}"),
        }
        let c = g.constant(Tensor::zeros(&[2]));
        assert!(g.add(a, c).is_err());
    }

    #[test]
    fn elementwise_and_reductions_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = random(&[4, 5], &mut rng);
            let b = random(&[4, 5], &mut rng);
            let bias = random(&[5], &mut rng);
            let err = gradient_check(&[a.clone(), b.clone(), bias.clone()], H, |g, v| {
                let s = g.sub(v[0], v[1])?;
                let m = g.mul(s, v[0])?;
                let p = g.add(m, v[2])?;
                let q = g.sum_axis(p, 1)?;
                let r = g.mean_axis(p, 0)?;
                let e = g.exp(r);
                let sq = g.square(q);
                let s1 = g.sum_all(sq);
                let s2 = g.mean_all(e);
                g.add(s1, s2)
            })
            .unwrap();
            assert!(err < TOL, "{err}");
        }
    }

    #[test]
    fn matmul_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random(&[4, 5], &mut rng);
            let b = random(&[5, 3], &mut rng);
            let w = random(&[4, 3], &mut rng);
            let err = gradient_check(&[a, b, w], H, |g, v| {
                let c = g.matmul(v[0], v[1])?;
                let d = g.mul(c, v[2])?;
                Ok(g.sum_all(d))
            })
            .unwrap();
            assert!(err < TOL, "{err}");
        }
    }

    #[test]
    fn leaky_relu_values_and_fd() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![5.0, -3.0]));
        let y = g.leaky_relu(x, 1e-2);
        assert_eq!(g.value(y).data(), &[5.0, -0.03]);
        let s = g.sum_all(y);
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.get(x).unwrap().data(), &[1.0, 1e-2]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let a = random_off_zero(&[4, 5], &mut rng);
            let w = random(&[4, 5], &mut rng);
            let err = gradient_check(&[a, w], H, |g, v| {
                let y = g.leaky_relu(v[0], 1e-2);
                let z = g.mul(y, v[1])?;
                Ok(g.sum_all(z))
            })
            .unwrap();
            assert!(err < TOL, "{err}");
        }
    }

    #[test]
    fn softplus_and_clamp_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = random_off_zero(&[4, 5], &mut rng);
            let w = random(&[4, 5], &mut rng);
            let err = gradient_check(&[a, w], H, |g, v| {
                let s = g.scale(v[0], 3.0);
                let y = g.softplus(s);
                let c = g.clamp(v[0], -0.5, 0.5);
                let z = g.mul(y, v[1])?;
                let z = g.add(z, c)?;
                Ok(g.sum_all(z))
            })
            .unwrap();
            assert!(err < TOL, "{err}");
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![800.0, -800.0, 0.0]));
        let y = g.softplus(x);
        assert_eq!(g.value(y).data()[0], 800.0);
        assert!(g.value(y).data()[1] >= 0.0 && g.value(y).data()[1] < 1e-300);
        assert!((g.value(y).data()[2] - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn max_pool_semantics() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![3, 2], vec![1.0, 7.0, 4.0, 7.0, 2.0, -1.0]).unwrap());
        let m = g.max_axis(x, 0).unwrap();
        assert_eq!(g.value(m).data(), &[4.0, 7.0]);
        let s = g.sum_all(m);
        let gr = g.backward(s).unwrap();
        // column 1 ties between rows 0 and 1: lowest row wins
        assert_eq!(gr.get(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);

        let mut g = Graph::new();
        let single = g.constant(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let m = g.max_axis(single, 0).unwrap();
        assert_eq!(g.value(m).data(), &[1.0, 2.0, 3.0]);
        let empty = g.constant(Tensor::zeros(&[0, 3]));
        assert!(g.max_axis(empty, 0).is_err());
    }

    #[test]
    fn max_pool_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let a = random(&[4, 5], &mut rng);
            let w = random(&[5], &mut rng);
            let err = gradient_check(&[a, w], H, |g, v| {
                let m = g.max_axis(v[0], 0)?;
                let z = g.mul(m, v[1])?;
                Ok(g.sum_all(z))
            })
            .unwrap();
            assert!(err < TOL, "{err}");
        }
    }

    #[test]
    fn conv_identity_and_window_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[2, 4, 5], &mut rng);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        // 1×1 kernel mapping channel c to c
        let k = g.constant(Tensor::new(vec![2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let y = g.conv2d(xv, k, None, 1, (0, 0)).unwrap();
        assert_eq!(g.value(y), &x);

        let ones = g.constant(Tensor::full(&[1, 5, 5], 1.0));
        let k = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = g.conv2d(ones, k, None, 1, (0, 0)).unwrap();
        assert_eq!(g.shape(y), &[1, 3, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn conv_non_integral_output_rejected() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 6, 6]));
        let k = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
        assert!(matches!(g.conv2d(x, k, None, 2, (0, 0)), Err(TensorError::Invalid { .. })));
        assert!(g.conv2d(x, k, None, 3, (0, 0)).is_ok());
    }

    #[test]
    fn conv_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..20 {
            // 6×7 admits no stride-2 3×3 geometry, so odd trials use 7×9
            let (dims, stride, pad) = if trial % 2 == 0 {
                ([2, 6, 7], 1, (1, 1))
            } else {
                ([2, 7, 9], 2, (1, 0))
            };
            let x = random(&dims, &mut rng);
            let k = random(&[3, 2, 3, 3], &mut rng);
            let b = random(&[3], &mut rng);
            let shape = ConvGeometry::new(dims, [3, 2, 3, 3], stride, pad).unwrap();
            let w = random(&[3, shape.h_out, shape.w_out], &mut rng);
            let err = gradient_check(&[x, k, b, w], H, |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
                let z = g.mul(y, v[3])?;
                Ok(g.sum_all(z))
            })
            .unwrap();
            assert!(err < TOL, "trial {trial}: {err}");
        }
    }

    fn brute_chamfer(a: &[f64], b: &[f64]) -> f64 {
        let rows = |x: &[f64]| x.chunks(3).map(|p| [p[0], p[1], p[2]]).collect::<Vec<_>>();
        let (pa, pb) = (rows(a), rows(b));
        let d = |p: &[f64; 3], q: &[f64; 3]| {
            (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) + (p[2] - q[2]) * (p[2] - q[2])
        };
        let mut s1 = 0.0;
        for p in &pa {
            s1 += pb.iter().map(|q| d(p, q)).fold(f64::INFINITY, f64::min);
        }
        let mut s2 = 0.0;
        for q in &pb {
            s2 += pa.iter().map(|p| d(p, q)).fold(f64::INFINITY, f64::min);
        }
        s1 / pa.len() as f64 + s2 / pb.len() as f64
    }

    #[test]
    fn chamfer_closed_form_and_oracle() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::new(vec![1, 3], vec![0.0, 0.0, 0.0]).unwrap());
        let b = g.constant(Tensor::new(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap());
        let c = g.chamfer(a, b, Reduction::Mean).unwrap();
        assert_eq!(g.value(c).item(), 2.0);
        let c = g.chamfer(a, a, Reduction::Mean).unwrap();
        assert_eq!(g.value(c).item(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x = random(&[32, 3], &mut rng);
            let y = random(&[32, 3], &mut rng);
            let mut g = Graph::new();
            let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
            let c = g.chamfer(xv, yv, Reduction::Mean).unwrap();
            assert_eq!(g.value(c).item(), brute_chamfer(x.data(), y.data()));
        }
    }

    #[test]
    fn chamfer_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for trial in 0..20 {
            let x = random(&[9, 3], &mut rng);
            let y = random(&[7, 3], &mut rng);
            let red = if trial % 2 == 0 { Reduction::Mean } else { Reduction::Sum };
            let err = gradient_check(&[x, y], H, |g, v| g.chamfer(v[0], v[1], red)).unwrap();
            assert!(err < TOL, "{err}");
        }
    }

    #[test]
    fn each_node_visited_once_and_frozen_skipped() {
        let mut g = Graph::new();
        let w = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        let frozen = g.constant(Tensor::from_vec(vec![3.0, 4.0]));
        let a = g.mul(w, frozen).unwrap();
        let b = g.add(a, w).unwrap();
        let s = g.sum_all(b);
        let gr = g.backward(s).unwrap();
        // w, a, b, s carry gradients; the constant is never visited
        assert_eq!(gr.visited, 4);
        assert_eq!(gr.get(w).unwrap().data(), &[4.0, 5.0]);
        assert!(gr.get(frozen).is_none());
    }

    #[test]
    fn commutative_accumulation_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[4, 5], &mut rng);
        let run = |flip: bool| {
            let mut g = Graph::new();
            let v = g.param(x.clone());
            let a = g.exp(v);
            let b = g.square(v);
            let s = if flip { g.add(b, a).unwrap() } else { g.add(a, b).unwrap() };
            let t = g.sum_all(s);
            g.backward(t).unwrap().take(v).unwrap()
        };
        let (p, q) = (run(false), run(true));
        for (a, b) in p.data().iter().zip(q.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

//! Tape-based reverse-mode differentiation over a fixed set of dense ops.
//!
//! A [`Tape`] records every op applied to its [`Var`] handles. Calling
//! [`Tape::backward`] on a scalar walks the record in reverse and returns the
//! gradient of that scalar with respect to every leaf created with
//! `requires_grad`. A tape supports exactly one backward pass.

use super::tensor::{matmul_into, matmul_nt_acc, matmul_tn_acc, row_moments, transpose_raw};
use super::{NumericsError, Tensor};

/// Clamp applied to probabilities before taking logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Relu(Var),
    Gelu(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    Square(Var),
    Abs(Var),
    ColAffine {
        x: Var,
        scale: Vec<f64>,
    },
    KlSimilarity(Var, Var),
    JsSimilarity(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of `shape` when no path reached it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf; it participates in differentiation iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf, rg)
    }

    /// Leaf that requires grad regardless of the tensor's flag.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.with_grad(true), Op::Leaf, true)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.with_grad(false), Op::Leaf, false)
    }

    fn dims(&self, v: Var, op: &'static str) -> Result<(usize, usize), NumericsError> {
        let t = &self.nodes[v.0].value;
        if t.rank() != 2 {
            return Err(NumericsError::Rank {
                op,
                expected: 2,
                shape: t.shape().to_vec(),
            });
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(), NumericsError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(NumericsError::Shape {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).transpose()?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    fn zip_op(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericsError> {
        self.same_shape(a, b, name)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_op(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_op(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_op(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`cols` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(a, "add_row")?;
        let rv = self.value(row);
        if rv.numel() != c {
            return Err(NumericsError::Shape {
                op: "add_row",
                left: self.value(a).shape().to_vec(),
                right: rv.shape().to_vec(),
            });
        }
        let mut data = self.value(a).data().to_vec();
        let bias = rv.data();
        for i in 0..r {
            for (o, &b) in data[i * c..(i + 1) * c].iter_mut().zip(bias) {
                *o += b;
            }
        }
        let value = Tensor::matrix(r, c, data)?;
        let rg = self.any_grad(&[a, row]);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        let value = self.value(a).softmax(axis)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Softmax(a, axis), rg))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(x, "layer_norm")?;
        let (g, b) = (self.value(gain), self.value(bias));
        if g.numel() != c || b.numel() != c {
            return Err(NumericsError::Shape {
                op: "layer_norm",
                left: self.value(x).shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        let xs = self.value(x).data();
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let (mean, rs) = row_moments(row, eps);
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g.data()[j] + b.data()[j];
            }
        }
        let value = Tensor::matrix(r, c, out)?;
        let rg = self.any_grad(&[x, gain, bias]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    fn map_op(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.any_grad(&[a]);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map_op(a, |v| v.max(0.0), Op::Relu(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.map_op(a, gelu, Op::Gelu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map_op(a, |v| v * v, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map_op(a, f64::abs, Op::Abs(a))
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(x, "slice_cols")?;
        if start >= end || end > c {
            return Err(NumericsError::Slice {
                start,
                end,
                cols: c,
            });
        }
        let w = end - start;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        let value = Tensor::matrix(r, w, data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::SliceCols { x, start }, rg))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = *parts.first().ok_or(NumericsError::Empty("concat_cols"))?;
        let (r, _) = self.dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims(p, "concat_cols")?;
            if pr != r {
                return Err(NumericsError::Shape {
                    op: "concat_cols",
                    left: self.value(first).shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::matrix(r, total, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.numel() as f64);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Sums a matrix over `axis`: axis 1 gives one value per row, axis 0 one
    /// value per column. The result is rank-1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(a, "sum_axis")?;
        let src = self.value(a).data();
        let data = match axis {
            0 => (0..c).map(|j| (0..r).map(|i| src[i * c + j]).sum()).collect(),
            1 => (0..r).map(|i| src[i * c..(i + 1) * c].iter().sum()).collect(),
            _ => {
                return Err(NumericsError::Axis {
                    op: "sum_axis",
                    axis,
                    shape: vec![r, c],
                })
            }
        };
        let value = Tensor::vector(data);
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::SumAxis(a, axis), rg))
    }

    /// Per-column affine map `x * scale[j] + shift[j]` with constant
    /// coefficients.
    pub fn col_affine(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(x, "col_affine")?;
        if scale.len() != c || shift.len() != c {
            return Err(NumericsError::Shape {
                op: "col_affine",
                left: vec![r, c],
                right: vec![scale.len()],
            });
        }
        let src = self.value(x).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] = src[i * c + j] * scale[j] + shift[j];
            }
        }
        let value = Tensor::matrix(r, c, data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            value,
            Op::ColAffine {
                x,
                scale: scale.to_vec(),
            },
            rg,
        ))
    }

    /// `S[t][p] = -KL(m_t || e_p)` for row-stochastic `m [T x N]` and
    /// `e [P x N]`.
    pub fn kl_similarity(&mut self, m: Var, e: Var) -> Result<Var, NumericsError> {
        let (t, n, p) = self.pair_dims(m, e, "kl_similarity")?;
        let (mv, ev) = (self.value(m).data(), self.value(e).data());
        let mut out = vec![0.0; t * p];
        for i in 0..t {
            for k in 0..p {
                out[i * p + k] = -kl(&mv[i * n..(i + 1) * n], &ev[k * n..(k + 1) * n]);
            }
        }
        let value = Tensor::matrix(t, p, out)?;
        let rg = self.any_grad(&[m, e]);
        Ok(self.push(value, Op::KlSimilarity(m, e), rg))
    }

    /// `S[t][p] = -JS(m_t || e_p)`, natural log.
    pub fn js_similarity(&mut self, m: Var, e: Var) -> Result<Var, NumericsError> {
        let (t, n, p) = self.pair_dims(m, e, "js_similarity")?;
        let (mv, ev) = (self.value(m).data(), self.value(e).data());
        let mut out = vec![0.0; t * p];
        for i in 0..t {
            for k in 0..p {
                out[i * p + k] = -js(&mv[i * n..(i + 1) * n], &ev[k * n..(k + 1) * n]);
            }
        }
        let value = Tensor::matrix(t, p, out)?;
        let rg = self.any_grad(&[m, e]);
        Ok(self.push(value, Op::JsSimilarity(m, e), rg))
    }

    fn pair_dims(&self, m: Var, e: Var, op: &'static str) -> Result<(usize, usize, usize), NumericsError> {
        let (t, n) = self.dims(m, op)?;
        let (p, n2) = self.dims(e, op)?;
        if n != n2 {
            return Err(NumericsError::Shape {
                op,
                left: vec![t, n],
                right: vec![p, n2],
            });
        }
        Ok((t, n, p))
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape's one backward.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.consumed {
            return Err(NumericsError::BackwardTwice);
        }
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(NumericsError::NonScalarLoss(lv.shape().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(NumericsError::Detached);
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (g, &node.op) {
                (Some(g), Op::Leaf) if node.requires_grad => {
                    Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape"))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if wants(*a) {
                    acc(*a, &|s| matmul_nt_acc(g, tb.data(), s, m, n, k));
                }
                if wants(*b) {
                    acc(*b, &|s| matmul_tn_acc(ta.data(), g, s, m, k, n));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                let gt = transpose_raw(g, r, c);
                acc(*a, &|s| add_into(s, &gt));
            }
            Op::Add(a, b) => {
                acc(*a, &|s| add_into(s, g));
                acc(*b, &|s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &|s| add_into(s, g));
                acc(*b, &|s| s.iter_mut().zip(g).for_each(|(o, &x)| *o -= x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, &|s| {
                    for ((o, &x), &y) in s.iter_mut().zip(g).zip(tb.data()) {
                        *o += x * y;
                    }
                });
                acc(*b, &|s| {
                    for ((o, &x), &y) in s.iter_mut().zip(g).zip(ta.data()) {
                        *o += x * y;
                    }
                });
            }
            Op::AddRow(a, row) => {
                let c = node.value.shape()[1];
                acc(*a, &|s| add_into(s, g));
                acc(*row, &|s| {
                    for chunk in g.chunks(c) {
                        add_into(s, chunk);
                    }
                });
            }
            Op::Scale(a, f) => {
                acc(*a, &|s| s.iter_mut().zip(g).for_each(|(o, &x)| *o += x * f));
            }
            Op::Softmax(a, axis) => {
                let (outer, len, inner) = node.value.axis_split(*axis, "softmax").expect("axis");
                let y = node.value.data();
                acc(*a, &|s| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let dot: f64 = (0..len)
                                .map(|j| g[base + j * inner] * y[base + j * inner])
                                .sum();
                            for j in 0..len {
                                let k = base + j * inner;
                                s[k] += y[k] * (g[k] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                let gv = val(*gain).data();
                acc(*x, &|s| {
                    let mut dxhat = vec![0.0; c];
                    for i in 0..r {
                        let gr = &g[i * c..(i + 1) * c];
                        let hr = &xhat[i * c..(i + 1) * c];
                        for j in 0..c {
                            dxhat[j] = gr[j] * gv[j];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / c as f64;
                        let mean_dh =
                            dxhat.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for j in 0..c {
                            s[i * c + j] += rstd[i] * (dxhat[j] - mean_d - hr[j] * mean_dh);
                        }
                    }
                });
                acc(*gain, &|s| {
                    for i in 0..r {
                        for j in 0..c {
                            s[j] += g[i * c + j] * xhat[i * c + j];
                        }
                    }
                });
                acc(*bias, &|s| {
                    for chunk in g.chunks(c) {
                        add_into(s, chunk);
                    }
                });
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                acc(*a, &|s| {
                    for ((o, &gi), &xi) in s.iter_mut().zip(g).zip(x) {
                        if xi > 0.0 {
                            *o += gi;
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let x = val(*a).data();
                acc(*a, &|s| {
                    for ((o, &gi), &xi) in s.iter_mut().zip(g).zip(x) {
                        *o += gi * gelu_grad(xi);
                    }
                });
            }
            Op::Square(a) => {
                let x = val(*a).data();
                acc(*a, &|s| {
                    for ((o, &gi), &xi) in s.iter_mut().zip(g).zip(x) {
                        *o += 2.0 * xi * gi;
                    }
                });
            }
            Op::Abs(a) => {
                let x = val(*a).data();
                acc(*a, &|s| {
                    for ((o, &gi), &xi) in s.iter_mut().zip(g).zip(x) {
                        *o += gi * sign(xi);
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let c = val(*x).shape()[1];
                let (r, w) = (node.value.shape()[0], node.value.shape()[1]);
                acc(*x, &|s| {
                    for i in 0..r {
                        add_into(&mut s[i * c + start..i * c + start + w], &g[i * w..(i + 1) * w]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (r, total) = (node.value.shape()[0], node.value.shape()[1]);
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).shape()[1];
                    acc(p, &|s| {
                        for i in 0..r {
                            add_into(
                                &mut s[i * w..(i + 1) * w],
                                &g[i * total + offset..i * total + offset + w],
                            );
                        }
                    });
                    offset += w;
                }
            }
            Op::Sum(a) => {
                let g0 = g[0];
                acc(*a, &|s| s.iter_mut().for_each(|o| *o += g0));
            }
            Op::Mean(a) => {
                let g0 = g[0] / val(*a).numel() as f64;
                acc(*a, &|s| s.iter_mut().for_each(|o| *o += g0));
            }
            Op::SumAxis(a, axis) => {
                let (r, c) = (val(*a).shape()[0], val(*a).shape()[1]);
                let axis = *axis;
                acc(*a, &|s| {
                    for i in 0..r {
                        for j in 0..c {
                            s[i * c + j] += if axis == 1 { g[i] } else { g[j] };
                        }
                    }
                });
            }
            Op::ColAffine { x, scale } => {
                let c = scale.len();
                acc(*x, &|s| {
                    for (k, (o, &gi)) in s.iter_mut().zip(g).enumerate() {
                        *o += gi * scale[k % c];
                    }
                });
            }
            Op::KlSimilarity(m, e) => {
                let (t, n) = (val(*m).shape()[0], val(*m).shape()[1]);
                let p = val(*e).shape()[0];
                let (mv, ev) = (val(*m).data(), val(*e).data());
                acc(*m, &|s| {
                    for i in 0..t {
                        for k in 0..p {
                            let gi = g[i * p + k];
                            for j in 0..n {
                                let a = mv[i * n + j];
                                let b = ev[k * n + j];
                                let d = clamp_ln(a) - clamp_ln(b) + indicator(a);
                                s[i * n + j] -= gi * d;
                            }
                        }
                    }
                });
                acc(*e, &|s| {
                    for i in 0..t {
                        for k in 0..p {
                            let gi = g[i * p + k];
                            for j in 0..n {
                                let a = mv[i * n + j];
                                let b = ev[k * n + j];
                                if b > LOG_CLAMP {
                                    s[k * n + j] += gi * a / b;
                                }
                            }
                        }
                    }
                });
            }
            Op::JsSimilarity(m, e) => {
                let (t, n) = (val(*m).shape()[0], val(*m).shape()[1]);
                let p = val(*e).shape()[0];
                let (mv, ev) = (val(*m).data(), val(*e).data());
                let d_first = |a: f64, b: f64| {
                    let mid = 0.5 * (a + b);
                    0.5 * (clamp_ln(a) - clamp_ln(mid)) + 0.5 * indicator(a) - 0.5 * indicator(mid)
                };
                acc(*m, &|s| {
                    for i in 0..t {
                        for k in 0..p {
                            let gi = g[i * p + k];
                            for j in 0..n {
                                s[i * n + j] -= gi * d_first(mv[i * n + j], ev[k * n + j]);
                            }
                        }
                    }
                });
                acc(*e, &|s| {
                    for i in 0..t {
                        for k in 0..p {
                            let gi = g[i * p + k];
                            for j in 0..n {
                                s[k * n + j] -= gi * d_first(ev[k * n + j], mv[i * n + j]);
                            }
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, &x) in dst.iter_mut().zip(src) {
        *o += x;
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn clamp_ln(x: f64) -> f64 {
    x.max(LOG_CLAMP).ln()
}

/// d/dx [x * ln(max(x, c))] minus the log term: 1 where the clamp is inactive.
fn indicator(x: f64) -> f64 {
    if x > LOG_CLAMP {
        1.0
    } else {
        0.0
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

/// KL(a || b) with both arguments clamped inside the logarithm.
pub fn kl(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x * (clamp_ln(x) - clamp_ln(y)))
        .sum()
}

/// Jensen-Shannon divergence, natural log.
pub fn js(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let m = clamp_ln(0.5 * (x + y));
            0.5 * x * (clamp_ln(x) - m) + 0.5 * y * (clamp_ln(y) - m)
        })
        .sum()
}

/// Dense matmul without recording; used by inference-only paths.
pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    matmul_into(a, b, &mut out, m, k, n);
    out
}

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::kernels::{self, ConvDims};
use super::{as_matrix, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose(usize),
    Conv1d {
        input: usize,
        kernel: usize,
        bias: usize,
        dims: ConvDims,
    },
    AdaptiveMaxPool {
        input: usize,
        argmax: Vec<usize>,
    },
    Softmax(usize),
    LogSoftmax(usize),
    LayerNorm {
        input: usize,
        gain: usize,
        shift: usize,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Tanh(usize),
    Dropout {
        input: usize,
        mask: Vec<f64>,
    },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    Reshape(usize),
    Add(usize, usize),
    Scale(usize, f64),
    Slice {
        input: usize,
        row: usize,
        col: usize,
    },
    Pick {
        input: usize,
        index: usize,
    },
    Sum(Vec<usize>),
}

impl core::fmt::Debug for ConvDims {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "{}x{} * {}x{}x{} /{} -> {}",
            self.c_in, self.len, self.c_out, self.c_in, self.width, self.stride, self.n_out
        )
    }
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of differentiable operations.
///
/// Leaves may borrow their storage (parameters are not copied per pass).
/// [`Tape::backward`] walks the record in exact reverse order.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of a scalar with respect to every reachable leaf.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    visited: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }

    /// Node indices in the order backward processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

fn check_finite(op: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.to_vec()).expect("tape nodes hold valid shapes")
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'a, [f64]>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Op,
        inputs: &[usize],
    ) -> Result<Var> {
        check_finite(name, &value)?;
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        Ok(self.push(shape, Cow::Owned(value), op, needs_grad))
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        as_matrix(&self.nodes[v.0].shape)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_data()), Op::Leaf, requires_grad)
    }

    /// Leaf that borrows its values, e.g. a parameter held in a store.
    pub fn leaf_ref(&mut self, t: &'a Tensor, requires_grad: bool) -> Var {
        self.push(t.shape().to_vec(), Cow::Borrowed(t.data()), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    /// Matrix product. A 1-D left operand is treated as a single row and the
    /// result is then 1-D as well.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let bs = self.shape(b);
        if bs.len() != 2 || bs[0] != k {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape(a).to_vec(),
                right: bs.to_vec(),
            });
        }
        let n = bs[1];
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let shape = if self.shape(a).len() == 1 { vec![n] } else { vec![m, n] };
        self.push_op(
            "matmul",
            shape,
            out,
            Op::MatMul {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
            &[a.0, b.0],
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let src = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.push_op("transpose", vec![n, m], out, Op::Transpose(a.0), &[a.0])
    }

    /// Strided cross-correlation; `input: C_in×L`, `kernel: C_out×C_in×l`,
    /// `bias: C_out`. No activation is applied.
    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        if stride < 1 {
            return Err(Error::InvalidStride(stride));
        }
        let (c_in, len) = self.dims(input);
        let ks = self.shape(kernel).to_vec();
        if ks.len() != 3 || ks[1] != c_in || self.shape(bias) != [ks[0]] {
            return Err(Error::Dimension {
                op: "conv1d",
                left: self.shape(input).to_vec(),
                right: ks,
            });
        }
        let (c_out, width) = (ks[0], ks[2]);
        if width > len {
            return Err(Error::InvalidKernel {
                kernel: width,
                input: len,
            });
        }
        let n_out = (len - width) / stride + 1;
        let dims = ConvDims {
            c_in,
            len,
            c_out,
            width,
            stride,
            n_out,
        };
        let mut out = vec![0.0; c_out * n_out];
        kernels::conv1d(self.value(input), self.value(kernel), self.value(bias), &mut out, &dims);
        self.push_op(
            "conv1d",
            vec![c_out, n_out],
            out,
            Op::Conv1d {
                input: input.0,
                kernel: kernel.0,
                bias: bias.0,
                dims,
            },
            &[input.0, kernel.0, bias.0],
        )
    }

    /// Row-wise adaptive max pooling of a `C×L` input down to `C×target`.
    pub fn adaptive_max_pool(&mut self, input: Var, target: usize) -> Result<Var> {
        let (rows, len) = self.dims(input);
        if target < 1 || target > len {
            return Err(Error::InvalidTarget { target, input: len });
        }
        let src = self.value(input);
        let mut out = Vec::with_capacity(rows * target);
        let mut argmax = Vec::with_capacity(rows * target);
        for r in 0..rows {
            let row = &src[r * len..(r + 1) * len];
            for i in 0..target {
                let (start, end) = kernels::pool_bin(i, len, target);
                let mut best = start;
                for j in start + 1..end {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                out.push(row[best]);
                argmax.push(r * len + best);
            }
        }
        self.push_op(
            "adaptive_max_pool",
            vec![rows, target],
            out,
            Op::AdaptiveMaxPool { input: input.0, argmax },
            &[input.0],
        )
    }

    pub fn softmax_rows(&mut self, input: Var) -> Result<Var> {
        let (rows, cols) = self.dims(input);
        let out = softmax(self.value(input), rows, cols);
        let shape = self.shape(input).to_vec();
        self.push_op("softmax", shape, out, Op::Softmax(input.0), &[input.0])
    }

    pub fn log_softmax_rows(&mut self, input: Var) -> Result<Var> {
        let (rows, cols) = self.dims(input);
        let src = self.value(input);
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
            out.extend(row.iter().map(|v| v - lse));
        }
        let shape = self.shape(input).to_vec();
        self.push_op("log_softmax", shape, out, Op::LogSoftmax(input.0), &[input.0])
    }

    /// Per-row normalization followed by an elementwise affine map.
    pub fn layer_norm(&mut self, input: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = self.dims(input);
        if self.shape(gain) != [cols] || self.shape(shift) != [cols] {
            return Err(Error::Dimension {
                op: "layer_norm",
                left: self.shape(input).to_vec(),
                right: self.shape(gain).to_vec(),
            });
        }
        let src = self.value(input);
        let (g, s) = (self.value(gain), self.value(shift));
        let mut normed = Vec::with_capacity(rows * cols);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / libm::sqrt(var + eps);
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let xh = (v - mean) * is;
                normed.push(xh);
                out.push(xh * g[j] + s[j]);
            }
        }
        let shape = self.shape(input).to_vec();
        self.push_op(
            "layer_norm",
            shape,
            out,
            Op::LayerNorm {
                input: input.0,
                gain: gain.0,
                shift: shift.0,
                normed,
                inv_std,
            },
            &[input.0, gain.0, shift.0],
        )
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        let out = self.value(input).iter().map(|&v| libm::tanh(v)).collect();
        let shape = self.shape(input).to_vec();
        self.push_op("tanh", shape, out, Op::Tanh(input.0), &[input.0])
    }

    /// Inverted dropout: each element is zeroed with probability `ratio` and
    /// survivors are scaled by `1/(1-ratio)`. A zero ratio records nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, ratio: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::InvalidRatio(ratio));
        }
        if ratio == 0.0 {
            return Ok(input);
        }
        let keep = 1.0 / (1.0 - ratio);
        let src = self.value(input);
        let mask: Vec<f64> = (0..src.len())
            .map(|_| if rng.random::<f64>() < ratio { 0.0 } else { keep })
            .collect();
        let out = src.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape(input).to_vec();
        self.push_op("dropout", shape, out, Op::Dropout { input: input.0, mask }, &[input.0])
    }

    /// Stacks matrices along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_rows"))?;
        let (_, cols) = self.dims(first);
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    left: self.shape(first).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push_op("concat_rows", vec![rows, cols], out, Op::ConcatRows(ids.clone()), &ids)
    }

    /// Joins matrices along the feature axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_cols"))?;
        let (rows, _) = self.dims(first);
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    left: self.shape(first).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let (_, c) = self.dims(p);
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push_op("concat_cols", vec![rows, total], out, Op::ConcatCols(ids.clone()), &ids)
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(input).len() || shape.contains(&0) {
            return Err(Error::Dimension {
                op: "reshape",
                left: self.shape(input).to_vec(),
                right: shape.to_vec(),
            });
        }
        let out = self.value(input).to_vec();
        self.push_op("reshape", shape.to_vec(), out, Op::Reshape(input.0), &[input.0])
    }

    /// Row-major flattening to a 1-D vector.
    pub fn vectorize(&mut self, input: Var) -> Result<Var> {
        let n = self.value(input).len();
        self.reshape(input, &[n])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op: "add",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push_op("add", shape, out, Op::Add(a.0, b.0), &[a.0, b.0])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a).iter().map(|v| v * factor).collect();
        let shape = self.shape(a).to_vec();
        self.push_op("scale", shape, out, Op::Scale(a.0, factor), &[a.0])
    }

    pub fn slice_rows(&mut self, input: Var, start: usize, count: usize) -> Result<Var> {
        let (_, cols) = self.dims(input);
        self.slice(input, start, count, 0, cols)
    }

    pub fn slice_cols(&mut self, input: Var, start: usize, count: usize) -> Result<Var> {
        let (rows, _) = self.dims(input);
        self.slice(input, 0, rows, start, count)
    }

    /// The `n_rows × n_cols` block whose top-left element is `(row, col)`.
    pub fn slice(&mut self, input: Var, row: usize, n_rows: usize, col: usize, n_cols: usize) -> Result<Var> {
        let (rows, cols) = self.dims(input);
        if n_rows == 0 || n_cols == 0 || row + n_rows > rows || col + n_cols > cols {
            return Err(Error::Dimension {
                op: "slice",
                left: self.shape(input).to_vec(),
                right: vec![row, n_rows, col, n_cols],
            });
        }
        let src = self.value(input);
        let mut out = Vec::with_capacity(n_rows * n_cols);
        for r in row..row + n_rows {
            out.extend_from_slice(&src[r * cols + col..r * cols + col + n_cols]);
        }
        self.push_op(
            "slice",
            vec![n_rows, n_cols],
            out,
            Op::Slice {
                input: input.0,
                row,
                col,
            },
            &[input.0],
        )
    }

    /// Scalar holding one element (flat index) of `input`.
    pub fn pick(&mut self, input: Var, index: usize) -> Result<Var> {
        let src = self.value(input);
        if index >= src.len() {
            return Err(Error::Dimension {
                op: "pick",
                left: self.shape(input).to_vec(),
                right: vec![index],
            });
        }
        let out = vec![src[index]];
        self.push_op("pick", vec![1], out, Op::Pick { input: input.0, index }, &[input.0])
    }

    /// Scalar sum of every element of every part.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("sum"));
        }
        let total: f64 = parts.iter().map(|p| self.value(*p).iter().sum::<f64>()).sum();
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push_op("sum", vec![1], vec![total], Op::Sum(ids.clone()), &ids)
    }

    /// Reverse pass from a scalar.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Dimension {
                op: "backward",
                left: self.shape(loss).to_vec(),
                right: vec![1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut visited = Vec::new();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            visited.push(idx);
            self.propagate(idx, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                check_finite("backward", &g)?;
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads, visited })
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], i: usize) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[i].needs_grad {
            return None;
        }
        let len = self.nodes[i].value.len();
        Some(grads[i].get_or_insert_with(|| vec![0.0; len]))
    }

    #[allow(clippy::needless_range_loop)]
    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                if let Some(da) = self.grad_slot(grads, *a) {
                    kernels::matmul_grad_lhs(g, &self.nodes[*b].value, da, *m, *k, *n);
                }
                if let Some(db) = self.grad_slot(grads, *b) {
                    kernels::matmul_grad_rhs(&self.nodes[*a].value, g, db, *m, *k, *n);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = as_matrix(&self.nodes[*a].shape);
                if let Some(da) = self.grad_slot(grads, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Conv1d {
                input,
                kernel,
                bias,
                dims,
            } => {
                let x = &self.nodes[*input].value;
                let k = &self.nodes[*kernel].value;
                // the three slots are distinct nodes; borrow them one at a time
                let mut dx = self.grad_slot(grads, *input).map(core::mem::take);
                let mut dk = self.grad_slot(grads, *kernel).map(core::mem::take);
                let mut db = self.grad_slot(grads, *bias).map(core::mem::take);
                kernels::conv1d_backward(x, k, g, dx.as_deref_mut(), dk.as_deref_mut(), db.as_deref_mut(), dims);
                for (slot, val) in [(*input, dx), (*kernel, dk), (*bias, db)] {
                    if let Some(v) = val {
                        grads[slot] = Some(v);
                    }
                }
            }
            Op::AdaptiveMaxPool { input, argmax } => {
                if let Some(dx) = self.grad_slot(grads, *input) {
                    for (gv, &j) in g.iter().zip(argmax) {
                        dx[j] += gv;
                    }
                }
            }
            Op::Softmax(input) => {
                let (rows, cols) = as_matrix(&node.shape);
                let y = &node.value;
                if let Some(dx) = self.grad_slot(grads, *input) {
                    for r in 0..rows {
                        let span = r * cols..(r + 1) * cols;
                        let dotp: f64 = g[span.clone()].iter().zip(&y[span.clone()]).map(|(a, b)| a * b).sum();
                        for j in span {
                            dx[j] += y[j] * (g[j] - dotp);
                        }
                    }
                }
            }
            Op::LogSoftmax(input) => {
                let (rows, cols) = as_matrix(&node.shape);
                let y = &node.value;
                if let Some(dx) = self.grad_slot(grads, *input) {
                    for r in 0..rows {
                        let span = r * cols..(r + 1) * cols;
                        let gsum: f64 = g[span.clone()].iter().sum();
                        for j in span {
                            dx[j] += g[j] - libm::exp(y[j]) * gsum;
                        }
                    }
                }
            }
            Op::LayerNorm {
                input,
                gain,
                shift,
                normed,
                inv_std,
            } => {
                let (rows, cols) = as_matrix(&node.shape);
                let gv = &self.nodes[*gain].value;
                if let Some(dg) = self.grad_slot(grads, *gain) {
                    for (i, (gi, xh)) in g.iter().zip(normed).enumerate() {
                        dg[i % cols] += gi * xh;
                    }
                }
                if let Some(ds) = self.grad_slot(grads, *shift) {
                    for (i, gi) in g.iter().enumerate() {
                        ds[i % cols] += gi;
                    }
                }
                if let Some(dx) = self.grad_slot(grads, *input) {
                    let mut dxh = vec![0.0; cols];
                    for r in 0..rows {
                        let base = r * cols;
                        for j in 0..cols {
                            dxh[j] = g[base + j] * gv[j];
                        }
                        let mean_d = dxh.iter().sum::<f64>() / cols as f64;
                        let mean_dx = dxh
                            .iter()
                            .zip(&normed[base..base + cols])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / cols as f64;
                        for j in 0..cols {
                            dx[base + j] += inv_std[r] * (dxh[j] - mean_d - normed[base + j] * mean_dx);
                        }
                    }
                }
            }
            Op::Tanh(input) => {
                let y = &node.value;
                if let Some(dx) = self.grad_slot(grads, *input) {
                    for ((d, gi), yi) in dx.iter_mut().zip(g).zip(y.iter()) {
                        *d += gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::Dropout { input, mask } => {
                if let Some(dx) = self.grad_slot(grads, *input) {
                    for ((d, gi), m) in dx.iter_mut().zip(g).zip(mask) {
                        *d += gi * m;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p].value.len();
                    if let Some(dp) = self.grad_slot(grads, p) {
                        add_into(dp, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = as_matrix(&node.shape);
                let mut col = 0;
                for &p in parts {
                    let (_, c) = as_matrix(&self.nodes[p].shape);
                    if let Some(dp) = self.grad_slot(grads, p) {
                        for r in 0..rows {
                            add_into(&mut dp[r * c..(r + 1) * c], &g[r * total + col..r * total + col + c]);
                        }
                    }
                    col += c;
                }
            }
            Op::Reshape(input) => {
                if let Some(dx) = self.grad_slot(grads, *input) {
                    add_into(dx, g);
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.grad_slot(grads, *a) {
                    add_into(da, g);
                }
                if let Some(db) = self.grad_slot(grads, *b) {
                    add_into(db, g);
                }
            }
            Op::Scale(a, factor) => {
                if let Some(da) = self.grad_slot(grads, *a) {
                    for (d, gi) in da.iter_mut().zip(g) {
                        *d += factor * gi;
                    }
                }
            }
            Op::Slice { input, row, col } => {
                let (n_rows, n_cols) = as_matrix(&node.shape);
                let (_, cols) = as_matrix(&self.nodes[*input].shape);
                if let Some(dx) = self.grad_slot(grads, *input) {
                    for r in 0..n_rows {
                        let base = (row + r) * cols + col;
                        add_into(&mut dx[base..base + n_cols], &g[r * n_cols..(r + 1) * n_cols]);
                    }
                }
            }
            Op::Pick { input, index } => {
                if let Some(dx) = self.grad_slot(grads, *input) {
                    dx[*index] += g[0];
                }
            }
            Op::Sum(parts) => {
                for &p in parts {
                    if let Some(dp) = self.grad_slot(grads, p) {
                        dp.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
            }
        }
    }
}

pub(crate) fn softmax(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = &src[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|v| libm::exp(v - max)));
        let z: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|v| *v /= z);
    }
    out
}

use std::rc::Rc;

use super::{matmul_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    Silu(Var),
    Abs(Var),
    Square(Var),
    Transpose(Var),
    Reshape(Var),
    Gather(Var, Rc<[usize]>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        scale: Var,
        shift: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    RowSum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only operation record. Inputs always precede their consumers, so
/// the node order is a topological order and the backward sweep is a single
/// reverse pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[v.0].clone(), g.clone()))
    }

    /// Gradient of `v`, or zeros when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Registers a tensor; it is differentiated iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMul(a, b), rg, "matmul")
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let out = self.value(a).zip_map(self.value(b), f)?;
        let rg = self.rg(&[a, b]);
        self.push(out, op, rg, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    fn row_operand(&self, op: &'static str, a: Var, row: Var) -> Result<usize> {
        let n = self.value(a).last_dim();
        if self.value(row).numel() != n {
            return Err(Error::dim(
                op,
                format!(
                    "row operand has {} entries, last axis is {n}",
                    self.value(row).numel()
                ),
            ));
        }
        Ok(n)
    }

    /// Adds a length-`n` vector to every slice along the last axis.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let n = self.row_operand("add_row", a, row)?;
        let r = self.value(row).data();
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + r[i % n])
            .collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        let rg = self.rg(&[a, row]);
        self.push(out, Op::AddRow(a, row), rg, "add_row")
    }

    /// Multiplies every slice along the last axis by a length-`n` vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let n = self.row_operand("mul_row", a, row)?;
        let r = self.value(row).data();
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * r[i % n])
            .collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        let rg = self.rg(&[a, row]);
        self.push(out, Op::MulRow(a, row), rg, "mul_row")
    }

    /// Scales row `i` of `a: m×n` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("mul_col")?;
        if self.value(col).numel() != m {
            return Err(Error::dim(
                "mul_col",
                format!("column has {} entries, expected {m}", self.value(col).numel()),
            ));
        }
        let c = self.value(col).data();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * c[i / n])
            .collect();
        let out = Tensor::from_parts(vec![m, n], data);
        let rg = self.rg(&[a, col]);
        self.push(out, Op::MulCol(a, col), rg, "mul_col")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg, "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + c);
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a), rg, "add_scalar")
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| gelu_parts(x).0);
        let rg = self.rg(&[a]);
        self.push(out, Op::Gelu(a), rg, "gelu")
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x * sigmoid(x));
        let rg = self.rg(&[a]);
        self.push(out, Op::Silu(a), rg, "silu")
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::abs);
        let rg = self.rg(&[a]);
        self.push(out, Op::Abs(a), rg, "abs")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x * x);
        let rg = self.rg(&[a]);
        self.push(out, Op::Square(a), rg, "square")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let rg = self.rg(&[a]);
        self.push(out, Op::Transpose(a), rg, "transpose")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(&[a]);
        self.push(out, Op::Reshape(a), rg, "reshape")
    }

    /// `out.flat[i] = a.flat[index[i]]`, reshaped to `shape`. Indices may
    /// repeat (padding) or skip entries (cropping, masking).
    pub fn gather(&mut self, a: Var, index: Rc<[usize]>, shape: &[usize]) -> Result<Var> {
        let src = self.value(a).data();
        if shape.iter().product::<usize>() != index.len() {
            return Err(Error::dim(
                "gather",
                format!("{} indices for shape {shape:?}", index.len()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(Error::dim(
                "gather",
                format!("index {bad} out of range for {} entries", src.len()),
            ));
        }
        let data = index.iter().map(|&i| src[i]).collect();
        let out = Tensor::from_parts(shape.to_vec(), data);
        let rg = self.rg(&[a]);
        self.push(out, Op::Gather(a, index), rg, "gather")
    }

    /// Stacks 2-D tensors with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat_rows", "no inputs"));
        }
        let (_, n) = self.value(parts[0]).dims2("concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (m, n2) = self.value(p).dims2("concat_rows")?;
            if n2 != n {
                return Err(Error::dim("concat_rows", format!("{n2} columns vs {n}")));
            }
            rows += m;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = self.rg(parts);
        self.push(
            Tensor::from_parts(vec![rows, n], data),
            Op::ConcatRows(parts.to_vec()),
            rg,
            "concat_rows",
        )
    }

    /// Joins 2-D tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat_cols", "no inputs"));
        }
        let (m, _) = self.value(parts[0]).dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (m2, n) = self.value(p).dims2("concat_cols")?;
            if m2 != m {
                return Err(Error::dim("concat_cols", format!("{m2} rows vs {m}")));
            }
            widths.push(n);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        self.push(
            Tensor::from_parts(vec![m, total], data),
            Op::ConcatCols(parts.to_vec()),
            rg,
            "concat_cols",
        )
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2("slice_cols")?;
        if start >= end || end > n {
            return Err(Error::dim(
                "slice_cols",
                format!("range {start}..{end} of {n} columns"),
            ));
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let rg = self.rg(&[a]);
        self.push(
            Tensor::from_parts(vec![m, w], data),
            Op::SliceCols(a, start),
            rg,
            "slice_cols",
        )
    }

    /// Softmax along the last axis, stabilized by subtracting the slice max.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let n = av.last_dim();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        let rg = self.rg(&[a]);
        self.push(out, Op::SoftmaxRows(a), rg, "softmax_rows")
    }

    /// Normalizes each last-axis slice to zero mean and unit variance, then
    /// applies `scale` and `shift` (both of length D).
    pub fn layer_norm(&mut self, x: Var, scale: Var, shift: Var, eps: f64) -> Result<Var> {
        let d = self.row_operand("layer_norm", x, scale)?;
        self.row_operand("layer_norm", x, shift)?;
        let xv = self.value(x);
        let g = self.value(scale).data();
        let b = self.value(shift).data();
        let rows = xv.numel() / d;
        let mut xhat = vec![0.0; xv.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.numel()];
        for r in 0..rows {
            let s = &xv.data()[r * d..(r + 1) * d];
            let mean = s.iter().sum::<f64>() / d as f64;
            let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            rstd[r] = inv;
            for j in 0..d {
                let h = (s[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        let rg = self.rg(&[x, scale, shift]);
        self.push(
            out,
            Op::LayerNorm {
                x,
                scale,
                shift,
                xhat,
                rstd,
            },
            rg,
            "layer_norm",
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(&[a]);
        self.push(out, Op::Mean(a), rg, "mean")
    }

    /// Sum along the last axis of a 2-D tensor, giving `m×1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("row_sum")?;
        let data = self
            .value(a)
            .data()
            .chunks(n)
            .map(|r| r.iter().sum())
            .collect();
        let rg = self.rg(&[a]);
        self.push(
            Tensor::from_parts(vec![m, 1], data),
            Op::RowSum(a),
            rg,
            "row_sum",
        )
    }

    /// Reverse sweep from a scalar output. Every node is visited at most once.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for id in (0..n).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &gy, &mut grads);
            grads[id] = Some(gy);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, id: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let nn = bv.shape()[1];
                acc(*a, &|g| {
                    // dA = dY · Bᵀ
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &bv.data()[p * nn..(p + 1) * nn];
                            let grow = &gy[i * nn..(i + 1) * nn];
                            g[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &|g| {
                    // dB = Aᵀ · dY
                    let at = av.transpose().expect("rank 2");
                    matmul_into(at.data(), gy, g, k, m, nn);
                });
            }
            Op::Add(a, b) => {
                acc(*a, &|g| add_into(g, gy));
                acc(*b, &|g| add_into(g, gy));
            }
            Op::Sub(a, b) => {
                acc(*a, &|g| add_into(g, gy));
                acc(*b, &|g| g.iter_mut().zip(gy).for_each(|(o, d)| *o -= d));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &|g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * bv[i];
                    }
                });
                acc(*b, &|g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * av[i];
                    }
                });
            }
            Op::AddRow(a, row) => {
                let n = self.value(*row).numel();
                acc(*a, &|g| add_into(g, gy));
                acc(*row, &|g| {
                    for (i, d) in gy.iter().enumerate() {
                        g[i % n] += d;
                    }
                });
            }
            Op::MulRow(a, row) => {
                let r = self.value(*row).data();
                let av = self.value(*a).data();
                let n = r.len();
                acc(*a, &|g| {
                    for (i, d) in gy.iter().enumerate() {
                        g[i] += d * r[i % n];
                    }
                });
                acc(*row, &|g| {
                    for (i, d) in gy.iter().enumerate() {
                        g[i % n] += d * av[i];
                    }
                });
            }
            Op::MulCol(a, col) => {
                let c = self.value(*col).data();
                let av = self.value(*a).data();
                let n = self.value(*a).shape()[1];
                acc(*a, &|g| {
                    for (i, d) in gy.iter().enumerate() {
                        g[i] += d * c[i / n];
                    }
                });
                acc(*col, &|g| {
                    for (i, d) in gy.iter().enumerate() {
                        g[i / n] += d * av[i];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &|g| {
                g.iter_mut().zip(gy).for_each(|(o, d)| *o += d * c);
            }),
            Op::AddScalar(a) => acc(*a, &|g| add_into(g, gy)),
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                acc(*a, &|g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * gelu_parts(x[i]).1;
                    }
                });
            }
            Op::Silu(a) => {
                let x = self.value(*a).data();
                acc(*a, &|g| {
                    for i in 0..g.len() {
                        let s = sigmoid(x[i]);
                        g[i] += gy[i] * (s + x[i] * s * (1.0 - s));
                    }
                });
            }
            Op::Abs(a) => {
                let x = self.value(*a).data();
                acc(*a, &|g| {
                    for i in 0..g.len() {
                        let s = if x[i] > 0.0 {
                            1.0
                        } else if x[i] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        g[i] += gy[i] * s;
                    }
                });
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                acc(*a, &|g| {
                    for i in 0..g.len() {
                        g[i] += 2.0 * x[i] * gy[i];
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                acc(*a, &|g| {
                    // y is m×n, a is n×m
                    for i in 0..m {
                        for j in 0..n {
                            g[j * m + i] += gy[i * n + j];
                        }
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &|g| add_into(g, gy)),
            Op::Gather(a, index) => acc(*a, &|g| {
                for (d, &src) in gy.iter().zip(index.iter()) {
                    g[src] += d;
                }
            }),
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    let slice = &gy[offset..offset + len];
                    acc(p, &|g| add_into(g, slice));
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let mut col = 0;
                for &p in parts {
                    let (m, w) = (self.shape(p)[0], self.shape(p)[1]);
                    acc(p, &|g| {
                        for i in 0..m {
                            for j in 0..w {
                                g[i * w + j] += gy[i * total + col + j];
                            }
                        }
                    });
                    col += w;
                }
            }
            Op::SliceCols(a, start) => {
                let n = self.shape(*a)[1];
                let (m, w) = (node.value.shape()[0], node.value.shape()[1]);
                acc(*a, &|g| {
                    for i in 0..m {
                        for j in 0..w {
                            g[i * n + start + j] += gy[i * w + j];
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let n = node.value.last_dim();
                acc(*a, &|g| {
                    for (r, (yr, gr)) in y.chunks(n).zip(gy.chunks(n)).enumerate() {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            g[r * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                scale,
                shift,
                xhat,
                rstd,
            } => {
                let gamma = self.value(*scale).data();
                let d = gamma.len();
                acc(*scale, &|g| {
                    for (i, dy) in gy.iter().enumerate() {
                        g[i % d] += dy * xhat[i];
                    }
                });
                acc(*shift, &|g| {
                    for (i, dy) in gy.iter().enumerate() {
                        g[i % d] += dy;
                    }
                });
                acc(*x, &|g| {
                    for (r, &inv) in rstd.iter().enumerate() {
                        let base = r * d;
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..d {
                            let dh = gy[base + j] * gamma[j];
                            m1 += dh;
                            m2 += dh * xhat[base + j];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        for j in 0..d {
                            let dh = gy[base + j] * gamma[j];
                            g[base + j] += inv * (dh - m1 - xhat[base + j] * m2);
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &|g| g.iter_mut().for_each(|o| *o += gy[0])),
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                acc(*a, &|g| g.iter_mut().for_each(|o| *o += gy[0] / n));
            }
            Op::RowSum(a) => {
                let n = self.shape(*a)[1];
                acc(*a, &|g| {
                    for (i, o) in g.iter_mut().enumerate() {
                        *o += gy[i / n];
                    }
                });
            }
        }
    }
}

fn add_into(g: &mut [f64], d: &[f64]) {
    g.iter_mut().zip(d).for_each(|(o, v)| *o += v);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.square(x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn product_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let y = g.param(Tensor::scalar(5.0));
        let z = g.mul(x, y).unwrap();
        let grads = g.backward(z).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 5.0);
        assert_eq!(grads.get(y).unwrap().item(), 2.0);
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones(&[2]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn matmul_shape_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::ones(&[2, 3]));
        let b = g.constant(Tensor::ones(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn softmax_basic_rows() {
        let mut g = Graph::new();
        let a = g.constant(t(&[3, 2], &[0.0, 0.0, 1000.0, 0.0, -3.0, 7.0]));
        let s = g.softmax_rows(a).unwrap();
        let v = g.value(s).data();
        assert_eq!(&v[..2], &[0.5, 0.5]);
        assert!((v[2] - 1.0).abs() < 1e-300 + f64::EPSILON && v[3] < 1e-300);
        let one = g.constant(Tensor::scalar(4.2));
        let s1 = g.softmax_rows(one).unwrap();
        assert_eq!(g.value(s1).item(), 1.0);
    }

    #[test]
    fn layer_norm_constant_slice_and_zero_scale() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 3], &[2.5, 2.5, 2.5]));
        let one = g.constant(Tensor::ones(&[3]));
        let zero = g.constant(Tensor::zeros(&[3]));
        let y = g.layer_norm(x, one, zero, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);

        let x = g.constant(t(&[2, 3], &[1.0, -2.0, 0.5, 3.0, 3.5, -1.0]));
        let shift = g.constant(t(&[3], &[0.1, 0.2, 0.3]));
        let y = g.layer_norm(x, zero, shift, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.1, 0.2, 0.3, 0.1, 0.2, 0.3]);
    }

    #[test]
    fn layer_norm_dimension_mismatch() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[2, 4]));
        let s = g.constant(Tensor::ones(&[3]));
        assert!(g.layer_norm(x, s, s, 1e-5).is_err());
    }

    #[test]
    fn gather_scatters_back() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, 2.0, 3.0]));
        let y = g.gather(x, Rc::from(vec![2usize, 2, 0]), &[3]).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 3.0, 1.0]);
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 2.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        let x = g.param(Tensor::scalar(1.0));
        let y = g.mul(c, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().item(), 2.0);
    }
}

//! Recorded computation tape with reverse-mode gradients.
//!
//! A [`Graph`] is built fresh for every forward pass. Each operation appends a
//! node holding its value; [`Graph::backward`] walks the nodes in reverse and
//! accumulates adjoints. Parameter leaves map back to a [`ParamStore`] so the
//! result of a backward pass is a [`Grads`] table the optimizer can consume.

use std::collections::HashMap;

use super::kernels;
use super::params::{Grads, ParamId, ParamStore};
use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    GatherRows { x: Var, idx: Vec<usize> },
    OuterAdd { a: Var, b: Var },
    SumAll(Var),
    Reshape(Var),
    /// Scalar output whose gradient w.r.t. its input was computed alongside
    /// the value (e.g. a dynamic-programming loss).
    ScalarFn { x: Var, dx: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

fn check_finite(t: &Tensor, op: &'static str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, name: &'static str) -> Result<Var> {
        check_finite(&value, name)?;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Constant, false, "constant")
    }

    /// Leaf that receives a gradient, for differentiating w.r.t. data.
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Input, true, "input")
    }

    /// Leaf bound to a stored parameter. Frozen parameters enter as
    /// gradient-free leaves, so nothing upstream of them is differentiated.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(&id) {
            return Ok(v);
        }
        let v = self.push(store.get(id).clone(), Op::Param(id), store.is_trainable(id), "param")?;
        self.param_vars.insert(id, v);
        Ok(v)
    }

    pub fn param_named(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let id = store.id(name)?;
        self.param(store, id)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng, "matmul")
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMulT(a, b), ng, "matmul_t")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_with(self.value(b), "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng, "sub")
    }

    /// Adds the 1×n row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.len() != av.cols() {
            return Err(mismatch("add_row", av, bv));
        }
        let mut out = av.clone();
        let n = av.cols();
        for r in 0..av.rows() {
            for (o, &x) in out.data_mut()[r * n..(r + 1) * n].iter_mut().zip(bv.data()) {
                *o += x;
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::AddRow(a, b), ng, "add_row")
    }

    /// `a · w + bias`
    pub fn affine(&mut self, a: Var, w: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(a, w)?;
        self.add_row(y, bias)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_with(self.value(b), "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng, "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, c), ng, "scale")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng, "tanh")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng, "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(kernels::sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng, "sigmoid")
    }

    /// Row-wise softmax; `mask` (row-major, same size as `a`) zeroes entries.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let out = kernels::softmax_rows(self.value(a), mask)?;
        let ng = self.ng(a);
        self.push(out, Op::Softmax(a), ng, "softmax_rows")
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = kernels::log_softmax_rows(self.value(a));
        let ng = self.ng(a);
        self.push(out, Op::LogSoftmax(a), ng, "log_softmax_rows")
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.cols();
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(mismatch("layer_norm", xv, self.value(gamma)));
        }
        let (xhat, inv_std) = kernels::normalize_rows(xv);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![0.0; xhat.len()];
        for (r, chunk) in out.chunks_mut(n).enumerate() {
            for j in 0..n {
                chunk[j] = xhat[r * n + j] * g[j] + b[j];
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
            "layer_norm",
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), v));
            }
            cols += v.cols();
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::matrix(rows, cols, out)?, Op::ConcatCols(parts.to_vec()), ng, "concat_cols")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: xv.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let mut out = Vec::with_capacity(xv.rows() * len);
        for r in 0..xv.rows() {
            out.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let rows = xv.rows();
        let ng = self.ng(x);
        self.push(Tensor::matrix(rows, len, out)?, Op::SliceCols { x, start }, ng, "slice_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(mismatch("concat_rows", self.value(parts[0]), v));
            }
            rows += v.rows();
            out.extend_from_slice(v.data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::matrix(rows, cols, out)?, Op::ConcatRows(parts.to_vec()), ng, "concat_rows")
    }

    /// Row lookup; indices may repeat (embedding tables).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                lhs: xv.shape().to_vec(),
                rhs: vec![bad],
            });
        }
        let out = xv.select_rows(idx);
        let ng = self.ng(x);
        self.push(out, Op::GatherRows { x, idx: idx.to_vec() }, ng, "gather_rows")
    }

    /// Broadcast sum over the product grid: row `i·|b| + j` is `a_i + b_j`.
    pub fn outer_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(mismatch("outer_add", av, bv));
        }
        let (m, n, h) = (av.rows(), bv.rows(), av.cols());
        let mut out = Vec::with_capacity(m * n * h);
        for i in 0..m {
            let ar = av.row(i);
            for j in 0..n {
                out.extend(ar.iter().zip(bv.row(j)).map(|(x, y)| x + y));
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::matrix(m * n, h, out)?, Op::OuterAdd { a, b }, ng, "outer_add")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape.to_vec())?;
        let ng = self.ng(a);
        self.push(out, Op::Reshape(a), ng, "reshape")
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), ng, "sum_all")
    }

    /// Scalar node with a caller-supplied gradient w.r.t. `x`.
    pub fn scalar_fn(&mut self, x: Var, value: f64, dx: Tensor) -> Result<Var> {
        if dx.shape() != self.value(x).shape() {
            return Err(mismatch("scalar_fn", self.value(x), &dx));
        }
        check_finite(&dx, "scalar_fn gradient")?;
        let ng = self.ng(x);
        self.push(Tensor::scalar(value), Op::ScalarFn { x, dx }, ng, "scalar_fn")
    }

    /// Reverse sweep from the 1×1 node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Invalid(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut params = Grads::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads, &mut params)?;
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(op_name(&self.nodes[i].op)));
                }
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        params: &mut Grads,
    ) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Constant | Op::Input => {}
            Op::Param(id) => {
                params.accumulate(*id, &Tensor::new(node.value.shape().to_vec(), g.to_vec())?);
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if let Some(ga) = self.acc(grads, *a) {
                    gemm_nt(g, bv.data(), ga, m, n, k);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gemm_tn(av.data(), g, gb, m, k, n);
                }
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                if let Some(ga) = self.acc(grads, *a) {
                    gemm_nn(g, bv.data(), ga, m, n, k);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    gemm_tn(g, av.data(), gb, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.acc(grads, v) {
                        add_into(gv, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (x, y) in gb.iter_mut().zip(g) {
                        *x -= y;
                    }
                }
            }
            Op::AddRow(a, b) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
                let n = val(*b).len();
                if let Some(gb) = self.acc(grads, *b) {
                    for chunk in g.chunks(n) {
                        add_into(gb, chunk);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *x += gi * bi;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for ((x, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *x += gi * ai;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (x, gi) in ga.iter_mut().zip(g) {
                        *x += c * gi;
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gi), y) in ga.iter_mut().zip(g).zip(node.value.data()) {
                        *x += gi * (1.0 - y * y);
                    }
                }
            }
            Op::Relu(a) => {
                let av = val(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gi), xi) in ga.iter_mut().zip(g).zip(av) {
                        if *xi > 0.0 {
                            *x += gi;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, gi), y) in ga.iter_mut().zip(g).zip(node.value.data()) {
                        *x += gi * y * (1.0 - y);
                    }
                }
            }
            Op::Softmax(a) => {
                let n = node.value.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((gr, yr), out) in g.chunks(n).zip(node.value.data().chunks(n)).zip(ga.chunks_mut(n)) {
                        let s: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                        for j in 0..n {
                            out[j] += yr[j] * (gr[j] - s);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let n = node.value.cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((gr, lr), out) in g.chunks(n).zip(node.value.data().chunks(n)).zip(ga.chunks_mut(n)) {
                        let s: f64 = gr.iter().sum();
                        for j in 0..n {
                            out[j] += gr[j] - lr[j].exp() * s;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = node.value.cols();
                let gam = val(*gamma).data();
                if let Some(gg) = self.acc(grads, *gamma) {
                    for (gr, xr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            gg[j] += gr[j] * xr[j];
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *beta) {
                    for gr in g.chunks(n) {
                        add_into(gb, gr);
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    let nf = n as f64;
                    for (r, (gr, xr)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        let dxhat: Vec<f64> = gr.iter().zip(gam).map(|(a, b)| a * b).collect();
                        let mean_d: f64 = dxhat.iter().sum::<f64>() / nf;
                        let mean_dx: f64 = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / nf;
                        let out = &mut gx[r * n..(r + 1) * n];
                        for j in 0..n {
                            out[j] += inv_std[r] * (dxhat[j] - mean_d - xr[j] * mean_dx);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if let Some(gp) = self.acc(grads, p) {
                        for (r, gr) in g.chunks(total).enumerate() {
                            add_into(&mut gp[r * w..(r + 1) * w], &gr[offset..offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let w = node.value.cols();
                let n = val(*x).cols();
                if let Some(gx) = self.acc(grads, *x) {
                    for (r, gr) in g.chunks(w).enumerate() {
                        add_into(&mut gx[r * n + start..r * n + start + w], gr);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    if let Some(gp) = self.acc(grads, p) {
                        add_into(gp, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::GatherRows { x, idx } => {
                let n = node.value.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    for (gr, &i) in g.chunks(n).zip(idx) {
                        add_into(&mut gx[i * n..(i + 1) * n], gr);
                    }
                }
            }
            Op::OuterAdd { a, b } => {
                let (m, nb, h) = (val(*a).rows(), val(*b).rows(), val(*a).cols());
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..m {
                        for j in 0..nb {
                            let src = &g[(i * nb + j) * h..(i * nb + j + 1) * h];
                            add_into(&mut ga[i * h..(i + 1) * h], src);
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..m {
                        for j in 0..nb {
                            let src = &g[(i * nb + j) * h..(i * nb + j + 1) * h];
                            add_into(&mut gb[j * h..(j + 1) * h], src);
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
            }
            Op::SumAll(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for x in ga.iter_mut() {
                        *x += g[0];
                    }
                }
            }
            Op::ScalarFn { x, dx } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (o, d) in gx.iter_mut().zip(dx.data()) {
                        *o += g[0] * d;
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Constant => "constant",
        Op::Input => "input",
        Op::Param(_) => "param",
        Op::MatMul(..) => "matmul",
        Op::MatMulT(..) => "matmul_t",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::AddRow(..) => "add_row",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Tanh(_) => "tanh",
        Op::Relu(_) => "relu",
        Op::Sigmoid(_) => "sigmoid",
        Op::Softmax(_) => "softmax_rows",
        Op::LogSoftmax(_) => "log_softmax_rows",
        Op::LayerNorm { .. } => "layer_norm",
        Op::ConcatCols(_) => "concat_cols",
        Op::SliceCols { .. } => "slice_cols",
        Op::ConcatRows(_) => "concat_rows",
        Op::GatherRows { .. } => "gather_rows",
        Op::OuterAdd { .. } => "outer_add",
        Op::SumAll(_) => "sum_all",
        Op::Reshape(_) => "reshape",
        Op::ScalarFn { .. } => "scalar_fn",
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Grads,
}

impl Gradients {
    /// Adjoint of any node that required a gradient.
    pub fn wrt(&self, graph: &Graph, v: Var) -> Option<Tensor> {
        self.nodes[v.0]
            .as_ref()
            .map(|g| Tensor::new(graph.shape(v).to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn params(&self) -> &Grads {
        &self.params
    }

    pub fn into_params(self) -> Grads {
        self.params
    }
}

//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation applied to its nodes during the
//! forward pass. [`Graph::backward`] then walks the tape in reverse and
//! accumulates gradients for the parameters that were read through
//! [`Graph::param`] or [`Graph::param_rows`].
//!
//! Forward operations never fail; shape errors are programming errors and
//! panic. The first non-finite intermediate is remembered and reported by
//! [`Graph::backward`] and [`Graph::check_finite`].

use std::collections::HashMap;

use super::tensor::{matmul_raw, sigmoid, softplus, Tensor};
use crate::error::{Error, Result};

pub type ParamId = usize;

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on duplicate names.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| &self.tensors[id])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (i, n.as_str(), t))
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Softplus,
    Sigmoid,
    Relu,
    Tanh,
}

#[derive(Debug)]
enum Op {
    Const,
    Param {
        id: ParamId,
        // gathered row indices and the full parameter height
        rows: Option<(Vec<usize>, usize)>,
    },
    MatMul(Var, Var),
    Transpose(Var),
    Binary(BinaryKind, Var, Var),
    Unary(UnaryKind, Var),
    Affine {
        input: Var,
        scale: f64,
    },
    SoftmaxRows(Var),
    LayerNormRows {
        input: Var,
        gain: Var,
        bias: Var,
        normalized: Tensor,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        input: Var,
        start: usize,
    },
    SliceRows {
        input: Var,
        start: usize,
    },
    RepeatRows(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    SquaredError(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Const => "const",
            Op::Param { .. } => "param",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Binary(BinaryKind::Add, ..) => "add",
            Op::Binary(BinaryKind::Sub, ..) => "sub",
            Op::Binary(BinaryKind::Mul, ..) => "mul",
            Op::Binary(BinaryKind::Div, ..) => "div",
            Op::Unary(UnaryKind::Softplus, _) => "softplus",
            Op::Unary(UnaryKind::Sigmoid, _) => "sigmoid",
            Op::Unary(UnaryKind::Relu, _) => "relu",
            Op::Unary(UnaryKind::Tanh, _) => "tanh",
            Op::Affine { .. } => "affine",
            Op::SoftmaxRows(_) => "softmax",
            Op::LayerNormRows { .. } => "layer_norm",
            Op::ConcatCols(_) => "concat",
            Op::SliceCols { .. } => "slice_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::RepeatRows(_) => "repeat_rows",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::RowSum(_) => "row_sum",
            Op::SquaredError(..) => "squared_error",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every parameter of a [`ParamStore`].
/// Parameters that did not influence the scalar have no entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn empty(n_params: usize) -> Self {
        Gradients {
            grads: vec![None; n_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id).and_then(Option::as_ref)
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Tensor> {
        self.grads.get_mut(id).and_then(Option::as_mut)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        if self.grads.len() <= id {
            self.grads.resize(id + 1, None);
        }
        self.grads[id] = Some(value);
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds `other` into `self`, entry by entry.
    pub fn accumulate(&mut self, other: &Gradients) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => m.add_assign(t),
                    None => *mine = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.grads.iter_mut().flatten() {
            t.scale_assign(factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    poisoned: Option<(usize, &'static str)>,
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

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.poisoned {
            Some((node, op)) => Err(Error::NonFinite { node, op }),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let idx = self.nodes.len();
        if self.poisoned.is_none() && !value.is_finite() {
            self.poisoned = Some((idx, op.name()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(idx)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Const, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param { id, rows: None }, true)
    }

    /// Embedding lookup: gathers the given rows of a parameter matrix.
    pub fn param_rows(&mut self, store: &ParamStore, id: ParamId, rows: &[usize]) -> Var {
        let full = store.get(id);
        let value = full.select_rows(rows);
        let height = full.rows();
        self.push(
            value,
            Op::Param {
                id,
                rows: Some((rows.to_vec(), height)),
            },
            true,
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.cols(),
            vb.rows(),
            "matmul {:?} x {:?}",
            va.shape(),
            vb.shape()
        );
        let out = matmul_raw(va, vb);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let rows = broadcast_dim(va.rows(), vb.rows());
        let cols = broadcast_dim(va.cols(), vb.cols());
        let (Some(rows), Some(cols)) = (rows, cols) else {
            panic!("cannot broadcast {:?} with {:?}", va.shape(), vb.shape());
        };
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let x = bget(va, r, c);
                let y = bget(vb, r, c);
                let z = match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                    BinaryKind::Div => x / y,
                };
                out.set(r, c, z);
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Binary(kind, a, b), rg)
    }

    /// Elementwise sum with row/column broadcasting of size-1 dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinaryKind::Div, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, a: Var) -> Var {
        let f: fn(f64) -> f64 = match kind {
            UnaryKind::Softplus => softplus,
            UnaryKind::Sigmoid => sigmoid,
            UnaryKind::Relu => |x| x.max(0.0),
            UnaryKind::Tanh => f64::tanh,
        };
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(out, Op::Unary(kind, a), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Softplus, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Relu, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Tanh, a)
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + shift);
        let rg = self.rg(a);
        self.push(out, Op::Affine { input: a, scale }, rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.affine(a, factor, 0.0)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 0.0)
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` is masked for `j > i`.
    pub fn softmax_rows(&mut self, a: Var, causal: bool) -> Var {
        let va = self.value(a);
        let mut out = Tensor::zeros(va.rows(), va.cols());
        for r in 0..va.rows() {
            let limit = if causal { (r + 1).min(va.cols()) } else { va.cols() };
            let row = &va.row_slice(r)[..limit];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (c, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                out.set(r, c, e);
                total += e;
            }
            for c in 0..limit {
                out.set(r, c, out.get(r, c) / total);
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    /// Row-wise layer normalisation with `1 × cols` gain and bias.
    pub fn layer_norm_rows(&mut self, a: Var, gain: Var, bias: Var) -> Var {
        let va = self.value(a);
        let (rows, cols) = (va.rows(), va.cols());
        assert_eq!(self.shape(gain), [1, cols]);
        assert_eq!(self.shape(bias), [1, cols]);
        let mut normalized = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = va.row_slice(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for c in 0..cols {
                normalized.set(r, c, (row[c] - mean) * inv);
            }
            inv_std.push(inv);
        }
        let (g, b) = (self.value(gain), self.value(bias));
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                out.set(r, c, normalized.get(r, c) * g.get(0, c) + b.get(0, c));
            }
        }
        let rg = self.rg(a) || self.rg(gain) || self.rg(bias);
        self.push(
            out,
            Op::LayerNormRows {
                input: a,
                gain,
                bias,
                normalized,
                inv_std,
            },
            rg,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.shape(parts[0])[0];
        let cols: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let vp = self.value(p);
                assert_eq!(vp.rows(), rows, "concat_cols row mismatch");
                out.row_slice_mut(r)[offset..offset + vp.cols()].copy_from_slice(vp.row_slice(r));
                offset += vp.cols();
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let va = self.value(a);
        assert!(start <= end && end <= va.cols());
        let mut out = Tensor::zeros(va.rows(), end - start);
        for r in 0..va.rows() {
            out.row_slice_mut(r)
                .copy_from_slice(&va.row_slice(r)[start..end]);
        }
        let rg = self.rg(a);
        self.push(out, Op::SliceCols { input: a, start }, rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let va = self.value(a);
        assert!(start <= end && end <= va.rows());
        let rows: Vec<usize> = (start..end).collect();
        let out = va.select_rows(&rows);
        let rg = self.rg(a);
        self.push(out, Op::SliceRows { input: a, start }, rg)
    }

    /// Tiles a `1 × c` row into `n × c`.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.rows(), 1);
        let out = va.select_rows(&vec![0; n]);
        let rg = self.rg(a);
        self.push(out, Op::RepeatRows(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let out = Tensor::scalar(va.sum() / va.len() as f64);
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg)
    }

    /// Sum over columns: `r × c → r × 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let sums: Vec<f64> = (0..va.rows()).map(|r| va.row_slice(r).iter().sum()).collect();
        let out = Tensor::column(&sums);
        let rg = self.rg(a);
        self.push(out, Op::RowSum(a), rg)
    }

    /// `Σ (a − b)²` as a `1 × 1` node.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape());
        let total = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| (x - y).powi(2))
            .sum();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::scalar(total), Op::SquaredError(a, b), rg)
    }

    /// Reverse pass from a `1 × 1` node.
    pub fn backward(&self, loss: Var, n_params: usize) -> Result<Gradients> {
        self.check_finite()?;
        assert_eq!(self.shape(loss), [1, 1], "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::empty(n_params);

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Const => {}
                Op::Param { id, rows } => {
                    let shape = self.nodes[idx].value.shape();
                    let slot = &mut out.grads[*id];
                    match rows {
                        None => match slot {
                            Some(g) => g.add_assign(&dy),
                            None => *slot = Some(dy),
                        },
                        Some((rows, height)) => {
                            debug_assert_eq!(shape[0], rows.len());
                            let full = slot.get_or_insert_with(|| Tensor::zeros(*height, shape[1]));
                            for (i, &r) in rows.iter().enumerate() {
                                let src = dy.row_slice(i);
                                for (d, s) in full.row_slice_mut(r).iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        let bt = self.value(*b).transpose();
                        accumulate(&mut grads, *a, matmul_raw(&dy, &bt));
                    }
                    if self.rg(*b) {
                        let at = self.value(*a).transpose();
                        accumulate(&mut grads, *b, matmul_raw(&at, &dy));
                    }
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, dy.transpose()),
                Op::Binary(kind, a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let [rows, cols] = dy.shape();
                    if self.rg(*a) {
                        let mut ga = Tensor::zeros(va.rows(), va.cols());
                        for r in 0..rows {
                            for c in 0..cols {
                                let g = dy.get(r, c);
                                let d = match kind {
                                    BinaryKind::Add | BinaryKind::Sub => g,
                                    BinaryKind::Mul => g * bget(vb, r, c),
                                    BinaryKind::Div => g / bget(vb, r, c),
                                };
                                let (ra, ca) = (r % va.rows(), c % va.cols());
                                ga.set(ra, ca, ga.get(ra, ca) + d);
                            }
                        }
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.rg(*b) {
                        let mut gb = Tensor::zeros(vb.rows(), vb.cols());
                        for r in 0..rows {
                            for c in 0..cols {
                                let g = dy.get(r, c);
                                let d = match kind {
                                    BinaryKind::Add => g,
                                    BinaryKind::Sub => -g,
                                    BinaryKind::Mul => g * bget(va, r, c),
                                    BinaryKind::Div => {
                                        let y = bget(vb, r, c);
                                        -g * bget(va, r, c) / (y * y)
                                    }
                                };
                                let (rb, cb) = (r % vb.rows(), c % vb.cols());
                                gb.set(rb, cb, gb.get(rb, cb) + d);
                            }
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Unary(kind, a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut g = dy;
                    for (i, gi) in g.data_mut().iter_mut().enumerate() {
                        let xi = x.data()[i];
                        let yi = y.data()[i];
                        let local = match kind {
                            UnaryKind::Softplus => sigmoid(xi),
                            UnaryKind::Sigmoid => yi * (1.0 - yi),
                            UnaryKind::Relu => {
                                if xi > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::Tanh => 1.0 - yi * yi,
                        };
                        *gi *= local;
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Affine { input, scale } => {
                    let mut g = dy;
                    g.scale_assign(*scale);
                    accumulate(&mut grads, *input, g);
                }
                Op::SoftmaxRows(input) => {
                    let y = &node.value;
                    let mut g = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row_slice(r);
                        let dr = dy.row_slice(r);
                        let inner: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        for (c, gi) in g.row_slice_mut(r).iter_mut().enumerate() {
                            *gi = yr[c] * (dr[c] - inner);
                        }
                    }
                    accumulate(&mut grads, *input, g);
                }
                Op::LayerNormRows {
                    input,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let [rows, cols] = dy.shape();
                    if self.rg(*gain) {
                        let mut gg = Tensor::zeros(1, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                gg.set(0, c, gg.get(0, c) + dy.get(r, c) * normalized.get(r, c));
                            }
                        }
                        accumulate(&mut grads, *gain, gg);
                    }
                    if self.rg(*bias) {
                        let mut gb = Tensor::zeros(1, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                gb.set(0, c, gb.get(0, c) + dy.get(r, c));
                            }
                        }
                        accumulate(&mut grads, *bias, gb);
                    }
                    if self.rg(*input) {
                        let n = cols as f64;
                        let mut gx = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            let dxhat: Vec<f64> =
                                (0..cols).map(|c| dy.get(r, c) * gv.get(0, c)).collect();
                            let mean_d = dxhat.iter().sum::<f64>() / n;
                            let mean_dx = (0..cols)
                                .map(|c| dxhat[c] * normalized.get(r, c))
                                .sum::<f64>()
                                / n;
                            for c in 0..cols {
                                let v = inv_std[r]
                                    * (dxhat[c] - mean_d - normalized.get(r, c) * mean_dx);
                                gx.set(r, c, v);
                            }
                        }
                        accumulate(&mut grads, *input, gx);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.shape(p)[1];
                        if self.rg(p) {
                            let mut gp = Tensor::zeros(dy.rows(), pc);
                            for r in 0..dy.rows() {
                                gp.row_slice_mut(r)
                                    .copy_from_slice(&dy.row_slice(r)[offset..offset + pc]);
                            }
                            accumulate(&mut grads, p, gp);
                        }
                        offset += pc;
                    }
                }
                Op::SliceCols { input, start } => {
                    let [rows, cols] = self.shape(*input);
                    let mut g = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        g.row_slice_mut(r)[*start..*start + dy.cols()]
                            .copy_from_slice(dy.row_slice(r));
                    }
                    accumulate(&mut grads, *input, g);
                }
                Op::SliceRows { input, start } => {
                    let [rows, cols] = self.shape(*input);
                    let mut g = Tensor::zeros(rows, cols);
                    for r in 0..dy.rows() {
                        g.row_slice_mut(start + r).copy_from_slice(dy.row_slice(r));
                    }
                    accumulate(&mut grads, *input, g);
                }
                Op::RepeatRows(a) => {
                    let mut g = Tensor::zeros(1, dy.cols());
                    for r in 0..dy.rows() {
                        for (d, s) in g.row_slice_mut(0).iter_mut().zip(dy.row_slice(r)) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Sum(a) => {
                    let [rows, cols] = self.shape(*a);
                    accumulate(&mut grads, *a, Tensor::filled(rows, cols, dy.item()));
                }
                Op::Mean(a) => {
                    let [rows, cols] = self.shape(*a);
                    let n = (rows * cols) as f64;
                    accumulate(&mut grads, *a, Tensor::filled(rows, cols, dy.item() / n));
                }
                Op::RowSum(a) => {
                    let [rows, cols] = self.shape(*a);
                    let mut g = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        let v = dy.get(r, 0);
                        g.row_slice_mut(r).iter_mut().for_each(|x| *x = v);
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::SquaredError(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let s = dy.item();
                    let diff: Vec<f64> = va
                        .data()
                        .iter()
                        .zip(vb.data())
                        .map(|(x, y)| 2.0 * s * (x - y))
                        .collect();
                    if self.rg(*a) {
                        let g = Tensor::from_vec(va.rows(), va.cols(), diff.clone())
                            .expect("shape checked on forward");
                        accumulate(&mut grads, *a, g);
                    }
                    if self.rg(*b) {
                        let g = Tensor::from_vec(vb.rows(), vb.cols(), diff)
                            .expect("shape checked on forward")
                            .map(|x| -x);
                        accumulate(&mut grads, *b, g);
                    }
                }
            }
        }
        if !out.is_finite() {
            return Err(Error::NonFinite {
                node: loss.0,
                op: "backward",
            });
        }
        Ok(out)
    }
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

fn bget(t: &Tensor, r: usize, c: usize) -> f64 {
    t.get(r % t.rows(), c % t.cols())
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{check_gradients, forward_backward};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        Tensor::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::row(&[1.0, 2.0]));
        let (value, grads) = forward_backward(&store, |g, p| {
            let w = g.param(p, 0);
            let sq = g.mul(w, w);
            Ok(g.sum(sq))
        })
        .unwrap();
        assert_eq!(value, 5.0);
        assert_eq!(grads.get(0).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn softplus_value_and_gradient_at_zero() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::scalar(0.0));
        let (value, grads) = forward_backward(&store, |g, p| {
            let x = g.param(p, 0);
            let y = g.softplus(x);
            Ok(g.sum(y))
        })
        .unwrap();
        assert!((value - 0.693147).abs() < 1e-6);
        assert!((grads.get(0).unwrap().item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_finite_is_reported_with_op() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::scalar(0.0));
        let mut g = Graph::new();
        let x = g.param(&store, 0);
        let y = g.div(x, x);
        let s = g.sum(y);
        match g.backward(s, 1) {
            Err(Error::NonFinite { op, .. }) => assert_eq!(op, "div"),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(3, 3, vec![1.0, 5.0, 9.0, 2.0, 1.0, 7.0, 0.0, 0.0, 0.0]).unwrap());
        let y = g.softmax_rows(x, true);
        let v = g.value(y);
        assert_eq!(v.get(0, 0), 1.0);
        assert_eq!(v.get(0, 1), 0.0);
        assert_eq!(v.get(1, 2), 0.0);
        for r in 0..3 {
            assert!((v.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn param_rows_scatter() {
        let mut store = ParamStore::new();
        store.add("emb", Tensor::from_vec(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let (_, grads) = forward_backward(&store, |g, p| {
            let rows = g.param_rows(p, 0, &[2, 0, 2]);
            Ok(g.sum(rows))
        })
        .unwrap();
        assert_eq!(grads.get(0).unwrap().data(), &[1., 1., 0., 0., 2., 2.]);
    }

    /// Every op against central differences on random inputs in [-2, 2].
    #[test]
    fn each_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let a = store.add("a", random(3, 4, &mut rng));
        let b = store.add("b", random(4, 3, &mut rng));
        let r = store.add("r", random(1, 4, &mut rng));
        let c = store.add("c", random(3, 1, &mut rng));
        let gain = store.add("gain", random(1, 4, &mut rng));
        let bias = store.add("bias", random(1, 4, &mut rng));
        let pos = store.add("pos", random(3, 4, &mut rng).map(|x| x.abs() + 0.5));
        let ops: Vec<(&str, Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var>>)> = vec![
            ("matmul", Box::new(move |g, p| { let x = g.param(p, a); let y = g.param(p, b); let z = g.matmul(x, y); let z = g.tanh(z); Ok(g.sum(z)) })),
            ("transpose", Box::new(move |g, p| { let x = g.param(p, a); let t = g.transpose(x); let y = g.param(p, b); let z = g.mul(t, y); let z = g.mul(z, z); Ok(g.sum(z)) })),
            ("add_row", Box::new(move |g, p| { let x = g.param(p, a); let y = g.param(p, r); let z = g.add(x, y); let z = g.sigmoid(z); Ok(g.sum(z)) })),
            ("sub_col", Box::new(move |g, p| { let x = g.param(p, a); let y = g.param(p, c); let z = g.sub(x, y); let z = g.softplus(z); Ok(g.sum(z)) })),
            ("mul", Box::new(move |g, p| { let x = g.param(p, a); let y = g.param(p, r); let z = g.mul(x, y); let z = g.mul(z, x); Ok(g.sum(z)) })),
            ("div", Box::new(move |g, p| { let x = g.param(p, a); let y = g.param(p, pos); let z = g.div(x, y); let z = g.tanh(z); Ok(g.sum(z)) })),
            ("relu", Box::new(move |g, p| { let x = g.param(p, a); let z = g.relu(x); let z = g.mul(z, z); Ok(g.sum(z)) })),
            ("affine", Box::new(move |g, p| { let x = g.param(p, a); let z = g.affine(x, -1.5, 0.3); let z = g.sigmoid(z); Ok(g.mean(z)) })),
            ("softmax", Box::new(move |g, p| { let x = g.param(p, a); let w = g.param(p, pos); let z = g.softmax_rows(x, false); let z = g.mul(z, w); Ok(g.sum(z)) })),
            ("softmax_causal", Box::new(move |g, p| { let x = g.param(p, a); let y = g.param(p, b); let s = g.matmul(x, y); let z = g.softmax_rows(s, true); let w = g.param(p, c); let z = g.mul(z, w); Ok(g.sum(z)) })),
            ("layer_norm", Box::new(move |g, p| { let x = g.param(p, a); let gg = g.param(p, gain); let bb = g.param(p, bias); let z = g.layer_norm_rows(x, gg, bb); let w = g.param(p, pos); let z = g.mul(z, w); Ok(g.sum(z)) })),
            ("concat_slice", Box::new(move |g, p| { let x = g.param(p, a); let y = g.param(p, c); let z = g.concat_cols(&[x, y, x]); let z = g.slice_cols(z, 2, 7); let z = g.slice_rows(z, 1, 3); let z = g.tanh(z); Ok(g.sum(z)) })),
            ("repeat_rows", Box::new(move |g, p| { let x = g.param(p, r); let z = g.repeat_rows(x, 3); let w = g.param(p, pos); let z = g.mul(z, w); let z = g.tanh(z); Ok(g.sum(z)) })),
            ("row_sum", Box::new(move |g, p| { let x = g.param(p, a); let z = g.row_sum(x); let z = g.mul(z, z); Ok(g.sum(z)) })),
            ("squared_error", Box::new(move |g, p| { let x = g.param(p, a); let y = g.param(p, pos); Ok(g.squared_error(x, y)) })),
            ("embedding", Box::new(move |g, p| { let x = g.param_rows(p, a, &[2, 2, 0]); let w = g.param(p, pos); let z = g.mul(x, w); let z = g.tanh(z); Ok(g.sum(z)) })),
        ];
        for (name, f) in ops {
            let report = check_gradients(&store, f, 1e-3, 1e-4).unwrap();
            assert!(report.passed(), "{name}: {report:?}");
        }
    }
}

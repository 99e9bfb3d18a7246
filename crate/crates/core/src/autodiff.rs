//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so the tape is topologically sorted by construction and
//! [`Graph::backward`] is a single reverse sweep.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{conv1d_causal_backward, conv1d_causal_forward, gemm_acc_at, gemm_acc_bt, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Conv { x: Var, w: Var, b: Var },
    AddBias(Var, Var),
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    Sum(Var),
    Scale(Var, T),
    Reshape(Var),
    Embed { table: Var, ids: Vec<usize> },
    WeightNorm { v: Var, g: Var, norms: Vec<T> },
    LogSoftmax(Var),
    LogSoftmaxPick { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    SelectRows { x: Var, rows: Vec<usize> },
    ScatterRows { base: Var, rows: Vec<usize>, src: Var },
    ScaleRows { x: Var, factors: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Append-only computation tape.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[Var]) -> Var {
        let requires_grad = match op {
            Op::Leaf => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input: gradients are accumulated for it by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(Op::Leaf, value, &[]);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Input that needs no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, &[])
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated for `v` by the last [`Graph::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out, &[a, b]))
    }

    /// Causal temporal convolution over `[T, m]` or `[B, T, m]` input with
    /// kernel `[k, m, n]` and bias `[n]`.
    pub fn conv1d_causal(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = conv1d_causal_forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(Op::Conv { x, w, b }, out, &[x, w, b]))
    }

    /// Adds `b[n]` to every row of `x[.., n]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let n = xv.last_dim();
        if bv.shape() != [n] {
            return shape_err("add_bias", xv.shape(), bv.shape());
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        Ok(self.push(Op::AddBias(x, b), out, &[x, b]))
    }

    pub fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let av = self.value(a);
        let out = match kind {
            Unary::Sigmoid => av.map(sigmoid),
            Unary::Tanh => av.map(|v| v.tanh()),
            Unary::Relu => av.map(|v| v.max(T::zero())),
            Unary::Exp => av.map(|v| v.exp()),
            Unary::Log => {
                if let Some(bad) = av.data().iter().find(|v| !(**v > T::zero())) {
                    return Err(Error::Domain {
                        op: "log",
                        detail: format!("non-positive argument {bad}"),
                    });
                }
                av.map(|v| v.ln())
            }
        };
        Ok(self.push(Op::Unary(kind, a), out, &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = match kind {
            Binary::Add => av.zip_map(bv, "add", |x, y| x + y)?,
            Binary::Sub => av.zip_map(bv, "sub", |x, y| x - y)?,
            Binary::Mul => av.zip_map(bv, "mul", |x, y| x * y)?,
        };
        Ok(self.push(Op::Binary(kind, a, b), out, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), out, &[a])
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let out = self.value(a).map(|v| v * factor);
        self.push(Op::Scale(a, factor), out, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(Op::Reshape(a), out, &[a]))
    }

    /// Row gather from `table[V, e]`; output shape is `id_shape ++ [e]`.
    pub fn embed(&mut self, table: Var, ids: &[usize], id_shape: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return shape_err("embed", tv.shape(), id_shape);
        }
        let (vocab, e) = (tv.shape()[0], tv.shape()[1]);
        if id_shape.iter().product::<usize>() != ids.len() {
            return shape_err("embed(ids)", id_shape, &[ids.len()]);
        }
        let mut data = Vec::with_capacity(ids.len() * e);
        for (position, &id) in ids.iter().enumerate() {
            if id >= vocab {
                return Err(Error::Index {
                    op: "embed",
                    position,
                    id,
                    limit: vocab,
                });
            }
            data.extend_from_slice(tv.row(id));
        }
        let mut shape = id_shape.to_vec();
        shape.push(e);
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            out,
            &[table],
        ))
    }

    /// Weight normalization: `w[.., j] = g[j] · v[.., j] / ‖v[.., j]‖`, the norm
    /// taken over every axis except the last (output units).
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Result<Var> {
        let (vv, gv) = (self.value(v), self.value(g));
        let n = vv.last_dim();
        if gv.shape() != [n] {
            return shape_err("weight_norm", vv.shape(), gv.shape());
        }
        let norms = column_norms(vv);
        if let Some(j) = norms.iter().position(|&s| !(s > T::zero())) {
            return Err(Error::Contract(format!(
                "weight_norm: direction has zero norm for output unit {j}"
            )));
        }
        let mut out = vv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for ((o, &gj), &sj) in row.iter_mut().zip(gv.data()).zip(&norms) {
                *o = *o * gj / sj;
            }
        }
        Ok(self.push(Op::WeightNorm { v, g, norms }, out, &[v, g]))
    }

    /// Row-wise log-softmax of `[.., C]`.
    pub fn log_softmax(&mut self, logits: Var) -> Var {
        let lv = self.value(logits);
        let c = lv.last_dim();
        let mut out = lv.clone();
        for row in out.data_mut().chunks_mut(c) {
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(Op::LogSoftmax(logits), out, &[logits])
    }

    /// `out[i] = log softmax(logits[i])[targets[i]]` for `logits[N, C]`.
    pub fn log_softmax_pick(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let c = lv.last_dim();
        let rows = lv.rows();
        if targets.len() != rows {
            return shape_err("log_softmax_pick", lv.shape(), &[targets.len()]);
        }
        let mut probs = Vec::with_capacity(lv.numel());
        let mut out = Vec::with_capacity(rows);
        for (position, (row, &t)) in lv.data().chunks(c).zip(targets).enumerate() {
            if t >= c {
                return Err(Error::Index {
                    op: "log_softmax_pick",
                    position,
                    id: t,
                    limit: c,
                });
            }
            let lse = log_sum_exp(row);
            probs.extend(row.iter().map(|&v| (v - lse).exp()));
            out.push(row[t] - lse);
        }
        let out = Tensor::new(&[rows], out)?;
        Ok(self.push(
            Op::LogSoftmaxPick {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            out,
            &[logits],
        ))
    }

    /// Gathers rows of `x[N, d]` into `[rows.len(), d]`.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let d = if xv.rank() == 1 { 1 } else { xv.last_dim() };
        let limit = xv.numel() / d;
        let mut data = Vec::with_capacity(rows.len() * d);
        for (position, &r) in rows.iter().enumerate() {
            if r >= limit {
                return Err(Error::Index {
                    op: "select_rows",
                    position,
                    id: r,
                    limit,
                });
            }
            data.extend_from_slice(&xv.data()[r * d..(r + 1) * d]);
        }
        let shape = if xv.rank() == 1 {
            vec![rows.len()]
        } else {
            vec![rows.len(), d]
        };
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            out,
            &[x],
        ))
    }

    /// `base` with `src` row `i` added into row `rows[i]`.
    pub fn scatter_rows(&mut self, base: Var, rows: &[usize], src: Var) -> Result<Var> {
        let (bv, sv) = (self.value(base), self.value(src));
        let d = if bv.rank() == 1 { 1 } else { bv.last_dim() };
        let sd = if sv.rank() == 1 { 1 } else { sv.last_dim() };
        if sd != d || sv.numel() != rows.len() * d {
            return shape_err("scatter_rows", bv.shape(), sv.shape());
        }
        let limit = bv.numel() / d;
        let mut out = bv.clone();
        for (i, &r) in rows.iter().enumerate() {
            if r >= limit {
                return Err(Error::Index {
                    op: "scatter_rows",
                    position: i,
                    id: r,
                    limit,
                });
            }
            for (o, &s) in out.data_mut()[r * d..(r + 1) * d]
                .iter_mut()
                .zip(&sv.data()[i * d..(i + 1) * d])
            {
                *o += s;
            }
        }
        Ok(self.push(
            Op::ScatterRows {
                base,
                rows: rows.to_vec(),
                src,
            },
            out,
            &[base, src],
        ))
    }

    /// Multiplies row `i` of `x[.., d]` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, x: Var, factors: &[T]) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if xv.rows() != factors.len() {
            return shape_err("scale_rows", xv.shape(), &[factors.len()]);
        }
        let mut out = xv.clone();
        for (row, &f) in out.data_mut().chunks_mut(d).zip(factors) {
            for v in row {
                *v *= f;
            }
        }
        Ok(self.push(
            Op::ScaleRows {
                x,
                factors: factors.to_vec(),
            },
            out,
            &[x],
        ))
    }

    /// Reverse sweep from a scalar `loss`, accumulating into every trainable
    /// leaf. Any gradients from a previous call are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        let seed_shape = self.shape(loss).to_vec();
        self.grads[loss.0] = Some(Tensor::ones(&seed_shape));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing
                .add_assign(&g)
                .expect("gradient shape matches node shape"),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&mut self, i: usize, g: Tensor<T>) {
        let node = &self.nodes[i];
        let mut pending: Vec<(Var, Tensor<T>)> = Vec::with_capacity(3);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (p, q, r) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.wants(*a) {
                    let mut da = vec![T::zero(); p * q];
                    gemm_acc_bt(g.data(), p, r, bv.data(), q, &mut da);
                    pending.push((*a, Tensor::new(av.shape(), da).expect("shape")));
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); q * r];
                    gemm_acc_at(av.data(), p, q, g.data(), r, &mut db);
                    pending.push((*b, Tensor::new(bv.shape(), db).expect("shape")));
                }
            }
            Op::Conv { x, w, b } => {
                let (dx, dw, db) = conv1d_causal_backward(self.value(*x), self.value(*w), &g);
                pending.push((*x, dx));
                pending.push((*w, dw));
                pending.push((*b, db));
            }
            Op::AddBias(x, b) => {
                let n = g.last_dim();
                let mut db = vec![T::zero(); n];
                for row in g.data().chunks(n) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                pending.push((*b, Tensor::new(&[n], db).expect("shape")));
                pending.push((*x, g));
            }
            Op::Unary(kind, a) => {
                let out = &node.value;
                let av = self.value(*a);
                let local: Vec<T> = match kind {
                    Unary::Sigmoid => out.data().iter().map(|&s| s * (T::one() - s)).collect(),
                    Unary::Tanh => out.data().iter().map(|&t| T::one() - t * t).collect(),
                    Unary::Relu => av
                        .data()
                        .iter()
                        .map(|&x| if x > T::zero() { T::one() } else { T::zero() })
                        .collect(),
                    Unary::Exp => out.data().to_vec(),
                    Unary::Log => av.data().iter().map(|&x| x.recip()).collect(),
                };
                let data = g.data().iter().zip(&local).map(|(&gg, &l)| gg * l).collect();
                pending.push((*a, Tensor::new(g.shape(), data).expect("shape")));
            }
            Op::Binary(kind, a, b) => match kind {
                Binary::Add => {
                    pending.push((*a, g.clone()));
                    pending.push((*b, g));
                }
                Binary::Sub => {
                    pending.push((*b, g.map(|v| -v)));
                    pending.push((*a, g));
                }
                Binary::Mul => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.wants(*a) {
                        pending.push((*a, g.zip_map(bv, "mul", |x, y| x * y).expect("shape")));
                    }
                    if self.wants(*b) {
                        pending.push((*b, g.zip_map(av, "mul", |x, y| x * y).expect("shape")));
                    }
                }
            },
            Op::Sum(a) => {
                let s = g.item();
                pending.push((*a, Tensor::full(self.shape(*a), s)));
            }
            Op::Scale(a, f) => pending.push((*a, g.map(|v| v * *f))),
            Op::Reshape(a) => {
                let shape = self.shape(*a).to_vec();
                pending.push((*a, g.reshape(&shape).expect("same numel")));
            }
            Op::Embed { table, ids } => {
                let tv = self.value(*table);
                let e = tv.shape()[1];
                let mut dt = Tensor::zeros(tv.shape());
                for (row, &id) in g.data().chunks(e).zip(ids) {
                    for (d, &v) in dt.data_mut()[id * e..(id + 1) * e].iter_mut().zip(row) {
                        *d += v;
                    }
                }
                pending.push((*table, dt));
            }
            Op::WeightNorm { v, g: gain, norms } => {
                let (vv, gv) = (self.value(*v), self.value(*gain));
                let n = vv.last_dim();
                // dg_j = Σ_i G_ij v̂_ij; dv_ij = (g_j / ‖v_j‖)(G_ij − v̂_ij dg_j)
                let mut dgain = vec![T::zero(); n];
                for (grow, vrow) in g.data().chunks(n).zip(vv.data().chunks(n)) {
                    for j in 0..n {
                        dgain[j] += grow[j] * vrow[j] / norms[j];
                    }
                }
                let mut dv = vec![T::zero(); vv.numel()];
                for ((drow, grow), vrow) in dv.chunks_mut(n).zip(g.data().chunks(n)).zip(vv.data().chunks(n)) {
                    for j in 0..n {
                        let vhat = vrow[j] / norms[j];
                        drow[j] = gv.data()[j] / norms[j] * (grow[j] - vhat * dgain[j]);
                    }
                }
                pending.push((*v, Tensor::new(vv.shape(), dv).expect("shape")));
                pending.push((*gain, Tensor::new(&[n], dgain).expect("shape")));
            }
            Op::LogSoftmax(a) => {
                let out = &node.value;
                let c = out.last_dim();
                let mut dx = g.clone();
                for (drow, orow) in dx.data_mut().chunks_mut(c).zip(out.data().chunks(c)) {
                    let total: T = drow.iter().copied().sum();
                    for (d, &o) in drow.iter_mut().zip(orow) {
                        *d -= o.exp() * total;
                    }
                }
                pending.push((*a, dx));
            }
            Op::LogSoftmaxPick {
                logits,
                targets,
                probs,
            } => {
                let lv = self.value(*logits);
                let c = lv.last_dim();
                let mut dl = vec![T::zero(); lv.numel()];
                for (r, ((drow, prow), &t)) in dl
                    .chunks_mut(c)
                    .zip(probs.chunks(c))
                    .zip(targets)
                    .enumerate()
                {
                    let gr = g.data()[r];
                    if gr == T::zero() {
                        continue;
                    }
                    for (d, &p) in drow.iter_mut().zip(prow) {
                        *d = -gr * p;
                    }
                    drow[t] += gr;
                }
                pending.push((*logits, Tensor::new(lv.shape(), dl).expect("shape")));
            }
            Op::SelectRows { x, rows } => {
                let xv = self.value(*x);
                let d = if xv.rank() == 1 { 1 } else { xv.last_dim() };
                let mut dx = Tensor::zeros(xv.shape());
                for (i, &r) in rows.iter().enumerate() {
                    for (o, &v) in dx.data_mut()[r * d..(r + 1) * d]
                        .iter_mut()
                        .zip(&g.data()[i * d..(i + 1) * d])
                    {
                        *o += v;
                    }
                }
                pending.push((*x, dx));
            }
            Op::ScatterRows { base, rows, src } => {
                let sv = self.value(*src);
                if self.wants(*src) {
                    let d = if sv.rank() == 1 { 1 } else { sv.last_dim() };
                    let mut ds = Vec::with_capacity(sv.numel());
                    for &r in rows {
                        ds.extend_from_slice(&g.data()[r * d..(r + 1) * d]);
                    }
                    pending.push((*src, Tensor::new(sv.shape(), ds).expect("shape")));
                }
                pending.push((*base, g));
            }
            Op::ScaleRows { x, factors } => {
                let d = g.last_dim();
                let mut dx = g;
                for (row, &f) in dx.data_mut().chunks_mut(d).zip(factors) {
                    for v in row {
                        *v *= f;
                    }
                }
                pending.push((*x, dx));
            }
        }
        for (v, grad) in pending {
            self.accumulate(v, grad);
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Stable `log Σ exp(row)`.
pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let s: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

/// Per-output-unit L2 norms of `v[.., n]`, reduced over every leading axis.
pub fn column_norms<T: Scalar>(v: &Tensor<T>) -> Vec<T> {
    let n = v.last_dim();
    let mut sq = vec![T::zero(); n];
    for row in v.data().chunks(n) {
        for (s, &x) in sq.iter_mut().zip(row) {
            *s += x * x;
        }
    }
    sq.into_iter().map(|s| s.sqrt()).collect()
}

/// Tanh-gate product derivative `tanh'(x)·σ(x) + σ'(x)·tanh(x)` evaluated directly.
pub fn gtu_self_gate_derivative<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    let t = x.tanh();
    (T::one() - t * t) * s + s * (T::one() - s) * t
}

/// Linear-gate product derivative `σ(x) + x·σ'(x)`.
pub fn glu_self_gate_derivative<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s + x * s * (T::one() - s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_of_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1]));
        let s = g.sigmoid(x).unwrap();
        assert_eq!(g.value(s).item(), 0.5);
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_fn(&[2, 3], |i| i as f32 - 2.5));
        let ones = g.constant(Tensor::ones(&[2, 3]));
        let y = g.mul(x, ones).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_fn(&[3, 2], |i| i as f64));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &Tensor::ones(&[3, 2]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(&[3]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn log_domain_error() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64(&[2], &[1.0, 0.0]).unwrap());
        assert!(matches!(g.log(x), Err(Error::Domain { .. })));
    }

    #[test]
    fn binary_shape_mismatch() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::ones(&[2, 3]));
        let b = g.constant(Tensor::ones(&[3, 2]));
        assert!(g.add(a, b).is_err());
    }

    #[test]
    fn embed_out_of_range_names_position() {
        let mut g = Graph::<f32>::new();
        let t = g.param(Tensor::ones(&[4, 2]));
        let err = g.embed(t, &[0, 1, 7], &[3]).unwrap_err();
        assert!(matches!(err, Error::Index { position: 2, id: 7, .. }));
    }

    #[test]
    fn reused_node_accumulates() {
        // loss = sum(x * x) → 2x
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap());
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn log_softmax_pick_uniform() {
        let mut g = Graph::<f64>::new();
        let l = g.constant(Tensor::zeros(&[3, 10]));
        let p = g.log_softmax_pick(l, &[0, 4, 9]).unwrap();
        for &v in g.value(p).data() {
            assert!((v + 10f64.ln()).abs() < 1e-15);
        }
    }
}

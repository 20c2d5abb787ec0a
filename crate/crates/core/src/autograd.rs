//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node whose inputs are earlier nodes, so the tape
//! is a DAG by construction and backpropagation is a single reverse sweep.
//! Operations work on matrices (`[rows, cols]`); scalars are shape `[1]`.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{invalid, shape_err, CgtError, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{
    matmul_acc, matmul_at_acc, matmul_bt_acc, row_stats, softmax_prefix, Scalar, Tensor,
};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Which graph-attention scoring form to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatVersion {
    /// `leaky_relu(aᵀ[W h_i ⊕ W h_j])`
    V1,
    /// `aᵀ leaky_relu([W h_i ⊕ W h_j])`
    V2,
}

/// Per-node neighbour lists in CSR layout. Entry `e` in
/// `offsets[i]..offsets[i+1]` means node `i` attends to `targets[e]`, with an
/// additive logit bias `bias[e]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhoods {
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
    pub bias: Vec<f64>,
}

impl Neighborhoods {
    pub fn node_count(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

enum Value<'p, T> {
    Owned(Tensor<T>),
    Borrowed(&'p Tensor<T>),
}

impl<T> Value<'_, T> {
    fn get(&self) -> &Tensor<T> {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    MatMulBt(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, T),
    Relu(usize),
    LeakyRelu(usize, T),
    SliceCols { src: usize, start: usize },
    ConcatCols(Vec<usize>),
    Softmax { src: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<T>, inv_std: Vec<T> },
    Gather { table: usize, ids: Vec<usize> },
    CrossEntropy { logits: usize, targets: Vec<Option<usize>>, probs: Vec<T>, count: usize },
    EdgeScores { wh: usize, attn: usize, head: usize, nb: Rc<Neighborhoods>, version: GatVersion, slope: T, pre: Vec<T> },
    EdgeAggregate { alpha: usize, wh: usize, nb: Rc<Neighborhoods> },
    NegLogSelect { alpha: usize, idx: Vec<usize> },
    RowEntropy { p: usize },
    SumSquares(usize),
}

struct Node<'p, T> {
    value: Value<'p, T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records operations for one forward pass. Parameters are borrowed from the
/// store rather than copied.
pub struct Tape<'p, T> {
    nodes: Vec<Node<'p, T>>,
    param_vars: BTreeMap<ParamId, Var>,
    kinks: Option<Vec<bool>>,
}

/// Result of a backward sweep.
pub struct Backward<T> {
    nodes: Vec<Option<Vec<T>>>,
    pub params: Gradients<T>,
}

impl<T: Scalar> Backward<T> {
    /// Gradient of the loss with respect to any node.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }
}

fn lrelu<T: Scalar>(x: T, slope: T) -> T {
    if x > T::zero() {
        x
    } else {
        slope * x
    }
}

fn lrelu_grad<T: Scalar>(x: T, slope: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        slope
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<'p, T: Scalar> Default for Tape<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), param_vars: BTreeMap::new(), kinks: None }
    }

    /// Records the side of every piecewise-linear kink (ReLU and leaky-ReLU
    /// inputs) so finite-difference checks can detect when a perturbation
    /// crossed a non-differentiable point.
    pub fn with_kink_tracking() -> Self {
        Tape { nodes: Vec::new(), param_vars: BTreeMap::new(), kinks: Some(Vec::new()) }
    }

    pub fn kink_signature(&self) -> Option<&[bool]> {
        self.kinks.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.nodes[v.0].value.get()
    }

    /// First element of a node, for scalar losses.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v).data()[0]
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node { value: Value::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn record_kinks(&mut self, values: impl Iterator<Item = T>) {
        if let Some(k) = self.kinks.as_mut() {
            k.extend(values.map(|v| v > T::zero()));
        }
    }

    /// A constant input; no gradient is tracked for it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: Value::Owned(t), op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input that is not a stored parameter.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: Value::Owned(t), op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Registers a parameter leaf. Repeated calls return the same node so a
    /// shared (tied) parameter accumulates all of its gradient contributions.
    pub fn param(&mut self, store: &'p ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let p = store.get(id);
        self.nodes.push(Node {
            value: Value::Borrowed(&p.tensor),
            op: Op::Leaf,
            needs_grad: p.trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(shape_err!("matmul [{m},{k}] x [{k2},{n}]"));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (n, k2) = self.dims(b)?;
        if k != k2 {
            return Err(shape_err!("matmul_bt [{m},{k}] x [{n},{k2}]^T"));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_bt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulBt(a.0, b.0), &[a.0, b.0]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (x, y) = (self.value(a), self.value(b));
        Tensor::new(x.shape().to_vec(), x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let t = self.zip_map(a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let t = self.zip_map(a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let t = self.zip_map(a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if self.value(row).len() != n {
            return Err(shape_err!("add_row: row length {} vs {n} columns", self.value(row).len()));
        }
        let r = self.value(row).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            add_into(&mut out[i * n..(i + 1) * n], r);
        }
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::AddRow(a.0, row.0), &[a.0, row.0]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v * c).collect())
            .expect("same shape");
        self.push(t, Op::Scale(a.0, c), &[a.0])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v.max(T::zero())).collect())
            .expect("same shape");
        let vals: Vec<T> = x.data().to_vec();
        self.record_kinks(vals.into_iter());
        self.push(t, Op::Relu(a.0), &[a.0])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| lrelu(v, slope)).collect())
            .expect("same shape");
        let vals: Vec<T> = x.data().to_vec();
        self.record_kinks(vals.into_iter());
        self.push(t, Op::LeakyRelu(a.0, slope), &[a.0])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if start + width > n {
            return Err(shape_err!("slice_cols {start}+{width} > {n}"));
        }
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(m * width);
        for i in 0..m {
            out.extend_from_slice(&x[i * n + start..i * n + start + width]);
        }
        Ok(self.push(Tensor::new(vec![m, width], out)?, Op::SliceCols { src: a.0, start }, &[a.0]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| invalid!("concat_cols of nothing"))?;
        let m = self.dims(*first)?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if r != m {
                return Err(shape_err!("concat_cols rows {r} vs {m}"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(Tensor::new(vec![m, total], out)?, Op::ConcatCols(idx.clone()), &idx))
    }

    /// Row softmax. With `causal`, row `i` only covers columns `0..=i`; the
    /// remaining entries are exactly zero.
    pub fn softmax_rows(&mut self, a: Var, causal: bool) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        let x = self.value(a);
        if x.data().iter().any(|v| v.is_nan()) {
            return Err(CgtError::NonFinite("softmax input contains NaN".into()));
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let active = if causal { (i + 1).min(n) } else { n };
            if active > 0 {
                softmax_prefix(&x.data()[i * n..(i + 1) * n], active, &mut out[i * n..(i + 1) * n]);
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::Softmax { src: a.0 }, &[a.0]))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (m, d) = self.dims(x)?;
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(shape_err!("layer_norm gain/bias length vs {d}"));
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = vec![T::zero(); m * d];
        let mut xhat = vec![T::zero(); m * d];
        let mut inv_std = vec![T::zero(); m];
        for i in 0..m {
            let row = &xs[i * d..(i + 1) * d];
            let (mean, inv) = row_stats(row, eps);
            inv_std[i] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[i * d + j] = h;
                out[i * d + j] = g[j] * h + b[j];
            }
        }
        let op = Op::LayerNorm { x: x.0, gain: gain.0, bias: bias.0, xhat, inv_std };
        Ok(self.push(Tensor::new(vec![m, d], out)?, op, &[x.0, gain.0, bias.0]))
    }

    /// Selects rows of `table` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims(table)?;
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(invalid!("row id {id} out of range for {v} rows"));
            }
            out.extend_from_slice(&t[id * d..(id + 1) * d]);
        }
        let op = Op::Gather { table: table.0, ids: ids.to_vec() };
        Ok(self.push(Tensor::new(vec![ids.len(), d], out)?, op, &[table.0]))
    }

    /// Mean token cross-entropy over rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (m, v) = self.dims(logits)?;
        if targets.len() != m {
            return Err(shape_err!("cross_entropy: {} targets for {m} rows", targets.len()));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(invalid!("cross_entropy: every position is masked"));
        }
        let x = self.value(logits).data();
        let mut probs = vec![T::zero(); m * v];
        let mut total = 0.0f64;
        for (i, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= v {
                return Err(invalid!("target {t} out of range for vocab {v}"));
            }
            let row = &x[i * v..(i + 1) * v];
            softmax_prefix(row, v, &mut probs[i * v..(i + 1) * v]);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max.f64() + row.iter().map(|&z| (z - max).f64().exp()).sum::<f64>().ln();
            total += lse - row[t].f64();
        }
        let value = T::of(total / count as f64);
        let op = Op::CrossEntropy { logits: logits.0, targets: targets.to_vec(), probs, count };
        Ok(self.push(Tensor::scalar(value), op, &[logits.0]))
    }

    /// Graph-attention coefficients for one head: scores every neighbour
    /// entry of `nb` and softmax-normalizes within each neighbourhood.
    /// `attn` holds one `[a_src ‖ a_dst]` row per head.
    pub fn edge_attention(
        &mut self,
        wh: Var,
        attn: Var,
        head: usize,
        nb: &Rc<Neighborhoods>,
        version: GatVersion,
        slope: T,
    ) -> Result<Var> {
        let (n, dk) = self.dims(wh)?;
        let (heads, two_dk) = self.dims(attn)?;
        if head >= heads || two_dk != 2 * dk {
            return Err(shape_err!("edge_attention: attn [{heads},{two_dk}] for head {head}, width {dk}"));
        }
        if nb.node_count() != n {
            return Err(shape_err!("edge_attention: {} neighbourhoods for {n} nodes", nb.node_count()));
        }
        let h = self.value(wh).data();
        let a = &self.value(attn).data()[head * two_dk..(head + 1) * two_dk];
        let (a_src, a_dst) = a.split_at(dk);
        let feats: Vec<T> = match version {
            GatVersion::V1 => h.to_vec(),
            GatVersion::V2 => h.iter().map(|&v| lrelu(v, slope)).collect(),
        };
        let src_dot: Vec<T> = (0..n).map(|i| dot(a_src, &feats[i * dk..(i + 1) * dk])).collect();
        let dst_dot: Vec<T> = (0..n).map(|j| dot(a_dst, &feats[j * dk..(j + 1) * dk])).collect();
        let m = nb.edge_count();
        let mut pre = vec![T::zero(); m];
        let mut scores = vec![T::zero(); m];
        for i in 0..n {
            for e in nb.range(i) {
                let u = src_dot[i] + dst_dot[nb.targets[e]];
                pre[e] = u;
                let s = match version {
                    GatVersion::V1 => lrelu(u, slope),
                    GatVersion::V2 => u,
                };
                scores[e] = s + T::of(nb.bias[e]);
            }
        }
        let mut alpha = vec![T::zero(); m];
        for i in 0..n {
            let r = nb.range(i);
            if !r.is_empty() {
                let len = r.len();
                softmax_prefix(&scores[r.clone()], len, &mut alpha[r]);
            }
        }
        match version {
            GatVersion::V1 => self.record_kinks(pre.clone().into_iter()),
            GatVersion::V2 => self.record_kinks(h.to_vec().into_iter()),
        }
        let op = Op::EdgeScores { wh: wh.0, attn: attn.0, head, nb: Rc::clone(nb), version, slope, pre };
        Ok(self.push(Tensor::new(vec![m], alpha)?, op, &[wh.0, attn.0]))
    }

    /// `out_i = Σ_e α_e · wh[target_e]` over node `i`'s neighbourhood.
    pub fn edge_aggregate(&mut self, alpha: Var, wh: Var, nb: &Rc<Neighborhoods>) -> Result<Var> {
        let (n, dk) = self.dims(wh)?;
        if self.value(alpha).len() != nb.edge_count() || nb.node_count() != n {
            return Err(shape_err!("edge_aggregate: neighbourhood/shape mismatch"));
        }
        let al = self.value(alpha).data();
        let h = self.value(wh).data();
        let mut out = vec![T::zero(); n * dk];
        for i in 0..n {
            for e in nb.range(i) {
                let j = nb.targets[e];
                let w = al[e];
                for (o, &v) in out[i * dk..(i + 1) * dk].iter_mut().zip(&h[j * dk..(j + 1) * dk]) {
                    *o += w * v;
                }
            }
        }
        let op = Op::EdgeAggregate { alpha: alpha.0, wh: wh.0, nb: Rc::clone(nb) };
        Ok(self.push(Tensor::new(vec![n, dk], out)?, op, &[alpha.0, wh.0]))
    }

    /// `−Σ_{k ∈ idx} ln x_k`.
    pub fn neg_log_select(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let vals = self.value(x).data();
        let mut total = T::zero();
        for &k in idx {
            let v = *vals.get(k).ok_or_else(|| invalid!("neg_log_select index {k} out of range"))?;
            if v <= T::zero() {
                return Err(invalid!("attention weight {v} is not positive on an existing edge"));
            }
            total -= v.ln();
        }
        let op = Op::NegLogSelect { alpha: x.0, idx: idx.to_vec() };
        Ok(self.push(Tensor::scalar(total), op, &[x.0]))
    }

    /// Mean over rows of the Shannon entropy (natural log) of each row.
    pub fn row_entropy_mean(&mut self, p: Var) -> Result<Var> {
        let (m, _) = self.dims(p)?;
        let total: T = self
            .value(p)
            .data()
            .iter()
            .filter(|&&v| v > T::zero())
            .map(|&v| -v * v.ln())
            .sum();
        let value = if m == 0 { T::zero() } else { total / T::of(m as f64) };
        Ok(self.push(Tensor::scalar(value), Op::RowEntropy { p: p.0 }, &[p.0]))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|&v| v * v).sum();
        self.push(Tensor::scalar(s), Op::SumSquares(a.0), &[a.0])
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Backward<T>> {
        if self.value(loss).len() != 1 {
            return Err(shape_err!("backward needs a scalar loss, got {:?}", self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                grads[idx] = Some(g);
                continue;
            }
            let out = node.value.get();
            let mut contrib: Vec<(usize, Vec<T>)> = Vec::new();
            let val = |i: usize| self.nodes[i].value.get();
            let want = |i: usize| self.nodes[i].needs_grad;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = val(*a).dims2()?;
                    let n = val(*b).cols();
                    if want(*a) {
                        let mut ga = vec![T::zero(); m * k];
                        matmul_bt_acc(&g, val(*b).data(), &mut ga, m, n, k);
                        contrib.push((*a, ga));
                    }
                    if want(*b) {
                        let mut gb = vec![T::zero(); k * n];
                        matmul_at_acc(val(*a).data(), &g, &mut gb, m, k, n);
                        contrib.push((*b, gb));
                    }
                }
                Op::MatMulBt(a, b) => {
                    let (m, k) = val(*a).dims2()?;
                    let n = val(*b).rows();
                    if want(*a) {
                        let mut ga = vec![T::zero(); m * k];
                        matmul_acc(&g, val(*b).data(), &mut ga, m, n, k);
                        contrib.push((*a, ga));
                    }
                    if want(*b) {
                        let mut gb = vec![T::zero(); n * k];
                        matmul_at_acc(&g, val(*a).data(), &mut gb, m, n, k);
                        contrib.push((*b, gb));
                    }
                }
                Op::Add(a, b) => {
                    contrib.push((*a, g.clone()));
                    contrib.push((*b, g.clone()));
                }
                Op::Sub(a, b) => {
                    contrib.push((*a, g.clone()));
                    contrib.push((*b, g.iter().map(|&v| -v).collect()));
                }
                Op::Mul(a, b) => {
                    let (x, y) = (val(*a).data(), val(*b).data());
                    contrib.push((*a, g.iter().zip(y).map(|(&gv, &yv)| gv * yv).collect()));
                    contrib.push((*b, g.iter().zip(x).map(|(&gv, &xv)| gv * xv).collect()));
                }
                Op::AddRow(a, row) => {
                    let n = out.cols();
                    let mut gr = vec![T::zero(); n];
                    for chunk in g.chunks(n) {
                        add_into(&mut gr, chunk);
                    }
                    contrib.push((*a, g.clone()));
                    contrib.push((*row, gr));
                }
                Op::Scale(a, c) => contrib.push((*a, g.iter().map(|&v| v * *c).collect())),
                Op::Relu(a) => {
                    let x = val(*a).data();
                    let ga = g
                        .iter()
                        .zip(x)
                        .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                        .collect();
                    contrib.push((*a, ga));
                }
                Op::LeakyRelu(a, slope) => {
                    let x = val(*a).data();
                    let ga = g.iter().zip(x).map(|(&gv, &xv)| gv * lrelu_grad(xv, *slope)).collect();
                    contrib.push((*a, ga));
                }
                Op::SliceCols { src, start } => {
                    let (m, n) = val(*src).dims2()?;
                    let w = out.cols();
                    let mut gs = vec![T::zero(); m * n];
                    for i in 0..m {
                        gs[i * n + start..i * n + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                    }
                    contrib.push((*src, gs));
                }
                Op::ConcatCols(parts) => {
                    let m = out.rows();
                    let total = out.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = val(p).cols();
                        let mut gp = Vec::with_capacity(m * w);
                        for i in 0..m {
                            gp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        offset += w;
                        contrib.push((p, gp));
                    }
                }
                Op::Softmax { src } => {
                    let (m, n) = out.dims2()?;
                    let y = out.data();
                    let mut gx = vec![T::zero(); m * n];
                    for i in 0..m {
                        let yr = &y[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let s = dot(yr, gr);
                        for j in 0..n {
                            gx[i * n + j] = yr[j] * (gr[j] - s);
                        }
                    }
                    contrib.push((*src, gx));
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let (m, d) = out.dims2()?;
                    let gn = val(*gain).data();
                    let df = T::of(d as f64);
                    let mut gx = vec![T::zero(); m * d];
                    let mut gg = vec![T::zero(); d];
                    let mut gb = vec![T::zero(); d];
                    for i in 0..m {
                        let gr = &g[i * d..(i + 1) * d];
                        let hr = &xhat[i * d..(i + 1) * d];
                        let gh: Vec<T> = gr.iter().zip(gn).map(|(&a, &b)| a * b).collect();
                        let mean_gh = gh.iter().copied().sum::<T>() / df;
                        let mean_ghh = gh.iter().zip(hr).map(|(&a, &b)| a * b).sum::<T>() / df;
                        for j in 0..d {
                            gx[i * d + j] = inv_std[i] * (gh[j] - mean_gh - hr[j] * mean_ghh);
                            gg[j] += gr[j] * hr[j];
                            gb[j] += gr[j];
                        }
                    }
                    contrib.push((*x, gx));
                    contrib.push((*gain, gg));
                    contrib.push((*bias, gb));
                }
                Op::Gather { table, ids } => {
                    let (v, d) = val(*table).dims2()?;
                    let mut gt = vec![T::zero(); v * d];
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                    contrib.push((*table, gt));
                }
                Op::CrossEntropy { logits, targets, probs, count } => {
                    let v = val(*logits).cols();
                    let scale = g[0] / T::of(*count as f64);
                    let mut gl = vec![T::zero(); probs.len()];
                    for (i, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for j in 0..v {
                            gl[i * v + j] = probs[i * v + j] * scale;
                        }
                        gl[i * v + t] -= scale;
                    }
                    contrib.push((*logits, gl));
                }
                Op::EdgeScores { wh, attn, head, nb, version, slope, pre } => {
                    let (n, dk) = val(*wh).dims2()?;
                    let alpha = out.data();
                    let h = val(*wh).data();
                    let a_all = val(*attn).data();
                    let a = &a_all[head * 2 * dk..(head + 1) * 2 * dk];
                    let (a_src, a_dst) = a.split_at(dk);
                    let mut g_src = vec![T::zero(); n];
                    let mut g_dst = vec![T::zero(); n];
                    for i in 0..n {
                        let r = nb.range(i);
                        let s = dot(&alpha[r.clone()], &g[r.clone()]);
                        for e in r {
                            let gs = alpha[e] * (g[e] - s);
                            let gu = match version {
                                GatVersion::V1 => gs * lrelu_grad(pre[e], *slope),
                                GatVersion::V2 => gs,
                            };
                            g_src[i] += gu;
                            g_dst[nb.targets[e]] += gu;
                        }
                    }
                    let feats: Vec<T> = match version {
                        GatVersion::V1 => h.to_vec(),
                        GatVersion::V2 => h.iter().map(|&v| lrelu(v, *slope)).collect(),
                    };
                    let mut g_feat = vec![T::zero(); n * dk];
                    let mut g_attn = vec![T::zero(); a_all.len()];
                    let (ga_src, ga_dst) = g_attn[head * 2 * dk..(head + 1) * 2 * dk].split_at_mut(dk);
                    for i in 0..n {
                        let f = &feats[i * dk..(i + 1) * dk];
                        for c in 0..dk {
                            g_feat[i * dk + c] = g_src[i] * a_src[c] + g_dst[i] * a_dst[c];
                            ga_src[c] += g_src[i] * f[c];
                            ga_dst[c] += g_dst[i] * f[c];
                        }
                    }
                    if *version == GatVersion::V2 {
                        for (gf, &hv) in g_feat.iter_mut().zip(h) {
                            *gf *= lrelu_grad(hv, *slope);
                        }
                    }
                    contrib.push((*wh, g_feat));
                    contrib.push((*attn, g_attn));
                }
                Op::EdgeAggregate { alpha, wh, nb } => {
                    let (n, dk) = val(*wh).dims2()?;
                    let al = val(*alpha).data();
                    let h = val(*wh).data();
                    let mut ga = vec![T::zero(); al.len()];
                    let mut gh = vec![T::zero(); n * dk];
                    for i in 0..n {
                        let gi = &g[i * dk..(i + 1) * dk];
                        for e in nb.range(i) {
                            let j = nb.targets[e];
                            ga[e] = dot(gi, &h[j * dk..(j + 1) * dk]);
                            for (o, &gv) in gh[j * dk..(j + 1) * dk].iter_mut().zip(gi) {
                                *o += al[e] * gv;
                            }
                        }
                    }
                    contrib.push((*alpha, ga));
                    contrib.push((*wh, gh));
                }
                Op::NegLogSelect { alpha, idx } => {
                    let x = val(*alpha).data();
                    let mut gx = vec![T::zero(); x.len()];
                    for &k in idx {
                        gx[k] -= g[0] / x[k];
                    }
                    contrib.push((*alpha, gx));
                }
                Op::RowEntropy { p } => {
                    let x = val(*p);
                    let m = T::of(x.rows() as f64);
                    let gp = x
                        .data()
                        .iter()
                        .map(|&v| if v > T::zero() { -(v.ln() + T::one()) * g[0] / m } else { T::zero() })
                        .collect();
                    contrib.push((*p, gp));
                }
                Op::SumSquares(a) => {
                    let two = T::of(2.0);
                    let ga = val(*a).data().iter().map(|&v| two * v * g[0]).collect();
                    contrib.push((*a, ga));
                }
            }
            grads[idx] = Some(g);
            for (i, c) in contrib {
                if !self.nodes[i].needs_grad {
                    continue;
                }
                match &mut grads[i] {
                    Some(acc) => add_into(acc, &c),
                    slot @ None => *slot = Some(c),
                }
            }
        }

        let n_params = self.param_vars.keys().next_back().map_or(0, |id| id.0 + 1);
        let mut params: Vec<Option<Vec<T>>> = vec![None; n_params];
        for (id, var) in &self.param_vars {
            if self.nodes[var.0].needs_grad {
                params[id.0] = grads[var.0].clone();
            }
        }
        Ok(Backward { nodes: grads, params: Gradients(params) })
    }
}

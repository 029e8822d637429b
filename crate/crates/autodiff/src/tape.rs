//! Gradient tape: records operations during the forward pass and replays them
//! in reverse to compute exact gradients.

use std::collections::HashMap;

use crate::array::DiffArray;
use crate::error::{Error, Result};
use crate::kernels;
use crate::param::{ParamId, ParamStore};
use crate::real::Real;

/// Floor applied to predicted probabilities inside the KL logarithm.
pub const KL_EPS: f64 = 1e-8;
pub const LAYER_NORM_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;

/// Handle to an array recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Query rows `q_start..q_start + q_len` attend to key/value rows
/// `k_start..k_start + k_len`, and to nothing else.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
}

impl Segment {
    /// Self-attention block over rows `start..start + len`.
    pub fn square(start: usize, len: usize) -> Self {
        Self {
            q_start: start,
            q_len: len,
            k_start: start,
            k_len: len,
        }
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
        cols: usize,
    },
    Scale {
        x: Var,
        c: T,
    },
    ScaleBy {
        s: Var,
        x: Var,
    },
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        x: Var,
        rows: usize,
        cols: usize,
    },
    Reshape(Var),
    ConcatRows(Vec<Var>),
    ConcatCols {
        parts: Vec<(Var, usize)>,
        rows: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
        cols: usize,
    },
    GatherRows {
        table: Var,
        index: Vec<usize>,
        cols: usize,
    },
    SegmentMean {
        x: Var,
        group: usize,
        cols: usize,
    },
    Sum(Var),
    Mean(Var),
    RowSoftmax {
        x: Var,
        cols: usize,
    },
    KlRows {
        target: Var,
        pred: Var,
        rows: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
        cols: usize,
    },
    Gelu(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        cols: usize,
    },
    L2NormRows {
        x: Var,
        norms: Vec<T>,
        cols: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: Vec<Segment>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    array: DiffArray<T>,
    op: Op<T>,
}

/// Linear record of one forward pass.
///
/// Gradients of intermediate nodes are transient; only leaves keep them.
/// Calling [`Tape::backward`] repeatedly without [`Tape::zero_grad`]
/// accumulates into the leaf gradients.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    bindings: Vec<(ParamId, Var)>,
    bound: HashMap<ParamId, Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bindings: Vec::new(),
            bound: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: &[usize], values: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        let mut array = DiffArray::new(shape, values).expect("op produced a consistent shape");
        array.requires_grad = requires_grad;
        self.nodes.push(Node { array, op });
        Var(self.nodes.len() - 1)
    }

    /// Records `array` as a leaf. Its `requires_grad` flag decides whether it
    /// collects a gradient.
    pub fn input(&mut self, array: DiffArray<T>) -> Var {
        let requires_grad = array.requires_grad;
        let mut array = array;
        array.grad = None;
        let shape = array.shape().to_vec();
        self.push(&shape, array.into_values(), Op::Leaf, requires_grad)
    }

    /// Records a leaf that never collects a gradient.
    pub fn constant(&mut self, array: DiffArray<T>) -> Var {
        let shape = array.shape().to_vec();
        self.push(&shape, array.into_values(), Op::Leaf, false)
    }

    /// Binds a stored parameter into this tape, snapshotting its values.
    /// Binding the same parameter twice returns the same handle. Frozen
    /// parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let p = store.get(id);
        let shape = p.array.shape().to_vec();
        let v = self.push(&shape, p.array.values().to_vec(), Op::Leaf, !p.frozen);
        self.bound.insert(id, v);
        self.bindings.push((id, v));
        v
    }

    pub(crate) fn bindings(&self) -> &[(ParamId, Var)] {
        &self.bindings
    }

    pub fn value(&self, v: Var) -> &DiffArray<T> {
        &self.nodes[v.0].array
    }

    pub fn values(&self, v: Var) -> &[T] {
        self.nodes[v.0].array.values()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].array.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].array.grad.as_deref()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].array.requires_grad
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0].array.dims2()
    }

    /// Clears every leaf gradient on this tape.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.array.grad = None;
        }
    }

    // ---- elementwise -------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let out = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(&shape, out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// Adds a length-`n` bias to every row of an `m×n` array.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.dims2(x)?;
        if self.value(bias).numel() != n {
            return Err(Error::shape("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.values(bias).to_vec();
        let out = self
            .values(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(&b).map(|(&u, &w)| u + w))
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(&shape, out, Op::AddBias { x, bias, cols: n }, rg))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64c(c);
        let out = self.values(x).iter().map(|&u| u * c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(&shape, out, Op::Scale { x, c }, rg)
    }

    /// Multiplies by a differentiable one-element array.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::shape("scale_by", self.shape(s), &[1]));
        }
        let c = self.values(s)[0];
        let out = self.values(x).iter().map(|&u| u * c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(s) || self.rg(x);
        Ok(self.push(&shape, out, Op::ScaleBy { s, x }, rg))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.values(x).iter().map(|&u| kernels::gelu(u)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(&shape, out, Op::Gelu(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.values(x).iter().map(|&u| u.max(T::zero())).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(&shape, out, Op::Relu(x), rg)
    }

    // ---- linear algebra and layout -------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul(self.values(a), self.values(b), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(&[m, n], out, Op::MatMul { a, b, m, k, n }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.dims2(x)?;
        let out = kernels::transpose(self.values(x), rows, cols);
        let rg = self.rg(x);
        Ok(self.push(&[cols, rows], out, Op::Transpose { x, rows, cols }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", self.shape(x), shape));
        }
        let out = self.values(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, out, Op::Reshape(x), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows needs at least one part".into()))?;
        let (_, cols) = self.dims2(first)?;
        let mut rows = 0;
        let mut out = Vec::new();
        let mut rg = false;
        for &p in parts {
            let (r, c) = self.dims2(p)?;
            if c != cols {
                return Err(Error::shape(
                    "concat_rows",
                    self.shape(first),
                    self.shape(p),
                ));
            }
            rows += r;
            out.extend_from_slice(self.values(p));
            rg |= self.rg(p);
        }
        Ok(self.push(&[rows, cols], out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols needs at least one part".into()))?;
        let (rows, _) = self.dims2(first)?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut rg = false;
        for &p in parts {
            let (r, c) = self.dims2(p)?;
            if r != rows {
                return Err(Error::shape(
                    "concat_cols",
                    self.shape(first),
                    self.shape(p),
                ));
            }
            widths.push((p, c));
            rg |= self.rg(p);
        }
        let total: usize = widths.iter().map(|w| w.1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &(p, c) in &widths {
                out.extend_from_slice(&self.values(p)[i * c..(i + 1) * c]);
            }
        }
        Ok(self.push(
            &[rows, total],
            out,
            Op::ConcatCols {
                parts: widths,
                rows,
            },
            rg,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims2(x)?;
        if len == 0 || start + len > rows {
            return Err(Error::Contract(format!(
                "slice_rows {start}..{} out of bounds for {rows} rows",
                start + len
            )));
        }
        let out = self.values(x)[start * cols..(start + len) * cols].to_vec();
        let rg = self.rg(x);
        Ok(self.push(&[len, cols], out, Op::SliceRows { x, start }, rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims2(x)?;
        if len == 0 || start + len > cols {
            return Err(Error::Contract(format!(
                "slice_cols {start}..{} out of bounds for {cols} columns",
                start + len
            )));
        }
        let out = self
            .values(x)
            .chunks(cols)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let rg = self.rg(x);
        Ok(self.push(
            &[rows, len],
            out,
            Op::SliceCols {
                x,
                start,
                len,
                cols,
            },
            rg,
        ))
    }

    /// Embedding lookup: row `i` of the output is row `index[i]` of `table`.
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims2(table)?;
        if index.is_empty() {
            return Err(Error::Contract(
                "gather_rows needs at least one index".into(),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::Contract(format!(
                "gather_rows index {bad} out of range for {rows} rows"
            )));
        }
        let src = self.values(table);
        let mut out = Vec::with_capacity(index.len() * cols);
        for &i in index {
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let rg = self.rg(table);
        let op = Op::GatherRows {
            table,
            index: index.to_vec(),
            cols,
        };
        Ok(self.push(&[index.len(), cols], out, op, rg))
    }

    /// Averages each run of `group` consecutive rows.
    pub fn segment_mean(&mut self, x: Var, group: usize) -> Result<Var> {
        let (rows, cols) = self.dims2(x)?;
        if group == 0 || rows % group != 0 {
            return Err(Error::Contract(format!(
                "segment_mean: {rows} rows not divisible into groups of {group}"
            )));
        }
        let inv = T::one() / T::from_usize(group).unwrap();
        let src = self.values(x);
        let mut out = vec![T::zero(); rows / group * cols];
        for (r, row) in src.chunks(cols).enumerate() {
            let dst = &mut out[(r / group) * cols..(r / group + 1) * cols];
            for (o, &u) in dst.iter_mut().zip(row) {
                *o += u * inv;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            &[rows / group, cols],
            out,
            Op::SegmentMean { x, group, cols },
            rg,
        ))
    }

    // ---- reductions ----------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.values(x).iter().copied().sum();
        let rg = self.rg(x);
        self.push(&[1], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::from_usize(self.value(x).numel()).unwrap();
        let s = self.values(x).iter().copied().sum::<T>() / n;
        let rg = self.rg(x);
        self.push(&[1], vec![s], Op::Mean(x), rg)
    }

    // ---- normalization and probability ---------------------------------

    pub fn row_softmax(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.dims2(x)?;
        let mut out = vec![T::zero(); rows * cols];
        for (src, dst) in self.values(x).chunks(cols).zip(out.chunks_mut(cols)) {
            kernels::softmax_row(src, dst);
        }
        let rg = self.rg(x);
        Ok(self.push(&[rows, cols], out, Op::RowSoftmax { x, cols }, rg))
    }

    /// Mean over rows of `Σ_j target·ln(target / max(pred, KL_EPS))`, with
    /// `0·ln 0 = 0`. Both arguments hold one distribution per row.
    pub fn kl_divergence_rows(&mut self, target: Var, pred: Var) -> Result<Var> {
        self.same_shape("kl_divergence_rows", target, pred)?;
        let (rows, _) = self.dims2(target)?;
        let eps = T::from_f64c(KL_EPS);
        let mut total = T::zero();
        for (t, p) in self.values(target).iter().zip(self.values(pred)) {
            if *t > T::zero() {
                total += *t * (t.ln() - p.max(eps).ln());
            }
        }
        let value = total / T::from_usize(rows).unwrap();
        let rg = self.rg(target) || self.rg(pred);
        let op = Op::KlRows { target, pred, rows };
        Ok(self.push(&[1], vec![value], op, rg))
    }

    /// Mean cross-entropy of row-wise softmax(logits) against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims2(logits)?;
        if targets.len() != rows {
            return Err(Error::shape(
                "cross_entropy",
                self.shape(logits),
                &[targets.len()],
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::Contract(format!(
                "cross_entropy target {bad} out of range for {cols} classes"
            )));
        }
        let mut probs = vec![T::zero(); rows * cols];
        let mut total = T::zero();
        for (i, (src, dst)) in self
            .values(logits)
            .chunks(cols)
            .zip(probs.chunks_mut(cols))
            .enumerate()
        {
            let max = src.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = src.iter().map(|&u| (u - max).exp()).sum::<T>().ln() + max;
            total += lse - src[targets[i]];
            kernels::softmax_row(src, dst);
        }
        let value = total / T::from_usize(rows).unwrap();
        let rg = self.rg(logits);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
            cols,
        };
        Ok(self.push(&[1], vec![value], op, rg))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (rows, cols) = self.dims2(x)?;
        if self.value(gamma).numel() != cols || self.value(beta).numel() != cols {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let n = T::from_usize(cols).unwrap();
        let eps = T::from_f64c(LAYER_NORM_EPS);
        let g = self.values(gamma).to_vec();
        let b = self.values(beta).to_vec();
        let mut xhat = vec![T::zero(); rows * cols];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * cols];
        for (r, src) in self.values(x).chunks(cols).enumerate() {
            let mu = src.iter().copied().sum::<T>() / n;
            let var = src.iter().map(|&u| (u - mu) * (u - mu)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..cols {
                let h = (src[j] - mu) * inv;
                xhat[r * cols + j] = h;
                out[r * cols + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            cols,
        };
        Ok(self.push(&[rows, cols], out, op, rg))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.dims2(x)?;
        let eps = T::from_f64c(NORM_EPS);
        let mut norms = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * cols);
        for src in self.values(x).chunks(cols) {
            let norm = kernels::dot(src, src).sqrt().max(eps);
            norms.push(norm);
            out.extend(src.iter().map(|&u| u / norm));
        }
        let rg = self.rg(x);
        Ok(self.push(&[rows, cols], out, Op::L2NormRows { x, norms, cols }, rg))
    }

    /// Multi-head scaled dot-product attention restricted to `segments`.
    ///
    /// `q`, `k`, `v` are `rows×D` with `D` split into `heads` column blocks of
    /// width `d_k = D / heads`; per head the weights are
    /// `softmax(q_h k_hᵀ / √d_k)` and the head outputs are concatenated.
    /// Query rows outside every segment produce zeros.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: &[Segment],
    ) -> Result<Var> {
        let (nq, d) = self.dims2(q)?;
        let (nk, dk_cols) = self.dims2(k)?;
        let (nv, dv_cols) = self.dims2(v)?;
        if dk_cols != d || dv_cols != d || nk != nv {
            return Err(Error::shape("attention", self.shape(q), self.shape(k)));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Contract(format!(
                "attention: width {d} not divisible by {heads} heads"
            )));
        }
        for s in segments {
            if s.q_len == 0 || s.k_len == 0 || s.q_start + s.q_len > nq || s.k_start + s.k_len > nk
            {
                return Err(Error::Contract(format!(
                    "attention: segment {s:?} out of bounds"
                )));
            }
        }
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let (qv, kv, vv) = (self.values(q), self.values(k), self.values(v));
        let mut out = vec![T::zero(); nq * d];
        let mut probs = Vec::new();
        let mut scores = Vec::new();
        let mut p = Vec::new();
        for s in segments {
            scores.resize(s.k_len, T::zero());
            p.resize(s.k_len, T::zero());
            for h in 0..heads {
                let c0 = h * dh;
                for qi in s.q_start..s.q_start + s.q_len {
                    let qrow = &qv[qi * d + c0..qi * d + c0 + dh];
                    for (j, sc) in scores.iter_mut().enumerate() {
                        let kr = s.k_start + j;
                        *sc = kernels::dot(qrow, &kv[kr * d + c0..kr * d + c0 + dh]) * scale;
                    }
                    kernels::softmax_row(&scores, &mut p);
                    let orow = &mut out[qi * d + c0..qi * d + c0 + dh];
                    for (j, &w) in p.iter().enumerate() {
                        let kr = s.k_start + j;
                        for (o, &x) in orow.iter_mut().zip(&vv[kr * d + c0..kr * d + c0 + dh]) {
                            *o += w * x;
                        }
                    }
                    probs.extend_from_slice(&p);
                }
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        let op = Op::Attention {
            q,
            k,
            v,
            heads,
            segments: segments.to_vec(),
            probs,
        };
        Ok(self.push(&[nq, d], out, op, rg))
    }

    // ---- reverse pass --------------------------------------------------

    /// Reverse-mode pass from a one-element `loss`. Leaf gradients are added
    /// to whatever the leaves already hold.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.rg(loss) {
            return Err(Error::Contract(
                "loss does not depend on any array that requires a gradient".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.array.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            let mut acc = |v: Var, contrib: Vec<T>| {
                if !nodes[v.0].array.requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(buf) => buf.iter_mut().zip(&contrib).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(contrib),
                }
            };
            let val = |v: Var| nodes[v.0].array.values();
            let wants = |v: Var| nodes[v.0].array.requires_grad;

            match &node.op {
                Op::Leaf => leaf_grads.push((idx, g)),
                Op::Add(a, b) => {
                    acc(*b, g.clone());
                    acc(*a, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.iter().map(|&x| -x).collect());
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    if wants(*a) {
                        acc(*a, g.iter().zip(val(*b)).map(|(&x, &y)| x * y).collect());
                    }
                    if wants(*b) {
                        acc(*b, g.iter().zip(val(*a)).map(|(&x, &y)| x * y).collect());
                    }
                }
                Op::AddBias { x, bias, cols } => {
                    if wants(*bias) {
                        let mut gb = vec![T::zero(); *cols];
                        for row in g.chunks(*cols) {
                            gb.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                        }
                        acc(*bias, gb);
                    }
                    acc(*x, g);
                }
                Op::Scale { x, c } => acc(*x, g.iter().map(|&u| u * *c).collect()),
                Op::ScaleBy { s, x } => {
                    if wants(*s) {
                        acc(*s, vec![kernels::dot(&g, val(*x))]);
                    }
                    let c = val(*s)[0];
                    acc(*x, g.iter().map(|&u| u * c).collect());
                }
                Op::MatMul { a, b, m, k, n } => {
                    if wants(*a) {
                        acc(*a, kernels::matmul_nt(&g, val(*b), *m, *n, *k));
                    }
                    if wants(*b) {
                        acc(*b, kernels::matmul_tn(val(*a), &g, *m, *k, *n));
                    }
                }
                Op::Transpose { x, rows, cols } => {
                    acc(*x, kernels::transpose(&g, *cols, *rows));
                }
                Op::Reshape(x) => acc(*x, g),
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = nodes[p.0].array.numel();
                        acc(p, g[offset..offset + len].to_vec());
                        offset += len;
                    }
                }
                Op::ConcatCols { parts, rows } => {
                    let total: usize = parts.iter().map(|p| p.1).sum();
                    let mut c0 = 0;
                    for &(p, c) in parts {
                        let mut gp = Vec::with_capacity(rows * c);
                        for i in 0..*rows {
                            gp.extend_from_slice(&g[i * total + c0..i * total + c0 + c]);
                        }
                        acc(p, gp);
                        c0 += c;
                    }
                }
                Op::SliceRows { x, start } => {
                    let cols = *nodes[x.0].array.shape().last().unwrap();
                    let mut gx = vec![T::zero(); nodes[x.0].array.numel()];
                    gx[start * cols..start * cols + g.len()].copy_from_slice(&g);
                    acc(*x, gx);
                }
                Op::SliceCols {
                    x,
                    start,
                    len,
                    cols,
                } => {
                    let mut gx = vec![T::zero(); nodes[x.0].array.numel()];
                    for (i, row) in g.chunks(*len).enumerate() {
                        gx[i * cols + start..i * cols + start + len].copy_from_slice(row);
                    }
                    acc(*x, gx);
                }
                Op::GatherRows { table, index, cols } => {
                    let mut gt = vec![T::zero(); nodes[table.0].array.numel()];
                    for (row, &i) in g.chunks(*cols).zip(index) {
                        gt[i * cols..(i + 1) * cols]
                            .iter_mut()
                            .zip(row)
                            .for_each(|(a, &b)| *a += b);
                    }
                    acc(*table, gt);
                }
                Op::SegmentMean { x, group, cols } => {
                    let inv = T::one() / T::from_usize(*group).unwrap();
                    let rows = nodes[x.0].array.numel() / cols;
                    let mut gx = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        let src = &g[(r / group) * cols..(r / group + 1) * cols];
                        gx.extend(src.iter().map(|&u| u * inv));
                    }
                    acc(*x, gx);
                }
                Op::Sum(x) => acc(*x, vec![g[0]; nodes[x.0].array.numel()]),
                Op::Mean(x) => {
                    let n = nodes[x.0].array.numel();
                    let share = g[0] / T::from_usize(n).unwrap();
                    acc(*x, vec![share; n]);
                }
                Op::RowSoftmax { x, cols } => {
                    let y = node.array.values();
                    let mut gx = Vec::with_capacity(y.len());
                    for (yr, gr) in y.chunks(*cols).zip(g.chunks(*cols)) {
                        let s = kernels::dot(yr, gr);
                        gx.extend(yr.iter().zip(gr).map(|(&p, &d)| p * (d - s)));
                    }
                    acc(*x, gx);
                }
                Op::KlRows { target, pred, rows } => {
                    let eps = T::from_f64c(KL_EPS);
                    let scale = g[0] / T::from_usize(*rows).unwrap();
                    let (t, p) = (val(*target), val(*pred));
                    if wants(*pred) {
                        let gp = t
                            .iter()
                            .zip(p)
                            .map(|(&ti, &pi)| {
                                if ti > T::zero() && pi >= eps {
                                    -ti / pi * scale
                                } else {
                                    T::zero()
                                }
                            })
                            .collect();
                        acc(*pred, gp);
                    }
                    if wants(*target) {
                        let gt = t
                            .iter()
                            .zip(p)
                            .map(|(&ti, &pi)| {
                                if ti > T::zero() {
                                    (ti.ln() + T::one() - pi.max(eps).ln()) * scale
                                } else {
                                    T::zero()
                                }
                            })
                            .collect();
                        acc(*target, gt);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    cols,
                } => {
                    let scale = g[0] / T::from_usize(targets.len()).unwrap();
                    let mut gl: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                    for (i, &t) in targets.iter().enumerate() {
                        gl[i * cols + t] -= scale;
                    }
                    acc(*logits, gl);
                }
                Op::Gelu(x) => acc(
                    *x,
                    g.iter()
                        .zip(val(*x))
                        .map(|(&d, &u)| d * kernels::gelu_grad(u))
                        .collect(),
                ),
                Op::Relu(x) => acc(
                    *x,
                    g.iter()
                        .zip(val(*x))
                        .map(|(&d, &u)| if u > T::zero() { d } else { T::zero() })
                        .collect(),
                ),
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    cols,
                } => {
                    let n = T::from_usize(*cols).unwrap();
                    if wants(*gamma) {
                        let mut gg = vec![T::zero(); *cols];
                        for (gr, hr) in g.chunks(*cols).zip(xhat.chunks(*cols)) {
                            gg.iter_mut()
                                .zip(gr.iter().zip(hr))
                                .for_each(|(a, (&d, &h))| *a += d * h);
                        }
                        acc(*gamma, gg);
                    }
                    if wants(*beta) {
                        let mut gb = vec![T::zero(); *cols];
                        for gr in g.chunks(*cols) {
                            gb.iter_mut().zip(gr).for_each(|(a, &d)| *a += d);
                        }
                        acc(*beta, gb);
                    }
                    if wants(*x) {
                        let gam = val(*gamma);
                        let mut gx = Vec::with_capacity(g.len());
                        for ((gr, hr), &inv) in g.chunks(*cols).zip(xhat.chunks(*cols)).zip(inv_std)
                        {
                            let dh: Vec<T> = gr.iter().zip(gam).map(|(&d, &w)| d * w).collect();
                            let sum_dh: T = dh.iter().copied().sum();
                            let sum_dh_h = kernels::dot(&dh, hr);
                            gx.extend(
                                dh.iter()
                                    .zip(hr)
                                    .map(|(&d, &h)| inv / n * (n * d - sum_dh - h * sum_dh_h)),
                            );
                        }
                        acc(*x, gx);
                    }
                }
                Op::L2NormRows { x, norms, cols } => {
                    let eps = T::from_f64c(NORM_EPS);
                    let y = node.array.values();
                    let mut gx = Vec::with_capacity(y.len());
                    for ((yr, gr), &norm) in y.chunks(*cols).zip(g.chunks(*cols)).zip(norms) {
                        if norm > eps {
                            let s = kernels::dot(yr, gr);
                            gx.extend(yr.iter().zip(gr).map(|(&u, &d)| (d - u * s) / norm));
                        } else {
                            gx.extend(gr.iter().map(|&d| d / eps));
                        }
                    }
                    acc(*x, gx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    segments,
                    probs,
                } => {
                    let (qv, kv, vv) = (val(*q), val(*k), val(*v));
                    let d = nodes[q.0].array.shape()[1];
                    let dh = d / heads;
                    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
                    let mut gq = vec![T::zero(); qv.len()];
                    let mut gk = vec![T::zero(); kv.len()];
                    let mut gv = vec![T::zero(); vv.len()];
                    let mut offset = 0;
                    let mut dp = Vec::new();
                    for s in segments {
                        dp.resize(s.k_len, T::zero());
                        for h in 0..*heads {
                            let c0 = h * dh;
                            for qi in s.q_start..s.q_start + s.q_len {
                                let p = &probs[offset..offset + s.k_len];
                                offset += s.k_len;
                                let go = &g[qi * d + c0..qi * d + c0 + dh];
                                for (j, slot) in dp.iter_mut().enumerate() {
                                    let kr = s.k_start + j;
                                    *slot = kernels::dot(go, &vv[kr * d + c0..kr * d + c0 + dh]);
                                    let w = p[j];
                                    gv[kr * d + c0..kr * d + c0 + dh]
                                        .iter_mut()
                                        .zip(go)
                                        .for_each(|(a, &b)| *a += w * b);
                                }
                                let sp = kernels::dot(p, &dp);
                                for j in 0..s.k_len {
                                    let ds = p[j] * (dp[j] - sp) * scale;
                                    if ds == T::zero() {
                                        continue;
                                    }
                                    let kr = s.k_start + j;
                                    for c in c0..c0 + dh {
                                        gq[qi * d + c] += ds * kv[kr * d + c];
                                        gk[kr * d + c] += ds * qv[qi * d + c];
                                    }
                                }
                            }
                        }
                    }
                    acc(*q, gq);
                    acc(*k, gk);
                    acc(*v, gv);
                }
            }
        }

        for (idx, g) in leaf_grads {
            self.nodes[idx].array.accumulate_grad(&g);
        }
        Ok(())
    }
}

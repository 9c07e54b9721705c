use crate::error::{Result, TensorError};
use crate::kernels::{gelu, gelu_grad, gemm_strided, softmax_in_place, MatRef};
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    StopGrad,
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Transpose { a: Var, rows: usize, cols: usize },
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Linear { x: Var, w: Var, b: Option<Var>, m: usize, k: usize, n: usize },
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Softmax(Var),
    Attention { q: Var, k: Var, v: Var, batch: usize, seq: usize, heads: usize, probs: Vec<f64> },
    GatherRows { x: Var, idx: Vec<usize> },
    ConcatRows(Var, Var),
    GroupMean { x: Var, weights: Vec<f64>, seq: usize },
    L2Normalize { x: Var, norms: Vec<f64> },
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    L1 { a: Var, b: Var },
    Sum(Var),
    Mean(Var),
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::StopGrad => "stop_gradient",
            Op::Reshape(_) => "reshape",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Transpose { .. } => "transpose",
            Op::MatMul { .. } => "matmul",
            Op::Linear { .. } => "linear",
            Op::Gelu(_) => "gelu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Softmax(_) => "softmax",
            Op::Attention { .. } => "attention",
            Op::GatherRows { .. } => "gather_rows",
            Op::ConcatRows(..) => "concat_rows",
            Op::GroupMean { .. } => "group_mean",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::L1 { .. } => "l1",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::StopGrad => vec![],
            Op::Reshape(a)
            | Op::Scale(a, _)
            | Op::Gelu(a)
            | Op::Softmax(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Transpose { a, .. }
            | Op::GatherRows { x: a, .. }
            | Op::GroupMean { x: a, .. }
            | Op::L2Normalize { x: a, .. }
            | Op::SoftmaxCrossEntropy { logits: a, .. } => vec![*a],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::ConcatRows(a, b)
            | Op::MatMul { a, b, .. }
            | Op::L1 { a, b } => vec![*a, *b],
            Op::Linear { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// One recorded operation, exposed for inspection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpRecord {
    pub kind: &'static str,
    pub inputs: Vec<Var>,
    pub output: Var,
}

/// Define-by-run computation record.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape { op, left: a.shape().to_vec(), right: b.shape().to_vec() }
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
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`] call, if any
    /// contribution reached this node.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn records(&self) -> Vec<OpRecord> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| OpRecord { kind: n.op.kind(), inputs: n.op.inputs(), output: Var(i) })
            .collect()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op.kind() });
        }
        let requires_grad = match op {
            Op::Leaf | Op::StopGrad => false,
            _ => op.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Identity in the forward pass; blocks all gradient flow to its input.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.nodes.push(Node { value, op: Op::StopGrad, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        self.push(value, Op::Reshape(x))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let name = op.kind();
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a length-`cols` row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        if tr.len() != tx.cols() {
            return Err(shape_err("add_row", tx, tr));
        }
        let c = tx.cols();
        let mut data = tx.data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v += tr.data()[i % c];
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        self.push(value, Op::AddRow(x, row))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let tx = self.value(x);
        let value = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v * c).collect())?;
        self.push(value, Op::Scale(x, c))
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(v, w) in terms {
            let s = self.scale(v, w)?;
            acc = Some(match acc {
                None => s,
                Some(a) => self.add(a, s)?,
            });
        }
        acc.ok_or_else(|| TensorError::Invalid("weighted_sum of no terms".into()))
    }

    fn as_matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let t = self.value(v);
        if t.shape().len() != 2 {
            return Err(TensorError::Invalid(format!("{op} expects a matrix, got shape {:?}", t.shape())));
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.as_matrix("transpose", a)?;
        let src = self.value(a).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        self.push(Tensor::new([c, r], data)?, Op::Transpose { a, rows: r, cols: c })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.as_matrix("matmul", a)?;
        let (k2, n) = self.as_matrix("matmul", b)?;
        if k != k2 {
            return Err(shape_err("matmul", self.value(a), self.value(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_strided(
            m,
            k,
            n,
            MatRef::rm(self.value(a).data(), 0, k),
            MatRef::rm(self.value(b).data(), 0, n),
            &mut out,
            0,
            n,
            false,
        );
        self.push(Tensor::new([m, n], out)?, Op::MatMul { a, b, m, k, n })
    }

    /// `x[m x k] * w[k x n] + b[n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (m, k) = self.as_matrix("linear", x)?;
        let (k2, n) = self.as_matrix("linear", w)?;
        if k != k2 {
            return Err(shape_err("linear", self.value(x), self.value(w)));
        }
        let mut out = vec![0.0; m * n];
        if let Some(b) = b {
            let tb = self.value(b);
            if tb.len() != n {
                return Err(shape_err("linear", self.value(w), tb));
            }
            for row in out.chunks_mut(n) {
                row.copy_from_slice(tb.data());
            }
        }
        gemm_strided(
            m,
            k,
            n,
            MatRef::rm(self.value(x).data(), 0, k),
            MatRef::rm(self.value(w).data(), 0, n),
            &mut out,
            0,
            n,
            b.is_some(),
        );
        self.push(Tensor::new([m, n], out)?, Op::Linear { x, w, b, m, k, n })
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let value = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|&v| gelu(v)).collect())?;
        self.push(value, Op::Gelu(x))
    }

    /// Row-wise layer normalization with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.cols();
        let rows = tx.rows();
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if tg.len() != d || tb.len() != d {
            return Err(shape_err("layer_norm", tx, tg));
        }
        let mut xhat = vec![0.0; rows * d];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[r * d + j] = h;
                out[r * d + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        self.push(value, Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let mut value = self.value(x).clone();
        let c = value.cols();
        for row in value.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        self.push(value, Op::Softmax(x))
    }

    /// Multi-head scaled dot-product attention over `batch` independent
    /// sequences of length `seq`. `q`, `k`, `v` are `[batch*seq, width]`
    /// with heads laid out contiguously along the width. Keys whose
    /// `key_mask` entry is `false` receive exactly zero attention weight.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        key_mask: Option<&[bool]>,
    ) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if tq.shape() != tk.shape() || tq.shape() != tv.shape() {
            return Err(shape_err("attention", tq, tk));
        }
        let (rows, width) = (tq.rows(), tq.cols());
        if rows != batch * seq || heads == 0 || width % heads != 0 {
            return Err(TensorError::Invalid(format!(
                "attention: {rows} rows x {width} cannot be split into {batch}x{seq} with {heads} heads"
            )));
        }
        if let Some(m) = key_mask {
            if m.len() != rows {
                return Err(TensorError::Invalid("attention: key mask length".into()));
            }
            for b in 0..batch {
                if !m[b * seq..(b + 1) * seq].iter().any(|&x| x) {
                    return Err(TensorError::Invalid(format!("attention: sequence {b} has no valid keys")));
                }
            }
        }
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = vec![0.0; rows * width];
        for b in 0..batch {
            for h in 0..heads {
                let off = b * seq * width + h * dh;
                let p_off = (b * heads + h) * seq * seq;
                gemm_strided(
                    seq,
                    dh,
                    seq,
                    MatRef::strided(tq.data(), off, width, 1),
                    MatRef::strided(tk.data(), off, 1, width),
                    &mut probs,
                    p_off,
                    seq,
                    false,
                );
                for i in 0..seq {
                    let row = &mut probs[p_off + i * seq..p_off + (i + 1) * seq];
                    for (j, s) in row.iter_mut().enumerate() {
                        *s = match key_mask {
                            Some(m) if !m[b * seq + j] => f64::NEG_INFINITY,
                            _ => *s * scale,
                        };
                    }
                    softmax_in_place(row);
                }
                gemm_strided(
                    seq,
                    seq,
                    dh,
                    MatRef::rm(&probs, p_off, seq),
                    MatRef::strided(tv.data(), off, width, 1),
                    &mut out,
                    off,
                    width,
                    false,
                );
            }
        }
        let value = Tensor::new(tq.shape().to_vec(), out)?;
        self.push(value, Op::Attention { q, k, v, batch, seq, heads, probs })
    }

    /// Selects rows of a matrix (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let (rows, c) = (tx.rows(), tx.cols());
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= rows {
                return Err(TensorError::Index { op: "gather_rows", index: i, size: rows });
            }
            data.extend_from_slice(tx.row(i));
        }
        let value = Tensor::new([idx.len(), c], data)?;
        self.push(value, Op::GatherRows { x, idx: idx.to_vec() })
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(shape_err("concat_rows", ta, tb));
        }
        let mut data = ta.data().to_vec();
        data.extend_from_slice(tb.data());
        let value = Tensor::new([ta.rows() + tb.rows(), ta.cols()], data)?;
        self.push(value, Op::ConcatRows(a, b))
    }

    /// Mean over rows within each consecutive group of `seq` rows, counting
    /// only rows whose `valid` entry is `true`. Output is `[groups, cols]`.
    pub fn group_mean(&mut self, x: Var, seq: usize, valid: Option<&[bool]>) -> Result<Var> {
        let tx = self.value(x);
        let (rows, c) = (tx.rows(), tx.cols());
        if seq == 0 || rows % seq != 0 {
            return Err(TensorError::Invalid(format!("group_mean: {rows} rows not divisible by {seq}")));
        }
        if valid.is_some_and(|m| m.len() != rows) {
            return Err(TensorError::Invalid("group_mean: mask length".into()));
        }
        let groups = rows / seq;
        let mut weights = vec![0.0; rows];
        let mut out = vec![0.0; groups * c];
        for g in 0..groups {
            let count = (0..seq).filter(|&s| valid.is_none_or(|m| m[g * seq + s])).count();
            if count == 0 {
                return Err(TensorError::Invalid(format!("group_mean: group {g} is empty")));
            }
            let w = 1.0 / count as f64;
            for s in 0..seq {
                let r = g * seq + s;
                if valid.is_none_or(|m| m[r]) {
                    weights[r] = w;
                    for (o, v) in out[g * c..(g + 1) * c].iter_mut().zip(tx.row(r)) {
                        *o += w * v;
                    }
                }
            }
        }
        let value = Tensor::new([groups, c], out)?;
        self.push(value, Op::GroupMean { x, weights, seq })
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let mut value = self.value(x).clone();
        let c = value.cols();
        let mut norms = Vec::with_capacity(value.rows());
        for row in value.data_mut().chunks_mut(c) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        self.push(value, Op::L2Normalize { x, norms })
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (rows, c) = (t.rows(), t.cols());
        if targets.len() != rows || rows == 0 {
            return Err(TensorError::Invalid(format!(
                "softmax_cross_entropy: {} targets for {rows} rows",
                targets.len()
            )));
        }
        let mut probs = t.data().to_vec();
        let mut loss = 0.0;
        for (r, row) in probs.chunks_mut(c).enumerate() {
            let target = targets[r];
            if target >= c {
                return Err(TensorError::Index { op: "softmax_cross_entropy", index: target, size: c });
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[target];
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        let value = Tensor::scalar(loss / rows as f64);
        self.push(value, Op::SoftmaxCrossEntropy { logits, targets: targets.to_vec(), probs })
    }

    /// Mean absolute difference; the subgradient at zero is zero.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("l1", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.is_empty() {
            return Err(TensorError::Invalid("l1 of empty tensors".into()));
        }
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y).abs()).sum();
        let value = Tensor::scalar(s / ta.len() as f64);
        self.push(value, Op::L1 { a, b })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(TensorError::Invalid("mean of empty tensor".into()));
        }
        let s = t.sum() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Reverse-mode sweep from a scalar node. Each node at or before `loss`
    /// is visited once, in reverse insertion order; returns the number of
    /// nodes whose backward rule ran.
    pub fn backward(&mut self, loss: Var) -> Result<usize> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Invalid(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let Graph { nodes, grads } = self;
        grads.clear();
        grads.resize_with(nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut visited = 0;
        for i in (0..=loss.0).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            visited += 1;
            backprop_node(nodes, grads, i, &g);
            grads[i] = Some(g);
        }
        Ok(visited)
    }
}

fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn acc_scaled(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64], c: f64) {
    if let Some(s) = slot(nodes, grads, v) {
        for (d, x) in s.iter_mut().zip(g) {
            *d += c * x;
        }
    }
}

fn backprop_node(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    let val = |v: Var| nodes[v.0].value.data();
    match &nodes[i].op {
        Op::Leaf | Op::StopGrad => {}
        Op::Reshape(a) => acc_scaled(nodes, grads, *a, g, 1.0),
        Op::Add(a, b) => {
            acc_scaled(nodes, grads, *a, g, 1.0);
            acc_scaled(nodes, grads, *b, g, 1.0);
        }
        Op::Sub(a, b) => {
            acc_scaled(nodes, grads, *a, g, 1.0);
            acc_scaled(nodes, grads, *b, g, -1.0);
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a).to_vec(), val(*b).to_vec());
            if let Some(s) = slot(nodes, grads, *a) {
                for ((d, x), y) in s.iter_mut().zip(g).zip(&vb) {
                    *d += x * y;
                }
            }
            if let Some(s) = slot(nodes, grads, *b) {
                for ((d, x), y) in s.iter_mut().zip(g).zip(&va) {
                    *d += x * y;
                }
            }
        }
        Op::AddRow(x, row) => {
            acc_scaled(nodes, grads, *x, g, 1.0);
            if let Some(s) = slot(nodes, grads, *row) {
                let c = s.len();
                for (j, v) in g.iter().enumerate() {
                    s[j % c] += v;
                }
            }
        }
        Op::Scale(a, c) => acc_scaled(nodes, grads, *a, g, *c),
        Op::Transpose { a, rows, cols } => {
            if let Some(s) = slot(nodes, grads, *a) {
                for r in 0..*rows {
                    for c in 0..*cols {
                        s[r * cols + c] += g[c * rows + r];
                    }
                }
            }
        }
        Op::MatMul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            if let Some(s) = slot(nodes, grads, *a) {
                gemm_strided(m, n, k, MatRef::rm(g, 0, n), MatRef::rm_t(val(*b), 0, n), s, 0, k, true);
            }
            if let Some(s) = slot(nodes, grads, *b) {
                gemm_strided(k, m, n, MatRef::rm_t(val(*a), 0, k), MatRef::rm(g, 0, n), s, 0, n, true);
            }
        }
        Op::Linear { x, w, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            if let Some(s) = slot(nodes, grads, *x) {
                gemm_strided(m, n, k, MatRef::rm(g, 0, n), MatRef::rm_t(val(*w), 0, n), s, 0, k, true);
            }
            if let Some(s) = slot(nodes, grads, *w) {
                gemm_strided(k, m, n, MatRef::rm_t(val(*x), 0, k), MatRef::rm(g, 0, n), s, 0, n, true);
            }
            if let Some(b) = b {
                if let Some(s) = slot(nodes, grads, *b) {
                    for row in g.chunks(n) {
                        for (d, v) in s.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                }
            }
        }
        Op::Gelu(a) => {
            if let Some(s) = slot(nodes, grads, *a) {
                for ((d, x), u) in s.iter_mut().zip(g).zip(val(*a)) {
                    *d += x * gelu_grad(*u);
                }
            }
        }
        Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
            let d = nodes[gamma.0].value.len();
            let gam = val(*gamma);
            if let Some(s) = slot(nodes, grads, *x) {
                let mut dxhat = vec![0.0; d];
                for (r, &rs) in rstd.iter().enumerate() {
                    let gr = &g[r * d..(r + 1) * d];
                    let xh = &xhat[r * d..(r + 1) * d];
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..d {
                        dxhat[j] = gr[j] * gam[j];
                        m1 += dxhat[j];
                        m2 += dxhat[j] * xh[j];
                    }
                    m1 /= d as f64;
                    m2 /= d as f64;
                    for j in 0..d {
                        s[r * d + j] += rs * (dxhat[j] - m1 - xh[j] * m2);
                    }
                }
            }
            if let Some(s) = slot(nodes, grads, *gamma) {
                for (j, (gv, xh)) in g.iter().zip(xhat).enumerate() {
                    s[j % d] += gv * xh;
                }
            }
            if let Some(s) = slot(nodes, grads, *beta) {
                for (j, gv) in g.iter().enumerate() {
                    s[j % d] += gv;
                }
            }
        }
        Op::Softmax(a) => {
            let y = nodes[i].value.data();
            let c = nodes[i].value.cols();
            if let Some(s) = slot(nodes, grads, *a) {
                for r in 0..y.len() / c {
                    let yr = &y[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        s[r * c + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::Attention { q, k, v, batch, seq, heads, probs } => {
            backprop_attention(nodes, grads, g, [*q, *k, *v], *batch, *seq, *heads, probs)
        }
        Op::GatherRows { x, idx } => {
            if let Some(s) = slot(nodes, grads, *x) {
                let c = nodes[i].value.cols();
                for (r, &src) in idx.iter().enumerate() {
                    for j in 0..c {
                        s[src * c + j] += g[r * c + j];
                    }
                }
            }
        }
        Op::ConcatRows(a, b) => {
            let na = nodes[a.0].value.len();
            acc_scaled(nodes, grads, *a, &g[..na], 1.0);
            acc_scaled(nodes, grads, *b, &g[na..], 1.0);
        }
        Op::GroupMean { x, weights, seq } => {
            if let Some(s) = slot(nodes, grads, *x) {
                let c = nodes[i].value.cols();
                for (r, &w) in weights.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let grp = r / seq;
                    for j in 0..c {
                        s[r * c + j] += w * g[grp * c + j];
                    }
                }
            }
        }
        Op::L2Normalize { x, norms } => {
            let y = nodes[i].value.data();
            let c = nodes[i].value.cols();
            if let Some(s) = slot(nodes, grads, *x) {
                for (r, n) in norms.iter().enumerate() {
                    let yr = &y[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        s[r * c + j] += (gr[j] - yr[j] * dot) / n;
                    }
                }
            }
        }
        Op::SoftmaxCrossEntropy { logits, targets, probs } => {
            if let Some(s) = slot(nodes, grads, *logits) {
                let rows = targets.len();
                let c = probs.len() / rows;
                let scale = g[0] / rows as f64;
                for (r, &t) in targets.iter().enumerate() {
                    for j in 0..c {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        s[r * c + j] += scale * (probs[r * c + j] - onehot);
                    }
                }
            }
        }
        Op::L1 { a, b } => {
            let n = nodes[a.0].value.len() as f64;
            let sign: Vec<f64> = val(*a)
                .iter()
                .zip(val(*b))
                .map(|(x, y)| {
                    let d = x - y;
                    if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            acc_scaled(nodes, grads, *a, &sign, g[0] / n);
            acc_scaled(nodes, grads, *b, &sign, -g[0] / n);
        }
        Op::Sum(a) => {
            if let Some(s) = slot(nodes, grads, *a) {
                s.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean(a) => {
            if let Some(s) = slot(nodes, grads, *a) {
                let c = g[0] / s.len() as f64;
                s.iter_mut().for_each(|d| *d += c);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn backprop_attention(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    [q, k, v]: [Var; 3],
    batch: usize,
    seq: usize,
    heads: usize,
    probs: &[f64],
) {
    let tq = nodes[q.0].value.data();
    let tk = nodes[k.0].value.data();
    let tv = nodes[v.0].value.data();
    let width = nodes[q.0].value.cols();
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; tq.len()];
    let mut dk = vec![0.0; tq.len()];
    let mut dv = vec![0.0; tq.len()];
    let mut ds = vec![0.0; seq * seq];
    for b in 0..batch {
        for h in 0..heads {
            let off = b * seq * width + h * dh;
            let p_off = (b * heads + h) * seq * seq;
            let go = MatRef::strided(g, off, width, 1);
            gemm_strided(seq, seq, dh, MatRef::rm_t(probs, p_off, seq), go, &mut dv, off, width, true);
            gemm_strided(seq, dh, seq, go, MatRef::strided(tv, off, 1, width), &mut ds, 0, seq, false);
            for r in 0..seq {
                let p = &probs[p_off + r * seq..p_off + (r + 1) * seq];
                let d = &mut ds[r * seq..(r + 1) * seq];
                let dot: f64 = p.iter().zip(d.iter()).map(|(a, b)| a * b).sum();
                for (dj, pj) in d.iter_mut().zip(p) {
                    *dj = pj * (*dj - dot) * scale;
                }
            }
            gemm_strided(seq, seq, dh, MatRef::rm(&ds, 0, seq), MatRef::strided(tk, off, width, 1), &mut dq, off, width, true);
            gemm_strided(seq, seq, dh, MatRef::rm_t(&ds, 0, seq), MatRef::strided(tq, off, width, 1), &mut dk, off, width, true);
        }
    }
    acc_scaled(nodes, grads, q, &dq, 1.0);
    acc_scaled(nodes, grads, k, &dk, 1.0);
    acc_scaled(nodes, grads, v, &dv, 1.0);
}

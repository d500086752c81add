use std::borrow::Cow;

use rand::Rng;

use super::kernels::{self, gelu_derivative, gelu_scalar, sigmoid_scalar, softmax_slice};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Storage precision applied to every recorded op output. `F32` rounds each
/// result through `f32`, emulating single-precision inference; gradients
/// stay in `f64`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// Layout of a fused multi-head attention call over a flattened
/// `[batch·seq × heads·head_dim]` activation.
#[derive(Clone, Debug)]
pub struct AttentionSpec {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub kv_heads: usize,
    pub head_dim: usize,
    pub causal: bool,
    /// `batch·seq` flags; `false` keys are never attended to.
    pub key_mask: Vec<bool>,
}

enum Op {
    Leaf,
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    MatMul(Var, Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    Gelu(Var),
    Sigmoid(Var),
    Embed {
        table: Var,
        ids: Vec<usize>,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Dropout {
        x: Var,
        scale: Vec<f64>,
    },
    Rope {
        x: Var,
        positions: Vec<usize>,
        head_dim: usize,
        base: f64,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        spec: AttentionSpec,
        /// Softmax weights per (batch, head, query, key).
        probs: Vec<f64>,
        /// Dropout multipliers aligned with `probs`; empty when dropout is off.
        drop: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(..) => "sum",
            Op::MatMul(..) => "matmul",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Softmax(..) => "softmax",
            Op::Gelu(..) => "gelu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Embed { .. } => "embed",
            Op::GatherRows { .. } => "gather_rows",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Dropout { .. } => "dropout",
            Op::Rope { .. } => "rope",
            Op::Attention { .. } => "attention",
        }
    }
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Computation record. Leaves may borrow parameter tensors for `'p`; every
/// op appends one node, and [`Tape::backward`] walks the nodes in reverse.
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    consumed: bool,
    precision: Precision,
}

/// Adjoints produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    visited: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Node indices whose adjoint rule ran, in the order they ran.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self::with_precision(Precision::F64)
    }

    pub fn with_precision(precision: Precision) -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
            precision,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records a leaf borrowing `t`; it participates in gradients if
    /// `t.requires_grad()`.
    pub fn leaf(&mut self, t: &'p Tensor) -> Var {
        let rg = t.requires_grad();
        self.push_node(Cow::Borrowed(t), rg, Op::Leaf)
    }

    pub fn leaf_owned(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push_node(Cow::Owned(t), rg, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_node(Cow::Owned(t.with_requires_grad(false)), false, Op::Leaf)
    }

    fn push_node(&mut self, value: Cow<'p, Tensor>, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, mut data: Vec<f64>, inputs: &[Var], op: Op) -> Var {
        if self.precision == Precision::F32 {
            data.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let t = Tensor {
            shape,
            data,
            requires_grad: rg,
            grad: None,
        };
        self.push_node(Cow::Owned(t), rg, op)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err("add", self.shape(a), self.shape(b)));
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), data, &[a, b], Op::Add(a, b)))
    }

    /// `x[…×n] + b[n]`, broadcasting `b` over every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.value(b).numel() != n {
            return Err(dim_err("add_row", self.shape(x), self.shape(b)));
        }
        let bias = self.data(b);
        let data = self
            .data(x)
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(bias).map(|(a, c)| a + c))
            .collect();
        Ok(self.push(self.shape(x).to_vec(), data, &[x, b], Op::AddRow(x, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err("mul", self.shape(a), self.shape(b)));
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), data, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let data = self.data(x).iter().map(|v| v * factor).collect();
        self.push(self.shape(x).to_vec(), data, &[x], Op::Scale(x, factor))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.data(x).iter().sum();
        self.push(Vec::new(), vec![total], &[x], Op::Sum(x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.data(a), self.data(b), m, k, n);
        Ok(self.push(vec![m, n], data, &[a, b], Op::MatMul(a, b)))
    }

    /// Normalizes every last-axis slice with its mean and population
    /// variance, then applies `gamma ⊙ x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if !(eps >= 0.0) {
            return Err(Error::Parameter(format!(
                "layer_norm eps must be >= 0, got {eps}"
            )));
        }
        let d = self.value(x).last_dim();
        if self.value(gamma).numel() != d {
            return Err(dim_err("layer_norm", self.shape(x), self.shape(gamma)));
        }
        if self.value(beta).numel() != d {
            return Err(dim_err("layer_norm", self.shape(x), self.shape(beta)));
        }
        let xs = self.data(x);
        let (g, b) = (self.data(gamma), self.data(beta));
        let rows = xs.len() / d;
        let mut out = Vec::with_capacity(xs.len());
        let mut xhat = Vec::with_capacity(xs.len());
        let mut inv_std = Vec::with_capacity(rows);
        for row in xs.chunks_exact(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            out,
            &[x, gamma, beta],
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let d = self.value(x).last_dim();
        let xs = self.data(x);
        let mut out = vec![0.0; xs.len()];
        for (src, dst) in xs.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            softmax_slice(src, dst);
        }
        self.push(self.shape(x).to_vec(), out, &[x], Op::Softmax(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self.data(x).iter().map(|&v| gelu_scalar(v)).collect();
        self.push(self.shape(x).to_vec(), data, &[x], Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self.data(x).iter().map(|&v| sigmoid_scalar(v)).collect();
        self.push(self.shape(x).to_vec(), data, &[x], Op::Sigmoid(x))
    }

    /// Row lookup `out[i] = table[ids[i]]`.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(dim_err("embed", s, &[]));
        }
        let (vocab, d) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Index {
                what: "embedding table",
                index: bad,
                bound: vocab,
            });
        }
        if ids.is_empty() {
            return Err(Error::Parameter("embed needs at least one id".into()));
        }
        let t = self.data(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(&t[id * d..(id + 1) * d]);
        }
        Ok(self.push(
            vec![ids.len(), d],
            data,
            &[table],
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Selects rows of a `[R×d]` value.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        let r = xv.rows();
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::Index {
                what: "gathered rows",
                index: bad,
                bound: r,
            });
        }
        let xs = xv.data();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            data.extend_from_slice(&xs[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            vec![rows.len(), d],
            data,
            &[x],
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits[B×C]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(dim_err("cross_entropy", s, &[labels.len()]));
        }
        let c = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Index {
                what: "class labels",
                index: bad,
                bound: c,
            });
        }
        let xs = self.data(logits);
        let mut probs = vec![0.0; xs.len()];
        let mut total = 0.0;
        for (b, (row, p)) in xs
            .chunks_exact(c)
            .zip(probs.chunks_exact_mut(c))
            .enumerate()
        {
            softmax_slice(row, p);
            // log-sum-exp form keeps tiny probabilities exact
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[labels[b]];
        }
        let loss = total / labels.len() as f64;
        Ok(self.push(
            Vec::new(),
            vec![loss],
            &[logits],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1−p)`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "dropout probability must be in [0, 1), got {p}"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).numel();
        let scale: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = self
            .data(x)
            .iter()
            .zip(&scale)
            .map(|(v, s)| v * s)
            .collect();
        Ok(self.push(self.shape(x).to_vec(), data, &[x], Op::Dropout { x, scale }))
    }

    /// Rotary position encoding over a `[rows × k·head_dim]` value; row `r`
    /// is rotated for position `positions[r]`.
    pub fn rope(&mut self, x: Var, positions: &[usize], head_dim: usize, base: f64) -> Result<Var> {
        let xv = self.value(x);
        let width = xv.last_dim();
        if head_dim == 0 || !head_dim.is_multiple_of(2) || !width.is_multiple_of(head_dim) {
            return Err(Error::config(
                "head_dim",
                format!("rotary encoding needs an even head_dim dividing {width}, got {head_dim}"),
            ));
        }
        if positions.len() != xv.rows() {
            return Err(dim_err("rope", xv.shape(), &[positions.len()]));
        }
        let mut data = xv.data().to_vec();
        for (row, &pos) in data.chunks_exact_mut(width).zip(positions) {
            kernels::rotate_pairs(row, head_dim, pos, base, 1.0);
        }
        let shape = xv.shape().to_vec();
        Ok(self.push(
            shape,
            data,
            &[x],
            Op::Rope {
                x,
                positions: positions.to_vec(),
                head_dim,
                base,
            },
        ))
    }

    /// Fused scaled dot-product attention `softmax(QKᵀ/√d_k + mask)·V` for all
    /// batches and heads. With `kv_heads == 1` every query head shares the
    /// single key/value head. Attention dropout (probability `dropout_p`) is
    /// applied to the weights in training mode.
    #[allow(clippy::too_many_arguments)]
    pub fn attention<R: Rng + ?Sized>(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        spec: AttentionSpec,
        dropout_p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let AttentionSpec {
            batch,
            seq,
            heads,
            kv_heads,
            head_dim,
            causal,
            ..
        } = spec;
        let rows = batch * seq;
        if kv_heads == 0 || heads % kv_heads != 0 {
            return Err(Error::config("num_kv_heads", "must divide num_heads"));
        }
        if self.shape(q) != [rows, heads * head_dim] {
            return Err(dim_err(
                "attention(q)",
                self.shape(q),
                &[rows, heads * head_dim],
            ));
        }
        for t in [k, v] {
            if self.shape(t) != [rows, kv_heads * head_dim] {
                return Err(dim_err(
                    "attention(k/v)",
                    self.shape(t),
                    &[rows, kv_heads * head_dim],
                ));
            }
        }
        if spec.key_mask.len() != rows {
            return Err(dim_err("attention(mask)", &[spec.key_mask.len()], &[rows]));
        }
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::Parameter(format!(
                "attention dropout must be in [0, 1), got {dropout_p}"
            )));
        }
        let use_drop = training && dropout_p > 0.0;
        let keep = 1.0 / (1.0 - dropout_p);
        let group = heads / kv_heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let qw = heads * head_dim;
        let kw = kv_heads * head_dim;
        let (qs, ks, vs) = (self.data(q), self.data(k), self.data(v));
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut drop = if use_drop {
            vec![0.0; probs.len()]
        } else {
            Vec::new()
        };
        let mut out = vec![0.0; rows * qw];
        let mut scores = vec![0.0; seq];
        let mut allowed = Vec::with_capacity(seq);
        for b in 0..batch {
            for h in 0..heads {
                let kvh = h / group;
                for i in 0..seq {
                    let qrow = &qs[(b * seq + i) * qw + h * head_dim..][..head_dim];
                    allowed.clear();
                    let limit = if causal { i + 1 } else { seq };
                    for j in 0..limit {
                        if spec.key_mask[b * seq + j] {
                            allowed.push(j);
                        }
                    }
                    if allowed.is_empty() {
                        continue;
                    }
                    let mut max = f64::NEG_INFINITY;
                    for &j in &allowed {
                        let krow = &ks[(b * seq + j) * kw + kvh * head_dim..][..head_dim];
                        let mut dot = 0.0;
                        for (a, c) in qrow.iter().zip(krow) {
                            dot += a * c;
                        }
                        scores[j] = dot * scale;
                        max = max.max(scores[j]);
                    }
                    let mut total = 0.0;
                    for &j in &allowed {
                        scores[j] = (scores[j] - max).exp();
                        total += scores[j];
                    }
                    let base = ((b * heads + h) * seq + i) * seq;
                    let orow = &mut out[(b * seq + i) * qw + h * head_dim..][..head_dim];
                    for &j in &allowed {
                        let p = scores[j] / total;
                        probs[base + j] = p;
                        let mut w = p;
                        if use_drop {
                            let m = if rng.random::<f64>() < dropout_p {
                                0.0
                            } else {
                                keep
                            };
                            drop[base + j] = m;
                            w *= m;
                        }
                        if w != 0.0 {
                            let vrow = &vs[(b * seq + j) * kw + kvh * head_dim..][..head_dim];
                            for (o, &x) in orow.iter_mut().zip(vrow) {
                                *o += w * x;
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(
            vec![rows, qw],
            out,
            &[q, k, v],
            Op::Attention {
                q,
                k,
                v,
                spec,
                probs,
                drop,
            },
        ))
    }

    /// Replays adjoints from the scalar `loss` back to every leaf that
    /// requires a gradient. A tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Usage(
                "computation record already consumed by a backward pass".into(),
            ));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage("loss does not belong to this tape".into()));
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut visited = Vec::new();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            visited.push(idx);
            self.apply_adjoint(idx, &g, &mut grads);
            // keep the output adjoint for inspection of intermediates
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn apply_adjoint(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        accumulate(grads, v, self.numel(v), |d| add_into(d, g));
                    }
                }
            }
            Op::AddRow(x, b) => {
                if self.wants(*x) {
                    accumulate(grads, *x, self.numel(*x), |d| add_into(d, g));
                }
                if self.wants(*b) {
                    let n = self.numel(*b);
                    accumulate(grads, *b, n, |d| {
                        for row in g.chunks_exact(n) {
                            add_into(d, row);
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                if self.wants(*a) {
                    accumulate(grads, *a, av.len(), |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * bv[i];
                        }
                    });
                }
                if self.wants(*b) {
                    accumulate(grads, *b, bv.len(), |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * av[i];
                        }
                    });
                }
            }
            Op::Scale(x, f) => {
                accumulate(grads, *x, self.numel(*x), |d| {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di += gi * f;
                    }
                });
            }
            Op::Sum(x) => {
                accumulate(grads, *x, self.numel(*x), |d| {
                    d.iter_mut().for_each(|v| *v += g[0])
                });
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    let bv = self.data(*b);
                    accumulate(grads, *a, m * k, |d| {
                        kernels::matmul_grad_lhs(g, bv, m, k, n, d)
                    });
                }
                if self.wants(*b) {
                    let av = self.data(*a);
                    accumulate(grads, *b, k * n, |d| {
                        kernels::matmul_grad_rhs(av, g, m, k, n, d)
                    });
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let dim = self.numel(*gamma);
                let gam = self.data(*gamma);
                if self.wants(*gamma) {
                    accumulate(grads, *gamma, dim, |d| {
                        for (grow, hrow) in g.chunks_exact(dim).zip(xhat.chunks_exact(dim)) {
                            for j in 0..dim {
                                d[j] += grow[j] * hrow[j];
                            }
                        }
                    });
                }
                if self.wants(*beta) {
                    accumulate(grads, *beta, dim, |d| {
                        for grow in g.chunks_exact(dim) {
                            add_into(d, grow);
                        }
                    });
                }
                if self.wants(*x) {
                    accumulate(grads, *x, g.len(), |d| {
                        let n = dim as f64;
                        for (r, ((grow, hrow), drow)) in g
                            .chunks_exact(dim)
                            .zip(xhat.chunks_exact(dim))
                            .zip(d.chunks_exact_mut(dim))
                            .enumerate()
                        {
                            let mut mean_dh = 0.0;
                            let mut mean_dh_h = 0.0;
                            for j in 0..dim {
                                let dh = grow[j] * gam[j];
                                mean_dh += dh;
                                mean_dh_h += dh * hrow[j];
                            }
                            mean_dh /= n;
                            mean_dh_h /= n;
                            for j in 0..dim {
                                let dh = grow[j] * gam[j];
                                drow[j] += inv_std[r] * (dh - mean_dh - hrow[j] * mean_dh_h);
                            }
                        }
                    });
                }
            }
            Op::Softmax(x) => {
                let dim = node.value.last_dim();
                accumulate(grads, *x, g.len(), |d| {
                    for ((grow, prow), drow) in g
                        .chunks_exact(dim)
                        .zip(out.chunks_exact(dim))
                        .zip(d.chunks_exact_mut(dim))
                    {
                        let dot: f64 = grow.iter().zip(prow).map(|(a, b)| a * b).sum();
                        for j in 0..dim {
                            drow[j] += prow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.data(*x);
                accumulate(grads, *x, g.len(), |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * gelu_derivative(xv[i]);
                    }
                });
            }
            Op::Sigmoid(x) => {
                accumulate(grads, *x, g.len(), |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                });
            }
            Op::Embed { table, ids } => {
                let dim = self.value(*table).last_dim();
                accumulate(grads, *table, self.numel(*table), |d| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut d[id * dim..(id + 1) * dim], &g[r * dim..(r + 1) * dim]);
                    }
                });
            }
            Op::GatherRows { x, rows } => {
                let dim = self.value(*x).last_dim();
                accumulate(grads, *x, self.numel(*x), |d| {
                    for (r, &src) in rows.iter().enumerate() {
                        add_into(
                            &mut d[src * dim..(src + 1) * dim],
                            &g[r * dim..(r + 1) * dim],
                        );
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = self.value(*logits).last_dim();
                let scale = g[0] / labels.len() as f64;
                accumulate(grads, *logits, probs.len(), |d| {
                    for (b, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            d[b * c + j] += scale * (probs[b * c + j] - onehot);
                        }
                    }
                });
            }
            Op::Dropout { x, scale } => {
                accumulate(grads, *x, g.len(), |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * scale[i];
                    }
                });
            }
            Op::Rope {
                x,
                positions,
                head_dim,
                base,
            } => {
                let width = node.value.last_dim();
                accumulate(grads, *x, g.len(), |d| {
                    let mut tmp = vec![0.0; width];
                    for ((grow, drow), &pos) in g
                        .chunks_exact(width)
                        .zip(d.chunks_exact_mut(width))
                        .zip(positions)
                    {
                        tmp.copy_from_slice(grow);
                        kernels::rotate_pairs(&mut tmp, *head_dim, pos, *base, -1.0);
                        add_into(drow, &tmp);
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                spec,
                probs,
                drop,
            } => self.attention_adjoint(g, *q, *k, *v, spec, probs, drop, grads),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_adjoint(
        &self,
        g: &[f64],
        q: Var,
        k: Var,
        v: Var,
        spec: &AttentionSpec,
        probs: &[f64],
        drop: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let AttentionSpec {
            batch,
            seq,
            heads,
            kv_heads,
            head_dim,
            ..
        } = *spec;
        let group = heads / kv_heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let qw = heads * head_dim;
        let kw = kv_heads * head_dim;
        let (qs, ks, vs) = (self.data(q), self.data(k), self.data(v));
        let mut dq = vec![0.0; qs.len()];
        let mut dk = vec![0.0; ks.len()];
        let mut dv = vec![0.0; vs.len()];
        let mut dp = vec![0.0; seq];
        for b in 0..batch {
            for h in 0..heads {
                let kvh = h / group;
                for i in 0..seq {
                    let base = ((b * heads + h) * seq + i) * seq;
                    let prow = &probs[base..base + seq];
                    let grow = &g[(b * seq + i) * qw + h * head_dim..][..head_dim];
                    let mut weighted = 0.0;
                    for j in 0..seq {
                        let p = prow[j];
                        if p == 0.0 {
                            dp[j] = 0.0;
                            continue;
                        }
                        let m = if drop.is_empty() { 1.0 } else { drop[base + j] };
                        let voff = (b * seq + j) * kw + kvh * head_dim;
                        let mut dot = 0.0;
                        for t in 0..head_dim {
                            dot += grow[t] * vs[voff + t];
                        }
                        if m != 0.0 {
                            let w = p * m;
                            for t in 0..head_dim {
                                dv[voff + t] += w * grow[t];
                            }
                        }
                        dp[j] = dot * m;
                        weighted += p * dp[j];
                    }
                    let qoff = (b * seq + i) * qw + h * head_dim;
                    for j in 0..seq {
                        let p = prow[j];
                        if p == 0.0 {
                            continue;
                        }
                        let ds = p * (dp[j] - weighted) * scale;
                        let koff = (b * seq + j) * kw + kvh * head_dim;
                        for t in 0..head_dim {
                            dq[qoff + t] += ds * ks[koff + t];
                            dk[koff + t] += ds * qs[qoff + t];
                        }
                    }
                }
            }
        }
        for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
            if self.wants(var) {
                accumulate(grads, var, buf.len(), |d| add_into(d, &buf));
            }
        }
    }

    fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].value.numel()
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn dim_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

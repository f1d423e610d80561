//! Reverse-mode tape.
//!
//! Ops append nodes and eagerly compute values. `backward` walks the record
//! in reverse, accumulating gradients only along paths that reach a leaf
//! registered with `requires_grad`. A tape can be differentiated once; a
//! second call without re-recording is an error.

use super::kernels::{matmul_nn, matmul_nn_seq, matmul_nt, matmul_tn};
use super::mask::AttentionMask;
use super::{Element, Result, Tensor, TensorError};

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Loss statistics accumulated in f64 regardless of the tape element type.
#[derive(Debug, Clone, Copy)]
pub struct CeStats {
    /// Sum of per-token negative log-likelihood over mask=1 rows.
    pub sum: f64,
    /// Number of mask=1 rows.
    pub count: usize,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_K: f64 = 0.044715;

enum Op<T> {
    Leaf {
        requires_grad: bool,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    MatMulSeq {
        a: NodeId,
        b: NodeId,
    },
    Transpose {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    AddBias {
        x: NodeId,
        bias: NodeId,
    },
    Scale {
        x: NodeId,
        c: T,
    },
    Gelu {
        x: NodeId,
    },
    SoftmaxRows {
        x: NodeId,
    },
    MaskedSoftmaxRows {
        x: NodeId,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    },
    EmbeddingLookup {
        table: NodeId,
        ids: Vec<u32>,
    },
    MaskedCrossEntropy {
        logits: NodeId,
        targets: Vec<u32>,
        mask: Vec<u8>,
    },
    WeightedSum {
        x: NodeId,
        weights: Tensor<T>,
    },
    SliceBlock {
        x: NodeId,
        r0: usize,
        c0: usize,
    },
    ConcatCols {
        parts: Vec<NodeId>,
    },
    ConcatRows {
        parts: Vec<NodeId>,
    },
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Gradients produced by one `backward` call, indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss w.r.t. the node's value. `None` means no
    /// differentiable path reached the node (treated as exactly zero).
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads[id.0].take()
    }
}

pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
    spent: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            spent: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn shape_err(
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    ) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            lhs_rows: lhs.0,
            lhs_cols: lhs.1,
            rhs_rows: rhs.0,
            rhs_cols: rhs.1,
        }
    }

    /// Register an input tensor. Gradients flow into it only when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(Op::Leaf { requires_grad }, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = self.value(a).shape();
        let (kb, n) = self.value(b).shape();
        if ka != kb {
            return Err(Self::shape_err("matmul", (m, ka), (kb, n)));
        }
        let mut out = Tensor::zeros(m, n);
        matmul_nn(
            self.value(a).data(),
            self.value(b).data(),
            out.data_mut(),
            m,
            ka,
            n,
        );
        Ok(self.push(Op::MatMul { a, b }, out))
    }

    /// Matmul whose per-row reduction is strictly sequential in k, making
    /// each output row invariant to trailing k positions with zero
    /// multipliers. Use it where a masked tail must not perturb bits, like
    /// the attention probability-times-value product.
    pub fn matmul_seq(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = self.value(a).shape();
        let (kb, n) = self.value(b).shape();
        if ka != kb {
            return Err(Self::shape_err("matmul_seq", (m, ka), (kb, n)));
        }
        let mut out = Tensor::zeros(m, n);
        matmul_nn_seq(
            self.value(a).data(),
            self.value(b).data(),
            out.data_mut(),
            m,
            ka,
            n,
        );
        Ok(self.push(Op::MatMulSeq { a, b }, out))
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).transposed();
        self.push(Op::Transpose { x }, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa != sb {
            return Err(Self::shape_err("add", sa, sb));
        }
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += *v;
        }
        Ok(self.push(Op::Add { a, b }, out))
    }

    /// Broadcast a `[1, n]` bias over every row of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(x).shape();
        let sb = self.value(bias).shape();
        if sb != (1, n) {
            return Err(Self::shape_err("add_bias", (m, n), sb));
        }
        let mut out = self.value(x).clone();
        {
            let b = self.nodes[bias.0].value.data().to_vec();
            for i in 0..m {
                for (o, v) in out.row_mut(i).iter_mut().zip(&b) {
                    *o += *v;
                }
            }
        }
        Ok(self.push(Op::AddBias { x, bias }, out))
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> NodeId {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = *v * c;
        }
        self.push(Op::Scale { x, c }, out)
    }

    /// Tanh-form GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = gelu_scalar(*v);
        }
        self.push(Op::Gelu { x }, out)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(x).shape();
        if n == 0 {
            return Err(TensorError::Invalid {
                op: "softmax_rows",
                detail: "rows must be non-empty".into(),
            });
        }
        let mut out = self.value(x).clone();
        for i in 0..m {
            let row = out.row_mut(i);
            let mut mx = row[0];
            for v in row.iter() {
                if *v > mx {
                    mx = *v;
                }
            }
            let mut sum = T::ZERO;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        Ok(self.push(Op::SoftmaxRows { x }, out))
    }

    /// Softmax over the positions a mask row allows; disallowed positions get
    /// probability exactly 0, as if their scores were negative infinity.
    pub fn masked_softmax_rows(&mut self, x: NodeId, mask: &AttentionMask) -> Result<NodeId> {
        let (m, n) = self.value(x).shape();
        if m != n || mask.size() != n {
            return Err(TensorError::Invalid {
                op: "masked_softmax_rows",
                detail: format!(
                    "scores [{m}, {n}] must be square and match mask size {}",
                    mask.size()
                ),
            });
        }
        let mut out = self.value(x).clone();
        for i in 0..m {
            let allow = mask.row(i);
            let row = out.row_mut(i);
            let mut mx: Option<T> = None;
            for (v, a) in row.iter().zip(allow) {
                if *a != 0 && mx.map_or(true, |m| *v > m) {
                    mx = Some(*v);
                }
            }
            // The mask diagonal is always allowed, so mx exists.
            let mx = mx.expect("mask row allows at least the diagonal");
            let mut sum = T::ZERO;
            for (v, a) in row.iter_mut().zip(allow) {
                if *a != 0 {
                    *v = (*v - mx).exp();
                    sum += *v;
                } else {
                    *v = T::ZERO;
                }
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        Ok(self.push(Op::MaskedSoftmaxRows { x }, out))
    }

    /// Row-wise layer norm with learned gain and bias (`[1, n]` each).
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.value(x).shape();
        if self.value(gain).shape() != (1, n) {
            return Err(Self::shape_err("layer_norm", (m, n), self.value(gain).shape()));
        }
        if self.value(bias).shape() != (1, n) {
            return Err(Self::shape_err("layer_norm", (m, n), self.value(bias).shape()));
        }
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            let row = self.value(x).row(i);
            let (mean, rstd) = row_moments(row);
            let g = self.value(gain).data();
            let b = self.value(bias).data();
            let out_row = out.row_mut(i);
            for j in 0..n {
                let xh = (row[j] - mean) * rstd;
                out_row[j] = xh * g[j] + b[j];
            }
        }
        Ok(self.push(Op::LayerNorm { x, gain, bias }, out))
    }

    /// Gather rows of `table` by id. Ids out of range are a recording error.
    pub fn embedding_lookup(&mut self, table: NodeId, ids: &[u32]) -> Result<NodeId> {
        let (v, d) = self.value(table).shape();
        if ids.is_empty() {
            return Err(TensorError::Invalid {
                op: "embedding_lookup",
                detail: "ids must be non-empty".into(),
            });
        }
        if let Some(bad) = ids.iter().find(|id| **id as usize >= v) {
            return Err(TensorError::Invalid {
                op: "embedding_lookup",
                detail: format!("id {bad} out of range for table with {v} rows"),
            });
        }
        let mut out = Tensor::zeros(ids.len(), d);
        for (r, id) in ids.iter().enumerate() {
            let src = self.value(table).row(*id as usize).to_vec();
            out.row_mut(r).copy_from_slice(&src);
        }
        Ok(self.push(
            Op::EmbeddingLookup {
                table,
                ids: ids.to_vec(),
            },
            out,
        ))
    }

    /// Sum of per-row cross-entropy over rows where `mask` is 1.
    ///
    /// Rows with mask 0 are never touched: their targets may be arbitrary and
    /// the returned sum is bit-identical under any perturbation of them. The
    /// node value is the sum narrowed to `T`; `CeStats` carries the f64 sum.
    pub fn masked_cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[u32],
        mask: &[u8],
    ) -> Result<(NodeId, CeStats)> {
        let (m, v) = self.value(logits).shape();
        if targets.len() != m || mask.len() != m {
            return Err(TensorError::Invalid {
                op: "masked_cross_entropy",
                detail: format!(
                    "logits have {m} rows but targets/mask have {}/{}",
                    targets.len(),
                    mask.len()
                ),
            });
        }
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for i in 0..m {
            if mask[i] == 0 {
                continue;
            }
            let t = targets[i] as usize;
            if t >= v {
                return Err(TensorError::Invalid {
                    op: "masked_cross_entropy",
                    detail: format!("target id {t} out of range for {v} classes at row {i}"),
                });
            }
            let row = self.value(logits).row(i);
            let mut mx = row[0];
            for x in row {
                if *x > mx {
                    mx = *x;
                }
            }
            let mut z = 0.0f64;
            for x in row {
                z += (*x - mx).to_f64().exp();
            }
            let lse = mx.to_f64() + z.ln();
            sum += lse - row[t].to_f64();
            count += 1;
        }
        if count == 0 {
            return Err(TensorError::Invalid {
                op: "masked_cross_entropy",
                detail: "mask selects no rows; nothing to supervise".into(),
            });
        }
        let value = Tensor::new(1, 1, vec![T::from_f64(sum)]).expect("scalar");
        let id = self.push(
            Op::MaskedCrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
            },
            value,
        );
        Ok((id, CeStats { sum, count }))
    }

    /// Scalar reduction sum(x .* weights) with constant weights. Non-uniform
    /// weights give gradient checks a non-degenerate upstream signal.
    pub fn weighted_sum(&mut self, x: NodeId, weights: &Tensor<T>) -> Result<NodeId> {
        let sx = self.value(x).shape();
        if weights.shape() != sx {
            return Err(Self::shape_err("weighted_sum", sx, weights.shape()));
        }
        let mut acc = T::ZERO;
        for (a, w) in self.value(x).data().iter().zip(weights.data()) {
            acc += *a * *w;
        }
        let value = Tensor::new(1, 1, vec![acc]).expect("scalar");
        Ok(self.push(
            Op::WeightedSum {
                x,
                weights: weights.clone(),
            },
            value,
        ))
    }

    /// Copy the `rows x cols` block of `x` whose top-left corner is (r0, c0).
    pub fn slice_block(
        &mut self,
        x: NodeId,
        r0: usize,
        rows: usize,
        c0: usize,
        cols: usize,
    ) -> Result<NodeId> {
        let (m, n) = self.value(x).shape();
        if r0 + rows > m || c0 + cols > n {
            return Err(TensorError::Invalid {
                op: "slice_block",
                detail: format!(
                    "block [{r0}..{}, {c0}..{}] out of bounds for [{m}, {n}]",
                    r0 + rows,
                    c0 + cols
                ),
            });
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let src = self.value(x).row(r0 + r)[c0..c0 + cols].to_vec();
            out.row_mut(r).copy_from_slice(&src);
        }
        Ok(self.push(Op::SliceBlock { x, r0, c0 }, out))
    }

    /// Concatenate tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TensorError::Invalid {
                op: "concat_cols",
                detail: "no parts".into(),
            });
        }
        let m = self.value(parts[0]).rows();
        let mut n = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if s.0 != m {
                return Err(Self::shape_err("concat_cols", (m, n), s));
            }
            n += s.1;
        }
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            let mut at = 0;
            for p in parts {
                let pc = self.value(*p).cols();
                let src = self.value(*p).row(i).to_vec();
                out.row_mut(i)[at..at + pc].copy_from_slice(&src);
                at += pc;
            }
        }
        Ok(self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            out,
        ))
    }

    /// Stack tensors with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TensorError::Invalid {
                op: "concat_rows",
                detail: "no parts".into(),
            });
        }
        let n = self.value(parts[0]).cols();
        let mut m = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if s.1 != n {
                return Err(Self::shape_err("concat_rows", (m, n), s));
            }
            m += s.0;
        }
        let mut out = Tensor::zeros(m, n);
        let mut at = 0;
        for p in parts {
            for i in 0..self.value(*p).rows() {
                let src = self.value(*p).row(i).to_vec();
                out.row_mut(at).copy_from_slice(&src);
                at += 1;
            }
        }
        Ok(self.push(
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            out,
        ))
    }

    /// Which nodes lie on a path from a grad-requiring leaf to anywhere.
    fn needs_grad(&self) -> Vec<bool> {
        let mut need = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            need[i] = match &node.op {
                Op::Leaf { requires_grad } => *requires_grad,
                Op::MatMul { a, b } | Op::MatMulSeq { a, b } | Op::Add { a, b } => {
                    need[a.0] || need[b.0]
                }
                Op::AddBias { x, bias } => need[x.0] || need[bias.0],
                Op::Transpose { x }
                | Op::Scale { x, .. }
                | Op::Gelu { x }
                | Op::SoftmaxRows { x }
                | Op::MaskedSoftmaxRows { x }
                | Op::SliceBlock { x, .. } => need[x.0],
                Op::LayerNorm { x, gain, bias } => need[x.0] || need[gain.0] || need[bias.0],
                Op::EmbeddingLookup { table, .. } => need[table.0],
                Op::MaskedCrossEntropy { logits, .. } => need[logits.0],
                Op::WeightedSum { x, .. } => need[x.0],
                Op::ConcatCols { parts } | Op::ConcatRows { parts } => {
                    parts.iter().any(|p| need[p.0])
                }
            };
        }
        need
    }

    /// Reverse sweep from a scalar loss node. Consumes the tape's one
    /// differentiation budget; recording again requires a new tape.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients<T>> {
        if self.spent {
            return Err(TensorError::BackwardSpent);
        }
        self.spent = true;
        if self.value(loss).shape() != (1, 1) {
            return Err(TensorError::Invalid {
                op: "backward",
                detail: format!(
                    "loss must be a [1, 1] scalar, got [{}, {}]",
                    self.value(loss).rows(),
                    self.value(loss).cols()
                ),
            });
        }
        let need = self.needs_grad();
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(1, 1, vec![T::ONE]).expect("scalar"));

        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !need[i] {
                continue;
            }
            let g = grads[i].take().expect("checked above");
            self.backprop_node(i, &g, &need, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(
        grads: &mut [Option<Tensor<T>>],
        id: NodeId,
        shape: (usize, usize),
        add: impl FnOnce(&mut Tensor<T>),
    ) {
        let slot = &mut grads[id.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(shape.0, shape.1));
        }
        add(slot.as_mut().expect("just filled"));
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &Tensor<T>,
        need: &[bool],
        grads: &mut [Option<Tensor<T>>],
    ) {
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            Op::MatMul { a, b } | Op::MatMulSeq { a, b } => {
                let (m, k) = self.value(*a).shape();
                let n = self.value(*b).cols();
                if need[a.0] {
                    let mut da = vec![T::ZERO; m * k];
                    matmul_nt(g.data(), self.value(*b).data(), &mut da, m, n, k);
                    Self::accumulate(grads, *a, (m, k), |t| {
                        for (o, v) in t.data_mut().iter_mut().zip(&da) {
                            *o += *v;
                        }
                    });
                }
                if need[b.0] {
                    let mut db = vec![T::ZERO; k * n];
                    matmul_tn(self.value(*a).data(), g.data(), &mut db, m, k, n);
                    Self::accumulate(grads, *b, (k, n), |t| {
                        for (o, v) in t.data_mut().iter_mut().zip(&db) {
                            *o += *v;
                        }
                    });
                }
            }
            Op::Transpose { x } => {
                if need[x.0] {
                    let gt = g.transposed();
                    Self::accumulate(grads, *x, gt.shape(), |t| {
                        for (o, v) in t.data_mut().iter_mut().zip(gt.data()) {
                            *o += *v;
                        }
                    });
                }
            }
            Op::Add { a, b } => {
                for src in [a, b] {
                    if need[src.0] {
                        Self::accumulate(grads, *src, g.shape(), |t| {
                            for (o, v) in t.data_mut().iter_mut().zip(g.data()) {
                                *o += *v;
                            }
                        });
                    }
                }
            }
            Op::AddBias { x, bias } => {
                if need[x.0] {
                    Self::accumulate(grads, *x, g.shape(), |t| {
                        for (o, v) in t.data_mut().iter_mut().zip(g.data()) {
                            *o += *v;
                        }
                    });
                }
                if need[bias.0] {
                    let (m, n) = g.shape();
                    Self::accumulate(grads, *bias, (1, n), |t| {
                        let row = t.row_mut(0);
                        for i in 0..m {
                            for (o, v) in row.iter_mut().zip(g.row(i)) {
                                *o += *v;
                            }
                        }
                    });
                }
            }
            Op::Scale { x, c } => {
                if need[x.0] {
                    let c = *c;
                    Self::accumulate(grads, *x, g.shape(), |t| {
                        for (o, v) in t.data_mut().iter_mut().zip(g.data()) {
                            *o += *v * c;
                        }
                    });
                }
            }
            Op::Gelu { x } => {
                if need[x.0] {
                    let xv = self.value(*x);
                    let c = T::from_f64(GELU_C);
                    let k3 = T::from_f64(3.0 * GELU_K);
                    let k = T::from_f64(GELU_K);
                    let half = T::from_f64(0.5);
                    Self::accumulate(grads, *x, xv.shape(), |t| {
                        for ((o, v), up) in
                            t.data_mut().iter_mut().zip(xv.data()).zip(g.data())
                        {
                            let x = *v;
                            let u = c * (x + k * x * x * x);
                            let th = u.tanh();
                            let sech2 = T::ONE - th * th;
                            let du = c * (T::ONE + k3 * x * x);
                            let d = half * (T::ONE + th) + half * x * sech2 * du;
                            *o += *up * d;
                        }
                    });
                }
            }
            Op::SoftmaxRows { x } | Op::MaskedSoftmaxRows { x } => {
                if need[x.0] {
                    // Disallowed entries hold probability 0 and therefore get
                    // zero gradient from the same formula.
                    let p = &self.nodes[i].value;
                    let (m, n) = p.shape();
                    Self::accumulate(grads, *x, (m, n), |t| {
                        for r in 0..m {
                            let prow = p.row(r);
                            let grow = g.row(r);
                            let mut dot = T::ZERO;
                            for j in 0..n {
                                dot += prow[j] * grow[j];
                            }
                            let out = t.row_mut(r);
                            for j in 0..n {
                                out[j] += prow[j] * (grow[j] - dot);
                            }
                        }
                    });
                }
            }
            Op::LayerNorm { x, gain, bias } => {
                let xv = self.value(*x);
                let (m, n) = xv.shape();
                let gv = self.value(*gain);
                let inv_n = T::from_f64(1.0 / n as f64);
                if need[x.0] {
                    Self::accumulate(grads, *x, (m, n), |t| {
                        for r in 0..m {
                            let row = xv.row(r);
                            let (mean, rstd) = row_moments(row);
                            let grow = g.row(r);
                            let gd = gv.data();
                            let mut m1 = T::ZERO;
                            let mut m2 = T::ZERO;
                            for j in 0..n {
                                let xh = (row[j] - mean) * rstd;
                                let gy = grow[j] * gd[j];
                                m1 += gy;
                                m2 += gy * xh;
                            }
                            m1 = m1 * inv_n;
                            m2 = m2 * inv_n;
                            let out = t.row_mut(r);
                            for j in 0..n {
                                let xh = (row[j] - mean) * rstd;
                                let gy = grow[j] * gd[j];
                                out[j] += rstd * (gy - m1 - xh * m2);
                            }
                        }
                    });
                }
                if need[gain.0] {
                    Self::accumulate(grads, *gain, (1, n), |t| {
                        let out = t.row_mut(0);
                        for r in 0..m {
                            let row = xv.row(r);
                            let (mean, rstd) = row_moments(row);
                            let grow = g.row(r);
                            for j in 0..n {
                                out[j] += grow[j] * (row[j] - mean) * rstd;
                            }
                        }
                    });
                }
                if need[bias.0] {
                    Self::accumulate(grads, *bias, (1, n), |t| {
                        let out = t.row_mut(0);
                        for r in 0..m {
                            for (o, v) in out.iter_mut().zip(g.row(r)) {
                                *o += *v;
                            }
                        }
                    });
                }
            }
            Op::EmbeddingLookup { table, ids } => {
                if need[table.0] {
                    let shape = self.value(*table).shape();
                    Self::accumulate(grads, *table, shape, |t| {
                        for (r, id) in ids.iter().enumerate() {
                            let dst = t.row_mut(*id as usize);
                            for (o, v) in dst.iter_mut().zip(g.row(r)) {
                                *o += *v;
                            }
                        }
                    });
                }
            }
            Op::MaskedCrossEntropy {
                logits,
                targets,
                mask,
            } => {
                if need[logits.0] {
                    let lv = self.value(*logits);
                    let (m, v) = lv.shape();
                    let gs = g.get(0, 0);
                    Self::accumulate(grads, *logits, (m, v), |t| {
                        for r in 0..m {
                            if mask[r] == 0 {
                                continue;
                            }
                            let row = lv.row(r);
                            let mut mx = row[0];
                            for x in row {
                                if *x > mx {
                                    mx = *x;
                                }
                            }
                            let mut z = T::ZERO;
                            for x in row {
                                z += (*x - mx).exp();
                            }
                            let out = t.row_mut(r);
                            for j in 0..v {
                                let p = (row[j] - mx).exp() / z;
                                out[j] += gs * p;
                            }
                            out[targets[r] as usize] += -gs;
                        }
                    });
                }
            }
            Op::WeightedSum { x, weights } => {
                if need[x.0] {
                    let gs = g.get(0, 0);
                    Self::accumulate(grads, *x, weights.shape(), |t| {
                        for (o, w) in t.data_mut().iter_mut().zip(weights.data()) {
                            *o += gs * *w;
                        }
                    });
                }
            }
            Op::SliceBlock { x, r0, c0 } => {
                if need[x.0] {
                    let shape = self.value(*x).shape();
                    let (rows, cols) = g.shape();
                    let (r0, c0) = (*r0, *c0);
                    Self::accumulate(grads, *x, shape, |t| {
                        for r in 0..rows {
                            let dst = &mut t.row_mut(r0 + r)[c0..c0 + cols];
                            for (o, v) in dst.iter_mut().zip(g.row(r)) {
                                *o += *v;
                            }
                        }
                    });
                }
            }
            Op::ConcatCols { parts } => {
                let m = g.rows();
                let mut at = 0;
                for p in parts {
                    let pc = self.value(*p).cols();
                    if need[p.0] {
                        Self::accumulate(grads, *p, (m, pc), |t| {
                            for r in 0..m {
                                let src = &g.row(r)[at..at + pc];
                                for (o, v) in t.row_mut(r).iter_mut().zip(src) {
                                    *o += *v;
                                }
                            }
                        });
                    }
                    at += pc;
                }
            }
            Op::ConcatRows { parts } => {
                let n = g.cols();
                let mut at = 0;
                for p in parts {
                    let pm = self.value(*p).rows();
                    if need[p.0] {
                        Self::accumulate(grads, *p, (pm, n), |t| {
                            for r in 0..pm {
                                for (o, v) in t.row_mut(r).iter_mut().zip(g.row(at + r)) {
                                    *o += *v;
                                }
                            }
                        });
                    }
                    at += pm;
                }
            }
        }
    }
}

/// Tanh-form GELU of one scalar. The tape op and the cached decoder both go
/// through here so their outputs agree bit for bit.
pub(crate) fn gelu_scalar<T: Element>(v: T) -> T {
    let c = T::from_f64(GELU_C);
    let k = T::from_f64(GELU_K);
    let half = T::from_f64(0.5);
    let u = c * (v + k * v * v * v);
    half * v * (T::ONE + u.tanh())
}

/// Mean and reciprocal standard deviation of one row (population variance,
/// epsilon inside the square root).
pub(crate) fn row_moments<T: Element>(row: &[T]) -> (T, T) {
    let n = T::from_f64(row.len() as f64);
    let mut mean = T::ZERO;
    for v in row {
        mean += *v;
    }
    mean = mean / n;
    let mut var = T::ZERO;
    for v in row {
        let d = *v - mean;
        var += d * d;
    }
    var = var / n;
    let rstd = T::ONE / (var + T::from_f64(LN_EPS)).sqrt();
    (mean, rstd)
}

//! Define-by-run reverse-mode differentiation.
//!
//! Every primitive appends one node holding its output value and whatever it
//! needs for its backward rule. [`Tape::backward`] replays the nodes in reverse.
//! Routing decisions (top-k sets, dropout masks, noise draws) are recorded as
//! constants, so gradients flow through gate values but not through selection.

use rand::Rng as _;

use super::{gemm, sigmoid, softmax_in_place, softplus, GemmArgs, Result, Tensor, TensorError};

const LAYER_NORM_EPS: f64 = 1e-5;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Contiguous block of rows belonging to one graph.
pub type Segment = (usize, usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    MulCol(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Softplus(Var),
    SoftmaxRows(Var),
    MaskedSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows(Var, Vec<usize>),
    ScatterRows(Var, Vec<usize>),
    GatherCol(Var, Vec<usize>, usize),
    SegmentAttention {
        q: Var,
        k: Var,
        v: Var,
        segments: Vec<Segment>,
        heads: usize,
        probs: Vec<f64>,
    },
    SegmentMean(Var, Vec<Segment>),
    NeighborMean(Var, Vec<Segment>),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    ColumnSum(Var),
    LoadProbs {
        clean: Var,
        noisy: Var,
        std: Var,
        z: Vec<f64>,
        threshold_idx: Vec<usize>,
    },
    CvSquared(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward computation. Confined to one thread.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros when `v` did not participate in the loss.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take_or_zeros(&mut self, v: Var) -> Tensor {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// Standard normal CDF.
pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub(crate) fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Indices sorted by descending value, ties resolved toward the lower index.
pub(crate) fn ranked_indices(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

impl Tape {
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("add", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::raw(ta.rows(), ta.cols(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(mismatch("add_row", ta, tr));
        }
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(ta.cols()) {
            for (x, b) in chunk.iter_mut().zip(tr.data()) {
                *x += b;
            }
        }
        let out = Tensor::raw(ta.rows(), ta.cols(), data);
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("mul", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::raw(ta.rows(), ta.cols(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Elementwise product with a constant (dropout masks, noise draws).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape() != c.shape() {
            return Err(mismatch("mul_const", ta, &c));
        }
        let data = ta.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::raw(ta.rows(), ta.cols(), data);
        let rg = self.rg(a);
        Ok(self.push(out, Op::MulConst(a, c), rg))
    }

    /// Inverted dropout: in training each entry is zeroed with probability `p`
    /// and survivors are scaled by `1/(1−p)`; otherwise the identity.
    pub fn dropout(&mut self, a: Var, p: f64, training: bool, rng: &mut crate::Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidParameter(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let t = self.value(a);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mask = Tensor::raw(t.rows(), t.cols(), mask);
        self.mul_const(a, mask)
    }

    /// Scales row `i` of `a` by `col[i]`, with `col` of shape `m × 1`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(mismatch("mul_col", ta, tc));
        }
        let mut data = ta.data().to_vec();
        for (chunk, s) in data.chunks_mut(ta.cols()).zip(tc.data()) {
            for x in chunk {
                *x *= s;
            }
        }
        let out = Tensor::raw(ta.rows(), ta.cols(), data);
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(out, Op::MulCol(a, col), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(a);
        self.push(out, Op::LeakyRelu(a, slope), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        let rg = self.rg(a);
        self.push(out, Op::Softplus(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).softmax_rows();
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    /// Row softmax restricted to the `true` entries of `keep`; the rest are 0.
    ///
    /// Equivalent to replacing dropped logits by a large negative constant
    /// before a plain softmax, but exact regardless of the logit scale.
    pub fn masked_softmax(&mut self, a: Var, keep: &[bool]) -> Result<Var> {
        let ta = self.value(a);
        if keep.len() != ta.len() {
            return Err(TensorError::InvalidParameter(format!(
                "mask length {} for tensor {:?}",
                keep.len(),
                ta.shape()
            )));
        }
        let cols = ta.cols();
        let mut data = vec![0.0; ta.len()];
        for (r, (row, out)) in ta.data().chunks(cols).zip(data.chunks_mut(cols)).enumerate() {
            let mask = &keep[r * cols..(r + 1) * cols];
            if !mask.iter().any(|&m| m) {
                return Err(TensorError::InvalidParameter(format!(
                    "row {r} keeps no entries"
                )));
            }
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for ((o, v), &m) in out.iter_mut().zip(row).zip(mask) {
                if m {
                    *o = (v - max).exp();
                    total += *o;
                }
            }
            for o in out.iter_mut() {
                *o /= total;
            }
        }
        let out = Tensor::raw(ta.rows(), cols, data);
        let rg = self.rg(a);
        Ok(self.push(out, Op::MaskedSoftmax(a), rg))
    }

    /// Row-wise layer normalization with affine `gain`/`bias` rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let n = tx.cols();
        if n < 2 {
            return Err(TensorError::InvalidParameter(
                "layer_norm needs at least 2 columns".into(),
            ));
        }
        if tg.shape() != [1, n] || tb.shape() != [1, n] {
            return Err(mismatch("layer_norm", tx, tg));
        }
        let mut normed = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; tx.rows()];
        let mut out = vec![0.0; tx.len()];
        for r in 0..tx.rows() {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                normed[r * n + c] = h;
                out[r * n + c] = h * tg.data()[c] + tb.data()[c];
            }
        }
        let out = Tensor::raw(tx.rows(), n, out);
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            rg,
        ))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let ta = self.value(a);
        if idx.is_empty() || idx.iter().any(|&i| i >= ta.rows()) {
            return Err(TensorError::InvalidParameter(format!(
                "gather_rows: indices out of range for {:?}",
                ta.shape()
            )));
        }
        let cols = ta.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in &idx {
            data.extend_from_slice(ta.row(i));
        }
        let out = Tensor::raw(idx.len(), cols, data);
        let rg = self.rg(a);
        Ok(self.push(out, Op::GatherRows(a, idx), rg))
    }

    /// Places row `j` of `a` at row `idx[j]` of a zero `rows × cols` matrix,
    /// summing rows that share a destination.
    pub fn scatter_rows(&mut self, a: Var, idx: Vec<usize>, rows: usize) -> Result<Var> {
        let ta = self.value(a);
        if idx.len() != ta.rows() || idx.iter().any(|&i| i >= rows) {
            return Err(TensorError::InvalidParameter(format!(
                "scatter_rows: {} indices for {:?} into {rows} rows",
                idx.len(),
                ta.shape()
            )));
        }
        let cols = ta.cols();
        let mut data = vec![0.0; rows * cols];
        for (j, &i) in idx.iter().enumerate() {
            for (o, v) in data[i * cols..(i + 1) * cols].iter_mut().zip(ta.row(j)) {
                *o += v;
            }
        }
        let out = Tensor::raw(rows, cols, data);
        let rg = self.rg(a);
        Ok(self.push(out, Op::ScatterRows(a, idx), rg))
    }

    /// Column vector `[a[idx[0], col], a[idx[1], col], ...]`.
    pub fn gather_col(&mut self, a: Var, idx: Vec<usize>, col: usize) -> Result<Var> {
        let ta = self.value(a);
        if idx.is_empty() || col >= ta.cols() || idx.iter().any(|&i| i >= ta.rows()) {
            return Err(TensorError::InvalidParameter(format!(
                "gather_col: index out of range for {:?}",
                ta.shape()
            )));
        }
        let data = idx.iter().map(|&i| ta.get(i, col)).collect();
        let out = Tensor::raw(idx.len(), 1, data);
        let rg = self.rg(a);
        Ok(self.push(out, Op::GatherCol(a, idx, col), rg))
    }

    /// Multi-head scaled dot-product attention computed independently inside
    /// each row segment. `q`, `k`, `v` are `R × (heads·d_k)`; head `h` uses
    /// columns `h·d_k .. (h+1)·d_k`. The output concatenates the heads.
    pub fn segment_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        segments: &[Segment],
        heads: usize,
    ) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if tq.shape() != tk.shape() || tq.shape() != tv.shape() {
            return Err(mismatch("segment_attention", tq, tk));
        }
        let d = tq.cols();
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::InvalidParameter(format!(
                "{heads} heads do not divide width {d}"
            )));
        }
        check_segments(segments, tq.rows())?;
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut out = vec![0.0; tq.len()];
        let mut probs = Vec::with_capacity(segments.iter().map(|s| s.1 * s.1 * heads).sum());
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        for &(start, n) in segments {
            for h in 0..heads {
                let off = h * dk;
                let base = probs.len();
                for i in 0..n {
                    let qi = &qd[(start + i) * d + off..(start + i) * d + off + dk];
                    let mut row = vec![0.0; n];
                    for (j, s) in row.iter_mut().enumerate() {
                        let kj = &kd[(start + j) * d + off..(start + j) * d + off + dk];
                        *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    }
                    softmax_in_place(&mut row);
                    probs.extend_from_slice(&row);
                }
                for i in 0..n {
                    let o = &mut out[(start + i) * d + off..(start + i) * d + off + dk];
                    for j in 0..n {
                        let p = probs[base + i * n + j];
                        let vj = &vd[(start + j) * d + off..(start + j) * d + off + dk];
                        for (x, y) in o.iter_mut().zip(vj) {
                            *x += p * y;
                        }
                    }
                }
            }
        }
        let out = Tensor::raw(tq.rows(), d, out);
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            out,
            Op::SegmentAttention {
                q,
                k,
                v,
                segments: segments.to_vec(),
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Attention weights recorded by a [`Tape::segment_attention`] node:
    /// one `n × n` row-major block per (segment, head), segment-major.
    pub fn attention_weights(&self, v: Var) -> Option<(&[f64], &[Segment], usize)> {
        match &self.nodes[v.0].op {
            Op::SegmentAttention {
                probs,
                segments,
                heads,
                ..
            } => Some((probs, segments, *heads)),
            _ => None,
        }
    }

    /// Mean of the rows of each segment: `segments.len() × cols`.
    pub fn segment_mean(&mut self, a: Var, segments: &[Segment]) -> Result<Var> {
        let ta = self.value(a);
        check_segments(segments, ta.rows())?;
        let cols = ta.cols();
        let mut data = vec![0.0; segments.len() * cols];
        for (s, &(start, n)) in segments.iter().enumerate() {
            let o = &mut data[s * cols..(s + 1) * cols];
            for r in start..start + n {
                for (x, y) in o.iter_mut().zip(ta.row(r)) {
                    *x += y;
                }
            }
            for x in o.iter_mut() {
                *x /= n as f64;
            }
        }
        let out = Tensor::raw(segments.len(), cols, data);
        let rg = self.rg(a);
        Ok(self.push(out, Op::SegmentMean(a, segments.to_vec()), rg))
    }

    /// Each row replaced by the mean of the other rows of its segment
    /// (neighbor mean on a complete graph without self loops).
    pub fn neighbor_mean(&mut self, a: Var, segments: &[Segment]) -> Result<Var> {
        let ta = self.value(a);
        check_segments(segments, ta.rows())?;
        if segments.iter().any(|s| s.1 < 2) {
            return Err(TensorError::InvalidParameter(
                "neighbor_mean needs segments of at least 2 rows".into(),
            ));
        }
        let cols = ta.cols();
        let mut data = vec![0.0; ta.len()];
        for &(start, n) in segments {
            let mut total = vec![0.0; cols];
            for r in start..start + n {
                for (t, y) in total.iter_mut().zip(ta.row(r)) {
                    *t += y;
                }
            }
            let denom = (n - 1) as f64;
            for r in start..start + n {
                for c in 0..cols {
                    data[r * cols + c] = (total[c] - ta.get(r, c)) / denom;
                }
            }
        }
        let out = Tensor::raw(ta.rows(), cols, data);
        let rg = self.rg(a);
        Ok(self.push(out, Op::NeighborMean(a, segments.to_vec()), rg))
    }

    /// Mean cross-entropy of row-wise logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        if labels.len() != tl.rows() || labels.iter().any(|&l| l >= tl.cols()) {
            return Err(TensorError::InvalidParameter(format!(
                "cross_entropy: {} labels for logits {:?}",
                labels.len(),
                tl.shape()
            )));
        }
        let probs = tl.softmax_rows();
        let mut loss = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            let row = tl.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[l];
        }
        loss /= labels.len() as f64;
        let out = Tensor::raw(1, 1, vec![loss]);
        let rg = self.rg(logits);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs: probs.into_data(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::raw(1, 1, vec![self.value(a).sum()]);
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    /// Sum over rows: `R × n` to `1 × n`.
    pub fn column_sum(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let cols = ta.cols();
        let mut data = vec![0.0; cols];
        for row in ta.data().chunks(cols) {
            for (o, v) in data.iter_mut().zip(row) {
                *o += v;
            }
        }
        let out = Tensor::raw(1, cols, data);
        let rg = self.rg(a);
        self.push(out, Op::ColumnSum(a), rg)
    }

    /// Probability that each expert stays in (or enters) the top-k set when
    /// only its own noise is redrawn:
    /// `Φ((clean_i − kth_excluding(noisy, k, i)) / std_i)`.
    ///
    /// Requires `1 ≤ k < n`.
    pub fn load_probs(&mut self, clean: Var, noisy: Var, std: Var, k: usize) -> Result<Var> {
        let (tc, tn, ts) = (self.value(clean), self.value(noisy), self.value(std));
        if tc.shape() != tn.shape() || tc.shape() != ts.shape() {
            return Err(mismatch("load_probs", tc, tn));
        }
        let n = tc.cols();
        if k == 0 || k >= n {
            return Err(TensorError::InvalidParameter(format!(
                "load_probs needs 1 <= k < n, got k={k}, n={n}"
            )));
        }
        let mut z = vec![0.0; tc.len()];
        let mut threshold_idx = vec![0; tc.len()];
        let mut out = vec![0.0; tc.len()];
        for r in 0..tc.rows() {
            let h = tn.row(r);
            let ranked = ranked_indices(h);
            let mut in_top = vec![false; n];
            for &i in &ranked[..k] {
                in_top[i] = true;
            }
            for i in 0..n {
                let t = if in_top[i] { ranked[k] } else { ranked[k - 1] };
                let s = ts.get(r, i);
                let zi = (tc.get(r, i) - h[t]) / s;
                z[r * n + i] = zi;
                threshold_idx[r * n + i] = t;
                out[r * n + i] = normal_cdf(zi);
            }
        }
        let out = Tensor::raw(tc.rows(), n, out);
        out.ensure_finite("load_probs")?;
        let rg = self.rg(clean) || self.rg(noisy) || self.rg(std);
        Ok(self.push(
            out,
            Op::LoadProbs {
                clean,
                noisy,
                std,
                z,
                threshold_idx,
            },
            rg,
        ))
    }

    /// Squared coefficient of variation (population) of a `1 × n` row.
    /// Returns 0 with zero gradient when the mean is 0.
    pub fn cv_squared(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let n = ta.len() as f64;
        let mean = ta.sum() / n;
        let value = if mean == 0.0 {
            0.0
        } else {
            let var = ta.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            var / (mean * mean)
        };
        let out = Tensor::raw(1, 1, vec![value]);
        let rg = self.rg(a);
        self.push(out, Op::CvSquared(a), rg)
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(TensorError::InvalidParameter(format!(
                "backward from non-scalar {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::raw(1, 1, vec![1.0]));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| (n.value.rows(), n.value.cols()))
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_with(
        &self,
        grads: &mut [Option<Tensor>],
        v: Var,
        f: impl FnOnce(&mut [f64]),
    ) {
        if !self.rg(v) {
            return;
        }
        let t = self.value(v);
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(t.rows(), t.cols()));
        f(slot.data_mut());
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let (rows, cols) = (g.rows(), g.cols());
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                // grad_a = g · bᵀ ; grad_b = aᵀ · g
                self.accumulate_with(grads, *a, |buf| {
                    gemm(
                        GemmArgs {
                            m,
                            k: n,
                            n: k,
                            a: gd,
                            a_trans: false,
                            b: tb.data(),
                            b_trans: true,
                        },
                        buf,
                        1.0,
                    )
                });
                self.accumulate_with(grads, *b, |buf| {
                    gemm(
                        GemmArgs {
                            m: k,
                            k: m,
                            n,
                            a: ta.data(),
                            a_trans: true,
                            b: gd,
                            b_trans: false,
                        },
                        buf,
                        1.0,
                    )
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate_with(grads, *row, |buf| {
                    for chunk in gd.chunks(cols) {
                        for (o, x) in buf.iter_mut().zip(chunk) {
                            *o += x;
                        }
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.accumulate_with(grads, *a, |buf| {
                    for ((o, x), y) in buf.iter_mut().zip(gd).zip(tb.data()) {
                        *o += x * y;
                    }
                });
                self.accumulate_with(grads, *b, |buf| {
                    for ((o, x), y) in buf.iter_mut().zip(gd).zip(ta.data()) {
                        *o += x * y;
                    }
                });
            }
            Op::MulConst(a, c) => {
                self.accumulate_with(grads, *a, |buf| {
                    for ((o, x), y) in buf.iter_mut().zip(gd).zip(c.data()) {
                        *o += x * y;
                    }
                });
            }
            Op::MulCol(a, col) => {
                let (ta, tc) = (self.value(*a), self.value(*col));
                self.accumulate_with(grads, *a, |buf| {
                    for (r, s) in tc.data().iter().enumerate() {
                        for c in 0..cols {
                            buf[r * cols + c] += gd[r * cols + c] * s;
                        }
                    }
                });
                self.accumulate_with(grads, *col, |buf| {
                    for (r, o) in buf.iter_mut().enumerate() {
                        *o += gd[r * cols..(r + 1) * cols]
                            .iter()
                            .zip(ta.row(r))
                            .map(|(x, y)| x * y)
                            .sum::<f64>();
                    }
                });
            }
            Op::Scale(a, s) => {
                self.accumulate(grads, *a, g.map(|x| x * s));
            }
            Op::Relu(a) => {
                let ta = self.value(*a);
                self.accumulate_with(grads, *a, |buf| {
                    for ((o, x), v) in buf.iter_mut().zip(gd).zip(ta.data()) {
                        if *v > 0.0 {
                            *o += x;
                        }
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let ta = self.value(*a);
                self.accumulate_with(grads, *a, |buf| {
                    for ((o, x), v) in buf.iter_mut().zip(gd).zip(ta.data()) {
                        *o += if *v > 0.0 { *x } else { slope * x };
                    }
                });
            }
            Op::Softplus(a) => {
                let ta = self.value(*a);
                self.accumulate_with(grads, *a, |buf| {
                    for ((o, x), v) in buf.iter_mut().zip(gd).zip(ta.data()) {
                        *o += x * sigmoid(*v);
                    }
                });
            }
            Op::SoftmaxRows(a) | Op::MaskedSoftmax(a) => {
                // Dropped entries have p = 0, so the same rule covers the mask.
                let p = node.value.data();
                self.accumulate_with(grads, *a, |buf| {
                    for r in 0..rows {
                        let pr = &p[r * cols..(r + 1) * cols];
                        let gr = &gd[r * cols..(r + 1) * cols];
                        let dot: f64 = pr.iter().zip(gr).map(|(x, y)| x * y).sum();
                        for c in 0..cols {
                            buf[r * cols + c] += pr[c] * (gr[c] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let tg = self.value(*gain);
                let n = cols as f64;
                self.accumulate_with(grads, *x, |buf| {
                    for r in 0..rows {
                        let gr = &gd[r * cols..(r + 1) * cols];
                        let hr = &normed[r * cols..(r + 1) * cols];
                        let dh: Vec<f64> = gr.iter().zip(tg.data()).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / n;
                        let mean_dhh = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for c in 0..cols {
                            buf[r * cols + c] +=
                                inv_std[r] * (dh[c] - mean_dh - hr[c] * mean_dhh);
                        }
                    }
                });
                self.accumulate_with(grads, *gain, |buf| {
                    for r in 0..rows {
                        for c in 0..cols {
                            buf[c] += gd[r * cols + c] * normed[r * cols + c];
                        }
                    }
                });
                self.accumulate_with(grads, *bias, |buf| {
                    for chunk in gd.chunks(cols) {
                        for (o, v) in buf.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                self.accumulate_with(grads, *a, |buf| {
                    for (j, &i) in idx.iter().enumerate() {
                        for c in 0..cols {
                            buf[i * cols + c] += gd[j * cols + c];
                        }
                    }
                });
            }
            Op::ScatterRows(a, idx) => {
                self.accumulate_with(grads, *a, |buf| {
                    for (j, &i) in idx.iter().enumerate() {
                        for c in 0..cols {
                            buf[j * cols + c] += gd[i * cols + c];
                        }
                    }
                });
            }
            Op::GatherCol(a, idx, col) => {
                let ac = self.value(*a).cols();
                self.accumulate_with(grads, *a, |buf| {
                    for (j, &i) in idx.iter().enumerate() {
                        buf[i * ac + col] += gd[j];
                    }
                });
            }
            Op::SegmentAttention {
                q,
                k,
                v,
                segments,
                heads,
                probs,
            } => self.attention_backward(gd, *q, *k, *v, segments, *heads, probs, grads),
            Op::SegmentMean(a, segments) => {
                self.accumulate_with(grads, *a, |buf| {
                    for (s, &(start, n)) in segments.iter().enumerate() {
                        for r in start..start + n {
                            for c in 0..cols {
                                buf[r * cols + c] += gd[s * cols + c] / n as f64;
                            }
                        }
                    }
                });
            }
            Op::NeighborMean(a, segments) => {
                self.accumulate_with(grads, *a, |buf| {
                    for &(start, n) in segments {
                        let denom = (n - 1) as f64;
                        let mut total = vec![0.0; cols];
                        for r in start..start + n {
                            for (t, x) in total.iter_mut().zip(&gd[r * cols..(r + 1) * cols]) {
                                *t += x;
                            }
                        }
                        for r in start..start + n {
                            for c in 0..cols {
                                buf[r * cols + c] += (total[c] - gd[r * cols + c]) / denom;
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = self.value(*logits).cols();
                let scale = gd[0] / labels.len() as f64;
                self.accumulate_with(grads, *logits, |buf| {
                    for (r, &l) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == l { 1.0 } else { 0.0 };
                            buf[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let s = gd[0];
                self.accumulate_with(grads, *a, |buf| buf.iter_mut().for_each(|o| *o += s));
            }
            Op::ColumnSum(a) => {
                self.accumulate_with(grads, *a, |buf| {
                    for chunk in buf.chunks_mut(cols) {
                        for (o, x) in chunk.iter_mut().zip(gd) {
                            *o += x;
                        }
                    }
                });
            }
            Op::LoadProbs {
                clean,
                noisy,
                std,
                z,
                threshold_idx,
            } => {
                let ts = self.value(*std);
                let dz: Vec<f64> = (0..gd.len())
                    .map(|i| gd[i] * normal_pdf(z[i]) / ts.data()[i])
                    .collect();
                self.accumulate_with(grads, *clean, |buf| {
                    for (o, d) in buf.iter_mut().zip(&dz) {
                        *o += d;
                    }
                });
                self.accumulate_with(grads, *noisy, |buf| {
                    for (i, d) in dz.iter().enumerate() {
                        let r = i / cols;
                        buf[r * cols + threshold_idx[i]] -= d;
                    }
                });
                self.accumulate_with(grads, *std, |buf| {
                    for (i, (o, d)) in buf.iter_mut().zip(&dz).enumerate() {
                        *o -= d * z[i];
                    }
                });
            }
            Op::CvSquared(a) => {
                let ta = self.value(*a);
                let n = ta.len() as f64;
                let mean = ta.sum() / n;
                if mean != 0.0 {
                    let var = ta.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let s = gd[0] * 2.0 / (n * mean * mean);
                    self.accumulate_with(grads, *a, |buf| {
                        for (o, l) in buf.iter_mut().zip(ta.data()) {
                            *o += s * ((l - mean) - var / mean);
                        }
                    });
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        gd: &[f64],
        q: Var,
        k: Var,
        v: Var,
        segments: &[Segment],
        heads: usize,
        probs: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let d = tq.cols();
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        let mut dq = vec![0.0; tq.len()];
        let mut dkk = vec![0.0; tq.len()];
        let mut dv = vec![0.0; tq.len()];
        let mut base = 0;
        for &(start, n) in segments {
            for h in 0..heads {
                let off = h * dk;
                let p = &probs[base..base + n * n];
                base += n * n;
                let at = |r: usize| (start + r) * d + off;
                // dP = dO · Vᵀ, dV = Pᵀ · dO
                let mut dp = vec![0.0; n * n];
                for i in 0..n {
                    let go = &gd[at(i)..at(i) + dk];
                    for j in 0..n {
                        let vj = &vd[at(j)..at(j) + dk];
                        dp[i * n + j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                        let pij = p[i * n + j];
                        for (o, x) in dv[at(j)..at(j) + dk].iter_mut().zip(go) {
                            *o += pij * x;
                        }
                    }
                }
                for i in 0..n {
                    let row_p = &p[i * n..(i + 1) * n];
                    let row_dp = &dp[i * n..(i + 1) * n];
                    let dot: f64 = row_p.iter().zip(row_dp).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        let ds = row_p[j] * (row_dp[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for c in 0..dk {
                            dq[at(i) + c] += ds * kd[at(j) + c];
                            dkk[at(j) + c] += ds * qd[at(i) + c];
                        }
                    }
                }
            }
        }
        let (r, c) = (tq.rows(), tq.cols());
        self.accumulate(grads, q, Tensor::raw(r, c, dq));
        self.accumulate(grads, k, Tensor::raw(r, c, dkk));
        self.accumulate(grads, v, Tensor::raw(r, c, dv));
    }
}

fn check_segments(segments: &[Segment], rows: usize) -> Result<()> {
    let mut next = 0;
    for &(start, n) in segments {
        if start != next || n == 0 {
            return Err(TensorError::InvalidParameter(format!(
                "segments must tile the rows contiguously (at {start}, len {n})"
            )));
        }
        next += n;
    }
    if next != rows {
        return Err(TensorError::InvalidParameter(format!(
            "segments cover {next} rows of {rows}"
        )));
    }
    Ok(())
}

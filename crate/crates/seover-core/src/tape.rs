//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! Each forward pass builds a fresh tape: operations append nodes in
//! execution order, so the tape is topologically sorted by construction
//! and `backward` is a single reverse sweep. Tensors that require
//! gradients are bound as leaves; everything downstream of them gets a
//! gradient buffer during the sweep.
//!
//! The tape is single-threaded. Parallelism happens one level up, across
//! independent dialogues, each with its own tape.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{matmul_raw, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul {
        a: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    AddBias {
        a: usize,
        bias: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        a: usize,
        factor: f64,
    },
    Softmax {
        a: usize,
        axis: usize,
    },
    LayerNorm {
        a: usize,
        gain: usize,
        bias: usize,
        eps: f64,
    },
    Concat {
        a: usize,
        b: usize,
    },
    ConcatRows {
        parts: Vec<usize>,
    },
    Slice {
        a: usize,
        start: usize,
        len: usize,
    },
    Transpose {
        a: usize,
    },
    GatherRows {
        table: usize,
        ids: Vec<usize>,
    },
    Tanh {
        a: usize,
    },
    Sigmoid {
        a: usize,
    },
    Relu {
        a: usize,
    },
    SumAll {
        a: usize,
    },
    MeanAll {
        a: usize,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Ordered record of executed differentiable operations.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check_var(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::DetachedLoss);
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            grad: None,
        });
        Var { tape: self.id, idx }
    }

    fn needs(&self, idx: usize) -> bool {
        self.nodes[idx].needs_grad
    }

    /// Bind a tensor as a leaf. Gradients are accumulated for it iff
    /// `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Bind a constant (never differentiated) leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.idx].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.idx].value.shape()
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, as a tensor of the
    /// same shape.
    pub fn grad(&self, v: Var) -> Result<Tensor> {
        let idx = self.check_var(v)?;
        let node = &self.nodes[idx];
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone()),
            None => Err(Error::MissingGradient),
        }
    }

    // ── forward ops ──────────────────────────────────────────────────

    /// 2-D matrix product: a is m×k, b is k×n.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ai = self.check_var(a)?;
        let bi = self.check_var(b)?;
        let (ash, bsh) = (self.nodes[ai].value.shape(), self.nodes[bi].value.shape());
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ash.to_vec(),
                rhs: bsh.to_vec(),
            });
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let out = matmul_raw(
            self.nodes[ai].value.values(),
            self.nodes[bi].value.values(),
            m,
            k,
            n,
        );
        let needs = self.needs(ai) || self.needs(bi);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::Matmul { a: ai, b: bi },
            needs,
        ))
    }

    /// Element-wise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let ai = self.check_var(a)?;
        let bi = self.check_var(b)?;
        if self.nodes[ai].value.shape() != self.nodes[bi].value.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.nodes[ai].value.shape().to_vec(),
                rhs: self.nodes[bi].value.shape().to_vec(),
            });
        }
        let out: Vec<f64> = self.nodes[ai]
            .value
            .values()
            .iter()
            .zip(self.nodes[bi].value.values())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[ai].value.shape().to_vec();
        let needs = self.needs(ai) || self.needs(bi);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add { a: ai, b: bi }, needs))
    }

    /// Row-wise bias addition: every row of `a` gets `bias` added. This is
    /// the only broadcast the tape supports besides scalar scaling.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let ai = self.check_var(a)?;
        let bi = self.check_var(bias)?;
        let (rows, cols) = self.nodes[ai].value.as_rows();
        let bsh = self.nodes[bi].value.shape();
        if bsh.len() != 1 || bsh[0] != cols {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: self.nodes[ai].value.shape().to_vec(),
                rhs: bsh.to_vec(),
            });
        }
        let bvals = self.nodes[bi].value.values();
        let mut out = self.nodes[ai].value.values().to_vec();
        for r in 0..rows {
            for c in 0..cols {
                out[r * cols + c] += bvals[c];
            }
        }
        let shape = self.nodes[ai].value.shape().to_vec();
        let needs = self.needs(ai) || self.needs(bi);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::AddBias { a: ai, bias: bi },
            needs,
        ))
    }

    /// Element-wise product of two same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ai = self.check_var(a)?;
        let bi = self.check_var(b)?;
        if self.nodes[ai].value.shape() != self.nodes[bi].value.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: self.nodes[ai].value.shape().to_vec(),
                rhs: self.nodes[bi].value.shape().to_vec(),
            });
        }
        let out: Vec<f64> = self.nodes[ai]
            .value
            .values()
            .iter()
            .zip(self.nodes[bi].value.values())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[ai].value.shape().to_vec();
        let needs = self.needs(ai) || self.needs(bi);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul { a: ai, b: bi }, needs))
    }

    /// Scalar-tensor product.
    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ai = self.check_var(a)?;
        let out: Vec<f64> = self.nodes[ai]
            .value
            .values()
            .iter()
            .map(|x| x * factor)
            .collect();
        let shape = self.nodes[ai].value.shape().to_vec();
        let needs = self.needs(ai);
        Ok(self.push(Tensor::new(shape, out)?, Op::Scale { a: ai, factor }, needs))
    }

    /// Softmax along `axis`, computed with max-subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ai = self.check_var(a)?;
        let shape = self.nodes[ai].value.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidShape {
                op: "softmax",
                shape,
                msg: format!("axis {axis} out of range"),
            });
        }
        let mut out = self.nodes[ai].value.values().to_vec();
        for_each_lane(&shape, axis, |lane| softmax_lane_in_place(&mut out, lane));
        let needs = self.needs(ai);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { a: ai, axis }, needs))
    }

    /// Per-row normalization to zero mean / unit variance over the last
    /// axis, then affine: `gain * xhat + bias`. `eps` pads the variance
    /// inside the square root.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let ai = self.check_var(a)?;
        let gi = self.check_var(gain)?;
        let bi = self.check_var(bias)?;
        let (rows, cols) = self.nodes[ai].value.as_rows();
        for (name, pidx) in [("gain", gi), ("bias", bi)] {
            let psh = self.nodes[pidx].value.shape();
            if psh.len() != 1 || psh[0] != cols {
                return Err(Error::ShapeMismatch {
                    op: if name == "gain" {
                        "layer_norm gain"
                    } else {
                        "layer_norm bias"
                    },
                    lhs: self.nodes[ai].value.shape().to_vec(),
                    rhs: psh.to_vec(),
                });
            }
        }
        let x = self.nodes[ai].value.values();
        let g = self.nodes[gi].value.values();
        let b = self.nodes[bi].value.values();
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let (xhat, _) = normalize_row(row, eps);
            for c in 0..cols {
                out[r * cols + c] = g[c] * xhat[c] + b[c];
            }
        }
        let shape = self.nodes[ai].value.shape().to_vec();
        let needs = self.needs(ai) || self.needs(gi) || self.needs(bi);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                a: ai,
                gain: gi,
                bias: bi,
                eps,
            },
            needs,
        ))
    }

    /// Concatenate along the last axis. All other extents must agree; the
    /// gradient splits back exactly.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let ai = self.check_var(a)?;
        let bi = self.check_var(b)?;
        let ash = self.nodes[ai].value.shape().to_vec();
        let bsh = self.nodes[bi].value.shape().to_vec();
        let mismatch = ash.len() != bsh.len()
            || ash.is_empty()
            || ash[..ash.len() - 1] != bsh[..bsh.len() - 1];
        if mismatch {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: ash,
                rhs: bsh,
            });
        }
        let (rows, p) = self.nodes[ai].value.as_rows();
        let (_, r) = self.nodes[bi].value.as_rows();
        let av = self.nodes[ai].value.values();
        let bv = self.nodes[bi].value.values();
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for row in 0..rows {
            out.extend_from_slice(&av[row * p..(row + 1) * p]);
            out.extend_from_slice(&bv[row * r..(row + 1) * r]);
        }
        let mut shape = ash;
        *shape.last_mut().unwrap() = p + r;
        let needs = self.needs(ai) || self.needs(bi);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { a: ai, b: bi }, needs))
    }

    /// Stack same-width parts as rows of one matrix. Each part may be a
    /// row vector or a matrix; widths must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput {
                msg: "concat_rows of zero parts".into(),
            });
        }
        let mut idxs = Vec::with_capacity(parts.len());
        for p in parts {
            idxs.push(self.check_var(*p)?);
        }
        let (_, width) = self.nodes[idxs[0]].value.as_rows();
        let mut out = Vec::new();
        let mut total_rows = 0;
        let mut needs = false;
        for &i in &idxs {
            let (r, w) = self.nodes[i].value.as_rows();
            if w != width {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vec![total_rows, width],
                    rhs: self.nodes[i].value.shape().to_vec(),
                });
            }
            out.extend_from_slice(self.nodes[i].value.values());
            total_rows += r;
            needs |= self.needs(i);
        }
        Ok(self.push(
            Tensor::new(vec![total_rows, width], out)?,
            Op::ConcatRows { parts: idxs },
            needs,
        ))
    }

    /// Slice `len` entries starting at `start` along the last axis.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ai = self.check_var(a)?;
        let (rows, cols) = self.nodes[ai].value.as_rows();
        if start + len > cols {
            return Err(Error::InvalidShape {
                op: "slice",
                shape: self.nodes[ai].value.shape().to_vec(),
                msg: format!("slice {start}..{} exceeds width {cols}", start + len),
            });
        }
        let av = self.nodes[ai].value.values();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&av[r * cols + start..r * cols + start + len]);
        }
        let mut shape = self.nodes[ai].value.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let needs = self.needs(ai);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Slice { a: ai, start, len },
            needs,
        ))
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ai = self.check_var(a)?;
        let sh = self.nodes[ai].value.shape();
        if sh.len() != 2 {
            return Err(Error::InvalidShape {
                op: "transpose",
                shape: sh.to_vec(),
                msg: "expected a 2-D tensor".into(),
            });
        }
        let (m, n) = (sh[0], sh[1]);
        let av = self.nodes[ai].value.values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let needs = self.needs(ai);
        Ok(self.push(
            Tensor::new(vec![n, m], out)?,
            Op::Transpose { a: ai },
            needs,
        ))
    }

    /// Row lookup into a 2-D table (embedding). Gradients scatter-add back
    /// into the selected rows.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let ti = self.check_var(table)?;
        let sh = self.nodes[ti].value.shape();
        if sh.len() != 2 {
            return Err(Error::InvalidShape {
                op: "gather_rows",
                shape: sh.to_vec(),
                msg: "expected a 2-D table".into(),
            });
        }
        let (rows, cols) = (sh[0], sh[1]);
        for &id in ids {
            if id >= rows {
                return Err(Error::TokenIdOutOfRange {
                    id: id as u32,
                    vocab_size: rows,
                });
            }
        }
        let tv = self.nodes[ti].value.values();
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            out.extend_from_slice(&tv[id * cols..(id + 1) * cols]);
        }
        let needs = self.needs(ti);
        Ok(self.push(
            Tensor::new(vec![ids.len(), cols], out)?,
            Op::GatherRows {
                table: ti,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ai = self.check_var(a)?;
        let out: Vec<f64> = self.nodes[ai]
            .value
            .values()
            .iter()
            .map(|x| x.tanh())
            .collect();
        let shape = self.nodes[ai].value.shape().to_vec();
        let needs = self.needs(ai);
        Ok(self.push(Tensor::new(shape, out)?, Op::Tanh { a: ai }, needs))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ai = self.check_var(a)?;
        let out: Vec<f64> = self.nodes[ai]
            .value
            .values()
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let shape = self.nodes[ai].value.shape().to_vec();
        let needs = self.needs(ai);
        Ok(self.push(Tensor::new(shape, out)?, Op::Sigmoid { a: ai }, needs))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ai = self.check_var(a)?;
        let out: Vec<f64> = self.nodes[ai]
            .value
            .values()
            .iter()
            .map(|x| x.max(0.0))
            .collect();
        let shape = self.nodes[ai].value.shape().to_vec();
        let needs = self.needs(ai);
        Ok(self.push(Tensor::new(shape, out)?, Op::Relu { a: ai }, needs))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let ai = self.check_var(a)?;
        let s: f64 = self.nodes[ai].value.values().iter().sum();
        let needs = self.needs(ai);
        Ok(self.push(Tensor::scalar(s), Op::SumAll { a: ai }, needs))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let ai = self.check_var(a)?;
        let n = self.nodes[ai].value.numel().max(1) as f64;
        let s: f64 = self.nodes[ai].value.values().iter().sum();
        let needs = self.needs(ai);
        Ok(self.push(Tensor::scalar(s / n), Op::MeanAll { a: ai }, needs))
    }

    /// Mean over rows of `-log softmax(logits)[label]`. Logits may be a
    /// single row vector or an n×c matrix.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let li = self.check_var(logits)?;
        let (rows, cols) = self.nodes[li].value.as_rows();
        if labels.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: vec![rows, cols],
                rhs: vec![labels.len()],
            });
        }
        for &l in labels {
            if l >= cols {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    n_classes: cols,
                });
            }
        }
        let lv = self.nodes[li].value.values();
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &lv[r * cols..(r + 1) * cols];
            total -= log_softmax_at(row, label);
        }
        let needs = self.needs(li);
        Ok(self.push(
            Tensor::scalar(total / rows as f64),
            Op::CrossEntropy {
                logits: li,
                labels: labels.to_vec(),
            },
            needs,
        ))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse-topological gradient accumulation from a scalar loss.
    /// Leaf gradients are readable through [`Tape::grad`] afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.check_var(loss)?;
        if !self.nodes[li].value.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: self.nodes[li].value.shape().to_vec(),
            });
        }
        self.nodes[li].grad = Some(vec![1.0]);
        for idx in (0..=li).rev() {
            if self.nodes[idx].grad.is_none() || !self.nodes[idx].needs_grad {
                continue;
            }
            let grad = self.nodes[idx].grad.clone().unwrap();
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (m, k) = {
                        let s = self.nodes[a].value.shape();
                        (s[0], s[1])
                    };
                    let n = self.nodes[b].value.shape()[1];
                    if self.needs(a) {
                        // dA = G * B^T
                        let bv = self.nodes[b].value.values();
                        let mut bt = vec![0.0; n * k];
                        for i in 0..k {
                            for j in 0..n {
                                bt[j * k + i] = bv[i * n + j];
                            }
                        }
                        let da = matmul_raw(&grad, &bt, m, n, k);
                        self.accumulate(a, &da);
                    }
                    if self.needs(b) {
                        // dB = A^T * G
                        let av = self.nodes[a].value.values();
                        let mut at = vec![0.0; k * m];
                        for i in 0..m {
                            for j in 0..k {
                                at[j * m + i] = av[i * k + j];
                            }
                        }
                        let db = matmul_raw(&at, &grad, k, m, n);
                        self.accumulate(b, &db);
                    }
                }
                Op::Add { a, b } => {
                    if self.needs(a) {
                        self.accumulate(a, &grad);
                    }
                    if self.needs(b) {
                        self.accumulate(b, &grad);
                    }
                }
                Op::AddBias { a, bias } => {
                    if self.needs(a) {
                        self.accumulate(a, &grad);
                    }
                    if self.needs(bias) {
                        let (rows, cols) = self.nodes[a].value.as_rows();
                        let mut db = vec![0.0; cols];
                        for r in 0..rows {
                            for c in 0..cols {
                                db[c] += grad[r * cols + c];
                            }
                        }
                        self.accumulate(bias, &db);
                    }
                }
                Op::Mul { a, b } => {
                    if self.needs(a) {
                        let da: Vec<f64> = grad
                            .iter()
                            .zip(self.nodes[b].value.values())
                            .map(|(g, y)| g * y)
                            .collect();
                        self.accumulate(a, &da);
                    }
                    if self.needs(b) {
                        let db: Vec<f64> = grad
                            .iter()
                            .zip(self.nodes[a].value.values())
                            .map(|(g, x)| g * x)
                            .collect();
                        self.accumulate(b, &db);
                    }
                }
                Op::Scale { a, factor } => {
                    if self.needs(a) {
                        let da: Vec<f64> = grad.iter().map(|g| g * factor).collect();
                        self.accumulate(a, &da);
                    }
                }
                Op::Softmax { a, axis } => {
                    if self.needs(a) {
                        let s = self.nodes[idx].value.values().to_vec();
                        let shape = self.nodes[idx].value.shape().to_vec();
                        let mut da = vec![0.0; s.len()];
                        for_each_lane(&shape, axis, |lane| {
                            let dot: f64 = lane.iter().map(|&i| grad[i] * s[i]).sum();
                            for &i in lane {
                                da[i] = s[i] * (grad[i] - dot);
                            }
                        });
                        self.accumulate(a, &da);
                    }
                }
                Op::LayerNorm { a, gain, bias, eps } => {
                    let (rows, cols) = self.nodes[a].value.as_rows();
                    let x = self.nodes[a].value.values().to_vec();
                    let g = self.nodes[gain].value.values().to_vec();
                    let mut da = vec![0.0; x.len()];
                    let mut dgain = vec![0.0; cols];
                    let mut dbias = vec![0.0; cols];
                    for r in 0..rows {
                        let row = &x[r * cols..(r + 1) * cols];
                        let (xhat, inv_std) = normalize_row(row, eps);
                        let grow = &grad[r * cols..(r + 1) * cols];
                        let mut gg_mean = 0.0;
                        let mut ggx_mean = 0.0;
                        for c in 0..cols {
                            let gg = grow[c] * g[c];
                            gg_mean += gg;
                            ggx_mean += gg * xhat[c];
                            dgain[c] += grow[c] * xhat[c];
                            dbias[c] += grow[c];
                        }
                        gg_mean /= cols as f64;
                        ggx_mean /= cols as f64;
                        for c in 0..cols {
                            let gg = grow[c] * g[c];
                            da[r * cols + c] = inv_std * (gg - gg_mean - xhat[c] * ggx_mean);
                        }
                    }
                    if self.needs(a) {
                        self.accumulate(a, &da);
                    }
                    if self.needs(gain) {
                        self.accumulate(gain, &dgain);
                    }
                    if self.needs(bias) {
                        self.accumulate(bias, &dbias);
                    }
                }
                Op::Concat { a, b } => {
                    let (rows, p) = self.nodes[a].value.as_rows();
                    let (_, r_w) = self.nodes[b].value.as_rows();
                    let total = p + r_w;
                    if self.needs(a) {
                        let mut da = vec![0.0; rows * p];
                        for r in 0..rows {
                            da[r * p..(r + 1) * p].copy_from_slice(&grad[r * total..r * total + p]);
                        }
                        self.accumulate(a, &da);
                    }
                    if self.needs(b) {
                        let mut db = vec![0.0; rows * r_w];
                        for r in 0..rows {
                            db[r * r_w..(r + 1) * r_w]
                                .copy_from_slice(&grad[r * total + p..(r + 1) * total]);
                        }
                        self.accumulate(b, &db);
                    }
                }
                Op::ConcatRows { parts } => {
                    let mut offset = 0;
                    for &p in &parts {
                        let numel = self.nodes[p].value.numel();
                        if self.needs(p) {
                            let dp = grad[offset..offset + numel].to_vec();
                            self.accumulate(p, &dp);
                        }
                        offset += numel;
                    }
                }
                Op::Slice { a, start, len } => {
                    if self.needs(a) {
                        let (rows, cols) = self.nodes[a].value.as_rows();
                        let mut da = vec![0.0; rows * cols];
                        for r in 0..rows {
                            da[r * cols + start..r * cols + start + len]
                                .copy_from_slice(&grad[r * len..(r + 1) * len]);
                        }
                        self.accumulate(a, &da);
                    }
                }
                Op::Transpose { a } => {
                    if self.needs(a) {
                        let sh = self.nodes[a].value.shape();
                        let (m, n) = (sh[0], sh[1]);
                        let mut da = vec![0.0; m * n];
                        for i in 0..n {
                            for j in 0..m {
                                da[j * n + i] = grad[i * m + j];
                            }
                        }
                        self.accumulate(a, &da);
                    }
                }
                Op::GatherRows { table, ids } => {
                    if self.needs(table) {
                        let cols = self.nodes[table].value.shape()[1];
                        let mut dt = vec![0.0; self.nodes[table].value.numel()];
                        for (r, &id) in ids.iter().enumerate() {
                            for c in 0..cols {
                                dt[id * cols + c] += grad[r * cols + c];
                            }
                        }
                        self.accumulate(table, &dt);
                    }
                }
                Op::Tanh { a } => {
                    if self.needs(a) {
                        let y = self.nodes[idx].value.values();
                        let da: Vec<f64> =
                            grad.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                        self.accumulate(a, &da);
                    }
                }
                Op::Sigmoid { a } => {
                    if self.needs(a) {
                        let y = self.nodes[idx].value.values();
                        let da: Vec<f64> =
                            grad.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                        self.accumulate(a, &da);
                    }
                }
                Op::Relu { a } => {
                    if self.needs(a) {
                        let x = self.nodes[a].value.values();
                        let da: Vec<f64> = grad
                            .iter()
                            .zip(x)
                            .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                            .collect();
                        self.accumulate(a, &da);
                    }
                }
                Op::SumAll { a } => {
                    if self.needs(a) {
                        let da = vec![grad[0]; self.nodes[a].value.numel()];
                        self.accumulate(a, &da);
                    }
                }
                Op::MeanAll { a } => {
                    if self.needs(a) {
                        let n = self.nodes[a].value.numel().max(1) as f64;
                        let da = vec![grad[0] / n; self.nodes[a].value.numel()];
                        self.accumulate(a, &da);
                    }
                }
                Op::CrossEntropy { logits, labels } => {
                    if self.needs(logits) {
                        let (rows, cols) = self.nodes[logits].value.as_rows();
                        let lv = self.nodes[logits].value.values();
                        let scale = grad[0] / rows as f64;
                        let mut dl = vec![0.0; rows * cols];
                        for (r, &label) in labels.iter().enumerate() {
                            let row = &lv[r * cols..(r + 1) * cols];
                            let probs = softmax_row(row);
                            for c in 0..cols {
                                let indicator = if c == label { 1.0 } else { 0.0 };
                                dl[r * cols + c] = scale * (probs[c] - indicator);
                            }
                        }
                        self.accumulate(logits, &dl);
                    }
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, idx: usize, delta: &[f64]) {
        let node = &mut self.nodes[idx];
        match &mut node.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => node.grad = Some(delta.to_vec()),
        }
    }
}

/// Visit the index sets of every lane along `axis` of a row-major tensor.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(&[usize])) {
    let axis_len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut lane = vec![0usize; axis_len];
    for o in 0..outer {
        for i in 0..inner {
            for (t, slot) in lane.iter_mut().enumerate() {
                *slot = (o * axis_len + t) * inner + i;
            }
            f(&lane);
        }
    }
}

fn softmax_lane_in_place(values: &mut [f64], lane: &[usize]) {
    let max = lane
        .iter()
        .map(|&i| values[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &i in lane {
        let e = (values[i] - max).exp();
        values[i] = e;
        sum += e;
    }
    for &i in lane {
        values[i] /= sum;
    }
}

/// Stable softmax of one dense row.
pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// `log softmax(row)[index]` via the max-subtracted log-sum-exp.
fn log_softmax_at(row: &[f64], index: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row[index] - lse
}

/// Zero-mean, unit-variance view of a row plus the inverse std used.
fn normalize_row(row: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    (row.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::assert_grad_matches;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t1(values: &[f64]) -> Tensor {
        Tensor::vector(values.to_vec())
    }

    fn t2(rows: &[&[f64]]) -> Tensor {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        Tensor::matrix(&rows).unwrap()
    }

    #[test]
    fn matmul_identity_is_exact() {
        let mut tape = Tape::new();
        let a = tape.constant(t2(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let i = tape.constant(t2(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let c = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(c).values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_orthogonal_vectors() {
        let mut tape = Tape::new();
        let a = tape.constant(t2(&[&[1.0, 0.0]]));
        let b = tape.constant(t2(&[&[0.0], &[1.0]]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).values(), &[0.0]);
    }

    #[test]
    fn matmul_hand_multiplication() {
        let mut tape = Tape::new();
        let a = tape.constant(t2(&[&[0.3, 0.7]]));
        let b = tape.constant(t2(&[&[2.0, -1.0], &[0.5, 4.0]]));
        let c = tape.matmul(a, b).unwrap();
        let v = tape.value(c).values();
        assert!((v[0] - 0.95).abs() < 1e-12 && (v[1] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(t2(&[&[1.0, 2.0]]));
        let b = tape.constant(t2(&[&[1.0, 2.0]]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 2]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn softmax_symmetry() {
        let mut tape = Tape::new();
        let x = tape.constant(t1(&[0.0, 0.0, 0.0]));
        let s = tape.softmax(x, 0).unwrap();
        for v in tape.value(s).values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_stable_for_huge_logits() {
        let mut tape = Tape::new();
        let x = tape.constant(t1(&[1000.0, 0.0]));
        let s = tape.softmax(x, 0).unwrap();
        let v = tape.value(s).values();
        assert!(v[0] > 1.0 - 1e-12 && v[1] < 1e-12);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn softmax_direct_evaluation() {
        let mut tape = Tape::new();
        let x = tape.constant(t1(&[1.0, 2.0, 3.0]));
        let s = tape.softmax(x, 0).unwrap();
        let v = tape.value(s).values();
        let expect = [0.09003057, 0.24472847, 0.66524096];
        for (got, want) in v.iter().zip(expect) {
            assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        }
    }

    #[test]
    fn softmax_sums_to_one_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let vals: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let shifted: Vec<f64> = vals.iter().map(|v| v + 3.7).collect();
            let mut tape = Tape::new();
            let a = tape.constant(t1(&vals));
            let b = tape.constant(t1(&shifted));
            let sa = tape.softmax(a, 0).unwrap();
            let sb = tape.softmax(b, 0).unwrap();
            let sum: f64 = tape.value(sa).values().iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9);
            let diff = tape.value(sa).max_abs_diff(tape.value(sb)).unwrap();
            assert!(diff <= 1e-9);
        }
    }

    #[test]
    fn softmax_rowwise_on_matrix() {
        let mut tape = Tape::new();
        let x = tape.constant(t2(&[&[0.0, 0.0], &[1.0, 1.0]]));
        let s = tape.softmax(x, 1).unwrap();
        for v in tape.value(s).values() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_constant_row_maps_to_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(t1(&[1.0, 1.0, 1.0]));
        let g = tape.constant(t1(&[1.0, 1.0, 1.0]));
        let b = tape.constant(t1(&[0.0, 0.0, 0.0]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        for v in tape.value(y).values() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn layer_norm_identity_on_normalized_row() {
        let mut tape = Tape::new();
        let x = tape.constant(t1(&[-1.0, 1.0]));
        let g = tape.constant(t1(&[1.0, 1.0]));
        let b = tape.constant(t1(&[0.0, 0.0]));
        let y = tape.layer_norm(x, g, b, 0.0).unwrap();
        let v = tape.value(y).values();
        assert!((v[0] + 1.0).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_matches_direct_formula() {
        // Oracle computed right here from the definition.
        let xs = [1.0, 2.0, 3.0];
        let eps = 1e-6_f64;
        let mean = 2.0_f64;
        let var = 2.0_f64 / 3.0;
        let expect: Vec<f64> = xs
            .iter()
            .map(|x| 2.0 * (x - mean) / (var + eps).sqrt() + 1.0)
            .collect();

        let mut tape = Tape::new();
        let x = tape.constant(t1(&xs));
        let g = tape.constant(t1(&[2.0, 2.0, 2.0]));
        let b = tape.constant(t1(&[1.0, 1.0, 1.0]));
        let y = tape.layer_norm(x, g, b, eps).unwrap();
        for (got, want) in tape.value(y).values().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_output_rows_are_standardized_before_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..24).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![4, 6], vals).unwrap());
        let g = tape.constant(t1(&[1.0; 6]));
        let b = tape.constant(t1(&[0.0; 6]));
        let y = tape.layer_norm(x, g, b, 0.0).unwrap();
        let out = tape.value(y);
        for r in 0..4 {
            let row: Vec<f64> = (0..6).map(|c| out.at2(r, c)).collect();
            let mean: f64 = row.iter().sum::<f64>() / 6.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 6.0;
            assert!(mean.abs() <= 1e-9);
            assert!((var - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn layer_norm_shape_mismatch_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(t1(&[1.0, 2.0, 3.0]));
        let g = tape.constant(t1(&[1.0, 1.0]));
        let b = tape.constant(t1(&[0.0, 0.0, 0.0]));
        assert!(tape.layer_norm(x, g, b, 1e-5).is_err());
    }

    #[test]
    fn concat_with_empty_right_operand() {
        let mut tape = Tape::new();
        let a = tape.constant(t1(&[1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![]));
        let c = tape.concat(a, b).unwrap();
        assert_eq!(tape.value(c).values(), &[1.0, 2.0]);
    }

    #[test]
    fn concat_vectors() {
        let mut tape = Tape::new();
        let a = tape.constant(t1(&[1.0, 2.0]));
        let b = tape.constant(t1(&[3.0]));
        let c = tape.concat(a, b).unwrap();
        assert_eq!(tape.value(c).values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn concat_dimension_arithmetic() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![768]));
        let b = tape.constant(Tensor::zeros(vec![7]));
        let c = tape.concat(a, b).unwrap();
        assert_eq!(tape.shape(c), &[775]);
    }

    #[test]
    fn concat_then_slice_is_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(t2(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = tape.constant(t2(&[&[5.0], &[6.0]]));
        let c = tape.concat(a, b).unwrap();
        let left = tape.slice(c, 0, 2).unwrap();
        let right = tape.slice(c, 2, 1).unwrap();
        assert_eq!(tape.value(left).values(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(tape.value(right).values(), &[5.0, 6.0]);
    }

    #[test]
    fn backward_routes_concat_gradient_to_the_right_operand() {
        let mut tape = Tape::new();
        let a = tape.leaf(t1(&[1.0, 2.0]), true);
        let b = tape.leaf(t1(&[3.0]), true);
        let c = tape.concat(a, b).unwrap();
        let right = tape.slice(c, 2, 1).unwrap();
        let loss = tape.sum_all(right).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap().values(), &[0.0, 0.0]);
        assert_eq!(tape.grad(b).unwrap().values(), &[1.0]);
    }

    #[test]
    fn backward_of_sum_is_all_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t2(&[&[1.0, -2.0], &[0.5, 3.0]]), true);
        let loss = tape.sum_all(x).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().values(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_quadratic_form() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 2.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().values(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0, 2.0]), true);
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, Error::NonScalarLoss { .. }));
    }

    #[test]
    fn backward_rejects_detached_loss() {
        let mut other = Tape::new();
        let foreign = other.leaf(Tensor::scalar(1.0), true);
        let mut tape = Tape::new();
        let err = tape.backward(foreign).unwrap_err();
        assert!(matches!(err, Error::DetachedLoss));
    }

    #[test]
    fn grad_is_missing_before_backward_and_for_constants() {
        let mut tape = Tape::new();
        let x = tape.leaf(t1(&[1.0]), true);
        assert!(tape.grad(x).is_err());
        let c = tape.constant(t1(&[1.0]));
        let s = tape.add(x, c).unwrap();
        let loss = tape.sum_all(s).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).is_ok());
        assert!(tape.grad(c).is_err());
    }

    #[test]
    fn gather_rows_rejects_out_of_range_ids() {
        let mut tape = Tape::new();
        let t = tape.constant(t2(&[&[1.0, 2.0], &[3.0, 4.0]]));
        assert!(tape.gather_rows(t, &[2]).is_err());
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_of_class_count() {
        let mut tape = Tape::new();
        let logits = tape.constant(t1(&[0.0; 7]));
        let loss = tape.cross_entropy(logits, &[3]).unwrap();
        assert!((tape.value(loss).values()[0] - 7.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident_correct_is_near_zero() {
        let mut tape = Tape::new();
        let logits = tape.constant(t1(&[1000.0, 0.0]));
        let loss = tape.cross_entropy(logits, &[0]).unwrap();
        assert!(tape.value(loss).values()[0].abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_per_row_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vals: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let labels = [1usize, 3, 0];
        // Direct per-row -log softmax oracle.
        let mut expect = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &vals[r * 4..(r + 1) * 4];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            expect -= row[label] - lse;
        }
        expect /= 3.0;

        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::new(vec![3, 4], vals).unwrap());
        let loss = tape.cross_entropy(logits, &labels).unwrap();
        assert!((tape.value(loss).values()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        let mut tape = Tape::new();
        let logits = tape.constant(t1(&[0.0, 0.0]));
        assert!(matches!(
            tape.cross_entropy(logits, &[2]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    // ── finite-difference gradient checks, one per op ────────────────

    fn fd_check<B>(shape: Vec<usize>, build: B, seed: u64, what: &str)
    where
        B: Fn(&mut Tape, Var) -> Var,
    {
        let numel: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..numel).map(|_| rng.gen_range(-2.0..2.0)).collect();

        let f = |vals: &[f64]| {
            let mut tape = Tape::new();
            let leaf = tape.leaf(Tensor::new(shape.clone(), vals.to_vec()).unwrap(), true);
            let loss = build(&mut tape, leaf);
            tape.value(loss).values()[0]
        };

        let mut tape = Tape::new();
        let leaf = tape.leaf(Tensor::new(shape.clone(), x.clone()).unwrap(), true);
        let loss = build(&mut tape, leaf);
        tape.backward(loss).unwrap();
        let analytic = tape.grad(leaf).unwrap();
        assert_grad_matches(f, &x, analytic.values(), 1e-5, 1e-4, what);
    }

    fn weights(tape: &mut Tape, rows: usize, cols: usize, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        tape.constant(Tensor::new(vec![rows, cols], vals).unwrap())
    }

    fn vec_const(tape: &mut Tape, len: usize, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        tape.constant(Tensor::vector(vals))
    }

    #[test]
    fn grad_matmul_lhs() {
        fd_check(
            vec![2, 3],
            |tape, x| {
                let w = weights(tape, 3, 2, 100);
                let y = tape.matmul(x, w).unwrap();
                tape.sum_all(y).unwrap()
            },
            1,
            "matmul lhs",
        );
    }

    #[test]
    fn grad_matmul_rhs() {
        fd_check(
            vec![3, 2],
            |tape, x| {
                let w = weights(tape, 2, 3, 101);
                let y = tape.matmul(w, x).unwrap();
                tape.sum_all(y).unwrap()
            },
            2,
            "matmul rhs",
        );
    }

    #[test]
    fn grad_add_and_mul() {
        fd_check(
            vec![2, 3],
            |tape, x| {
                let c = weights(tape, 2, 3, 102);
                let s = tape.add(x, c).unwrap();
                let m = tape.mul(s, x).unwrap();
                tape.sum_all(m).unwrap()
            },
            3,
            "add+mul",
        );
    }

    #[test]
    fn grad_add_bias() {
        fd_check(
            vec![4],
            |tape, b| {
                let base = weights(tape, 3, 4, 103);
                let y = tape.add_bias(base, b).unwrap();
                let w = weights(tape, 3, 4, 104);
                let m = tape.mul(y, w).unwrap();
                tape.sum_all(m).unwrap()
            },
            4,
            "add_bias",
        );
    }

    #[test]
    fn grad_scale() {
        fd_check(
            vec![5],
            |tape, x| {
                let y = tape.scale(x, -2.5).unwrap();
                let m = tape.mul(y, y).unwrap();
                tape.sum_all(m).unwrap()
            },
            5,
            "scale",
        );
    }

    #[test]
    fn grad_softmax() {
        fd_check(
            vec![2, 4],
            |tape, x| {
                let s = tape.softmax(x, 1).unwrap();
                let w = weights(tape, 2, 4, 105);
                let m = tape.mul(s, w).unwrap();
                tape.sum_all(m).unwrap()
            },
            6,
            "softmax",
        );
    }

    #[test]
    fn grad_layer_norm_input() {
        fd_check(
            vec![3, 5],
            |tape, x| {
                let g = vec_const(tape, 5, 106);
                let b = vec_const(tape, 5, 107);
                let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
                let w = weights(tape, 3, 5, 108);
                let m = tape.mul(y, w).unwrap();
                tape.sum_all(m).unwrap()
            },
            7,
            "layer_norm input",
        );
    }

    #[test]
    fn grad_layer_norm_gain_and_bias() {
        // Differentiate w.r.t. the affine params: gain in the first 5
        // slots, bias in the last 5.
        fd_check(
            vec![10],
            |tape, gb| {
                let g = tape.slice(gb, 0, 5).unwrap();
                let b = tape.slice(gb, 5, 5).unwrap();
                let x = weights(tape, 3, 5, 109);
                let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
                let w = weights(tape, 3, 5, 110);
                let m = tape.mul(y, w).unwrap();
                tape.sum_all(m).unwrap()
            },
            8,
            "layer_norm affine",
        );
    }

    #[test]
    fn grad_concat_slice_transpose() {
        fd_check(
            vec![2, 3],
            |tape, x| {
                let c = weights(tape, 2, 2, 111);
                let joined = tape.concat(x, c).unwrap();
                let t = tape.transpose(joined).unwrap();
                let back = tape.transpose(t).unwrap();
                let piece = tape.slice(back, 1, 3).unwrap();
                let w = weights(tape, 2, 3, 112);
                let m = tape.mul(piece, w).unwrap();
                tape.sum_all(m).unwrap()
            },
            9,
            "concat+slice+transpose",
        );
    }

    #[test]
    fn grad_concat_rows() {
        fd_check(
            vec![2, 3],
            |tape, x| {
                let other = weights(tape, 1, 3, 113);
                let stacked = tape.concat_rows(&[x, other, x]).unwrap();
                let w = weights(tape, 5, 3, 114);
                let m = tape.mul(stacked, w).unwrap();
                tape.sum_all(m).unwrap()
            },
            10,
            "concat_rows",
        );
    }

    #[test]
    fn grad_gather_rows() {
        fd_check(
            vec![4, 3],
            |tape, table| {
                // Repeated id exercises scatter-add accumulation.
                let rows = tape.gather_rows(table, &[0, 2, 2]).unwrap();
                let w = weights(tape, 3, 3, 115);
                let m = tape.mul(rows, w).unwrap();
                tape.sum_all(m).unwrap()
            },
            11,
            "gather_rows",
        );
    }

    #[test]
    fn grad_activations() {
        fd_check(
            vec![6],
            |tape, x| {
                let t = tape.tanh(x).unwrap();
                let s = tape.sigmoid(t).unwrap();
                let r = tape.relu(s).unwrap();
                let m = tape.mul(r, x).unwrap();
                tape.mean_all(m).unwrap()
            },
            12,
            "tanh+sigmoid+relu",
        );
    }

    #[test]
    fn grad_cross_entropy_chain_matches_finite_differences() {
        // Random 5-dim input through a projection into 3 logits.
        fd_check(
            vec![1, 5],
            |tape, x| {
                let w = weights(tape, 5, 3, 116);
                let logits = tape.matmul(x, w).unwrap();
                tape.cross_entropy(logits, &[1]).unwrap()
            },
            13,
            "cross_entropy chain",
        );
    }

    #[test]
    fn grad_cross_entropy_through_softmax_chain() {
        fd_check(
            vec![1, 5],
            |tape, x| {
                let soft = tape.softmax(x, 1).unwrap();
                let w = weights(tape, 5, 5, 117);
                let mixed = tape.matmul(soft, w).unwrap();
                tape.cross_entropy(mixed, &[2]).unwrap()
            },
            14,
            "softmax->cross_entropy chain",
        );
    }
}

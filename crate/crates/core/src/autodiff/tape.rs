use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels;
use super::{AutodiffError, Tensor};

/// Default layer-norm epsilon.
pub const DEFAULT_LAYER_NORM_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax { input: Var, axis: usize },
    MaskedSoftmax(Var),
    LayerNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows { table: Var, rows: Vec<usize> },
    Dropout { input: Var, scale: Vec<f64> },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Records forward operations in creation order and replays them backwards.
///
/// Nodes are appended as operations run, so an operation's inputs always
/// precede it. A tape and its values are confined to one thread; independent
/// tapes can run on separate workers.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Records an input tensor. Parameters use `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient, available after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Tensor::with_data(shape, data),
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn expect_rank(&self, op: &'static str, v: Var, rank: usize) -> Result<&[usize], AutodiffError> {
        let shape = self.shape(v);
        if shape.len() != rank {
            return Err(AutodiffError::Rank {
                op,
                expected: rank,
                shape: shape.to_vec(),
            });
        }
        Ok(shape)
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let sa = self.expect_rank("matmul", a, 2)?.to_vec();
        let sb = self.expect_rank("matmul", b, 2)?.to_vec();
        if sa[1] != sb[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a[B×m×k] · b[B×k×n]`, one product per leading index.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let sa = self.expect_rank("batch_matmul", a, 3)?.to_vec();
        let sb = self.expect_rank("batch_matmul", b, 3)?.to_vec();
        if sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "batch_matmul",
                left: sa,
                right: sb,
            });
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(batch * m * n);
        for i in 0..batch {
            out.extend(kernels::matmul(
                &ad[i * m * k..(i + 1) * m * k],
                &bd[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
            ));
        }
        Ok(self.push(vec![batch, m, n], out, Op::BatchMatMul(a, b), &[a, b]))
    }

    /// Swaps the two axes of a rank-2 tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.expect_rank("transpose", a, 2)?;
        self.permute(a, &[1, 0])
    }

    /// Reorders axes so that output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var, AutodiffError> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        for &p in perm {
            if p >= shape.len() || std::mem::replace(&mut seen[p], true) {
                return Err(AutodiffError::InvalidAxis {
                    axis: p,
                    rank: shape.len(),
                });
            }
        }
        if perm.len() != shape.len() {
            return Err(AutodiffError::InvalidAxis {
                axis: perm.len(),
                rank: shape.len(),
            });
        }
        let (out_shape, out) = kernels::permute(self.value(a).data(), &shape, perm);
        Ok(self.push(out_shape, out, Op::Permute(a, perm.to_vec()), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let from = self.shape(a);
        if shape.contains(&0) || shape.iter().product::<usize>() != from.iter().product::<usize>() {
            return Err(AutodiffError::Reshape {
                from: from.to_vec(),
                to: shape.to_vec(),
            });
        }
        let data = self.value(a).data().to_vec();
        Ok(self.push(shape.to_vec(), data, Op::Reshape(a), &[a]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(AutodiffError::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(sa.to_vec())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let shape = self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(shape, out, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let shape = self.same_shape("mul", a, b)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(shape, out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a rank-1 `bias` to every slice along the last dimension of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_bias",
                left: sx,
                right: sb,
            });
        }
        let b = self.value(bias).data();
        let out = self
            .value(x)
            .data()
            .chunks(sb[0])
            .flat_map(|row| row.iter().zip(b).map(|(v, bv)| v + bv))
            .collect();
        Ok(self.push(sx, out, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let shape = self.shape(x).to_vec();
        let out = self.value(x).data().iter().map(|v| v * factor).collect();
        self.push(shape, out, Op::Scale(x, factor), &[x])
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let out = self.value(x).data().iter().map(|&v| kernels::gelu(v)).collect();
        self.push(shape, out, Op::Gelu(x), &[x])
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, AutodiffError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(AutodiffError::InvalidAxis {
                axis,
                rank: shape.len(),
            });
        }
        let (outer, len, inner) = kernels::axis_extents(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[idx(j)] /= total;
                }
            }
        }
        Ok(self.push(shape, out, Op::Softmax { input: x, axis }, &[x]))
    }

    /// Softmax over the last axis where key positions with `keep == false`
    /// get exactly zero weight.
    ///
    /// `keep` holds one row of key flags per group; consecutive score rows
    /// are split evenly across the groups. For attention scores shaped
    /// `[batch·heads, query, key]` that is one flag row per batch element.
    pub fn masked_softmax(&mut self, x: Var, keep: &[bool]) -> Result<Var, AutodiffError> {
        let shape = self.shape(x).to_vec();
        let keys = *shape.last().expect("rank >= 1");
        let rows = self.value(x).numel() / keys;
        if keep.is_empty() || !keep.len().is_multiple_of(keys) || !rows.is_multiple_of(keep.len() / keys) {
            return Err(AutodiffError::MaskLayout {
                mask: keep.len(),
                shape,
            });
        }
        let rows_per_group = rows / (keep.len() / keys);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let flags = &keep[(r / rows_per_group) * keys..][..keys];
            let row = &src[r * keys..(r + 1) * keys];
            let max = row
                .iter()
                .zip(flags)
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let dst = &mut out[r * keys..(r + 1) * keys];
            let mut total = 0.0;
            for ((d, &v), &k) in dst.iter_mut().zip(row).zip(flags) {
                if k {
                    *d = (v - max).exp();
                    total += *d;
                }
            }
            dst.iter_mut().for_each(|d| *d /= total);
        }
        Ok(self.push(shape, out, Op::MaskedSoftmax(x), &[x]))
    }

    /// Normalizes each last-dimension row to zero mean and unit (population)
    /// variance, then applies `gamma * x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, AutodiffError> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().expect("rank >= 1");
        for p in [gamma, beta] {
            if self.shape(p) != [n] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "layer_norm",
                    left: shape.clone(),
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let src = self.value(x).data();
        let rows = src.len() / n;
        let mut normalized = Vec::with_capacity(src.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(src.len());
        for row in src.chunks(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, v) in row.iter().enumerate() {
                let xh = (v - mean) * inv;
                normalized.push(xh);
                out.push(xh * g[j] + b[j]);
            }
        }
        let op = Op::LayerNorm {
            input: x,
            gamma,
            beta,
            normalized,
            inv_std,
        };
        Ok(self.push(shape, out, op, &[x, gamma, beta]))
    }

    /// Selects rows of a rank-2 `table`; the result is `[rows.len(), cols]`.
    /// Used for embedding lookup and for picking positions out of a sequence.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var, AutodiffError> {
        let shape = self.expect_rank("gather_rows", table, 2)?.to_vec();
        if rows.is_empty() {
            return Err(AutodiffError::InvalidShape(vec![0, shape[1]]));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= shape[0]) {
            return Err(AutodiffError::IndexOutOfRange {
                index: bad,
                rows: shape[0],
            });
        }
        let t = self.value(table);
        let out = rows.iter().flat_map(|&r| t.row(r).iter().copied()).collect();
        let op = Op::GatherRows {
            table,
            rows: rows.to_vec(),
        };
        Ok(self.push(vec![rows.len(), shape[1]], out, op, &[table]))
    }

    /// Inverted dropout. In eval mode, or with `prob == 0`, returns `x` itself.
    pub fn dropout(&mut self, x: Var, prob: f64, seed: u64, train: bool) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&prob) {
            return Err(AutodiffError::InvalidProbability(prob));
        }
        if !train || prob == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - prob);
        let scale: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < prob { 0.0 } else { keep })
            .collect();
        let shape = self.shape(x).to_vec();
        let out = self.value(x).data().iter().zip(&scale).map(|(v, s)| v * s).collect();
        Ok(self.push(shape, out, Op::Dropout { input: x, scale }, &[x]))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, AutodiffError> {
        let shape = self.expect_rank("cross_entropy", logits, 2)?.to_vec();
        let (batch, classes) = (shape[0], shape[1]);
        if labels.len() != batch {
            return Err(AutodiffError::ShapeMismatch {
                op: "cross_entropy",
                left: shape,
                right: vec![labels.len()],
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(AutodiffError::LabelOutOfRange { label, classes });
        }
        let src = self.value(logits).data();
        let mut probs = Vec::with_capacity(src.len());
        let mut loss = 0.0;
        for (row, &label) in src.chunks(classes).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_total = total.ln();
            loss -= row[label] - max - log_total;
            probs.extend(row.iter().map(|v| (v - max).exp() / total));
        }
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push(vec![1], vec![loss / batch as f64], op, &[logits]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(vec![1], vec![total], Op::Sum(x), &[x])
    }

    /// Back-propagates from the scalar `loss`.
    ///
    /// Afterwards every node that requires a gradient holds one; leaves that
    /// `loss` does not depend on hold zeros. Calling it again accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(AutodiffError::NotScalar(shape.to_vec()));
        }
        accumulate(&mut self.nodes[loss.0], &[1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.backward_rule(i, &grad);
            self.nodes[i].grad = Some(grad);
            for (input, g) in contributions {
                if self.nodes[input.0].requires_grad {
                    accumulate(&mut self.nodes[input.0], &g);
                }
            }
        }
        for node in &mut self.nodes[..=loss.0] {
            if node.requires_grad && node.grad.is_none() {
                node.grad = Some(vec![0.0; node.value.numel()]);
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_rule(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let mut out = Vec::with_capacity(3);
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.wants(a) {
                    out.push((a, kernels::matmul_nt(g, bv.data(), m, n, k)));
                }
                if self.wants(b) {
                    out.push((b, kernels::matmul_tn(av.data(), g, m, k, n)));
                }
            }
            &Op::BatchMatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (batch, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
                if self.wants(a) {
                    let mut ga = Vec::with_capacity(av.numel());
                    for t in 0..batch {
                        ga.extend(kernels::matmul_nt(
                            &g[t * m * n..(t + 1) * m * n],
                            &bv.data()[t * k * n..(t + 1) * k * n],
                            m,
                            n,
                            k,
                        ));
                    }
                    out.push((a, ga));
                }
                if self.wants(b) {
                    let mut gb = Vec::with_capacity(bv.numel());
                    for t in 0..batch {
                        gb.extend(kernels::matmul_tn(
                            &av.data()[t * m * k..(t + 1) * m * k],
                            &g[t * m * n..(t + 1) * m * n],
                            m,
                            k,
                            n,
                        ));
                    }
                    out.push((b, gb));
                }
            }
            Op::Permute(a, perm) => {
                let (_, back) =
                    kernels::permute(g, node.value.shape(), &kernels::inverse_permutation(perm));
                out.push((*a, back));
            }
            &Op::Reshape(a) => out.push((a, g.to_vec())),
            &Op::Add(a, b) => {
                out.push((a, g.to_vec()));
                out.push((b, g.to_vec()));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                out.push((a, g.iter().zip(bv).map(|(d, y)| d * y).collect()));
                out.push((b, g.iter().zip(av).map(|(d, x)| d * x).collect()));
            }
            &Op::AddBias(x, bias) => {
                out.push((x, g.to_vec()));
                if self.wants(bias) {
                    let n = self.value(bias).numel();
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                    }
                    out.push((bias, gb));
                }
            }
            &Op::Scale(x, factor) => out.push((x, g.iter().map(|d| d * factor).collect())),
            &Op::Gelu(x) => {
                let xv = self.value(x).data();
                let gx = g
                    .iter()
                    .zip(xv)
                    .map(|(d, &v)| d * kernels::gelu_derivative(v))
                    .collect();
                out.push((x, gx));
            }
            &Op::Softmax { input, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = kernels::axis_extents(node.value.shape(), axis);
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| o * len * inner + j * inner + i;
                        let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..len {
                            gx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                out.push((input, gx));
            }
            &Op::MaskedSoftmax(input) => {
                let y = node.value.data();
                let keys = *node.value.shape().last().expect("rank >= 1");
                let mut gx = vec![0.0; y.len()];
                for ((gr, yr), dst) in g.chunks(keys).zip(y.chunks(keys)).zip(gx.chunks_mut(keys)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((d, &gv), &yv) in dst.iter_mut().zip(gr).zip(yr) {
                        *d = yv * (gv - dot);
                    }
                }
                out.push((input, gx));
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let gv = self.value(*gamma).data();
                let n = gv.len();
                if self.wants(*input) {
                    let mut gx = Vec::with_capacity(g.len());
                    for ((gr, xh), &inv) in g.chunks(n).zip(normalized.chunks(n)).zip(inv_std) {
                        let dxh: Vec<f64> = gr.iter().zip(gv).map(|(d, w)| d * w).collect();
                        let sum_d: f64 = dxh.iter().sum();
                        let sum_dx: f64 = dxh.iter().zip(xh).map(|(d, x)| d * x).sum();
                        let nf = n as f64;
                        gx.extend(
                            dxh.iter()
                                .zip(xh)
                                .map(|(d, x)| inv / nf * (nf * d - sum_d - x * sum_dx)),
                        );
                    }
                    out.push((*input, gx));
                }
                if self.wants(*gamma) {
                    let mut gg = vec![0.0; n];
                    for (gr, xh) in g.chunks(n).zip(normalized.chunks(n)) {
                        for j in 0..n {
                            gg[j] += gr[j] * xh[j];
                        }
                    }
                    out.push((*gamma, gg));
                }
                if self.wants(*beta) {
                    let mut gb = vec![0.0; n];
                    for gr in g.chunks(n) {
                        gb.iter_mut().zip(gr).for_each(|(s, v)| *s += v);
                    }
                    out.push((*beta, gb));
                }
            }
            Op::GatherRows { table, rows } => {
                let t = self.value(*table);
                let cols = t.shape()[1];
                let mut gt = vec![0.0; t.numel()];
                for (gr, &r) in g.chunks(cols).zip(rows) {
                    gt[r * cols..(r + 1) * cols]
                        .iter_mut()
                        .zip(gr)
                        .for_each(|(s, v)| *s += v);
                }
                out.push((*table, gt));
            }
            Op::Dropout { input, scale } => {
                out.push((*input, g.iter().zip(scale).map(|(d, s)| d * s).collect()));
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let classes = self.value(*logits).shape()[1];
                let factor = g[0] / labels.len() as f64;
                let mut gl: Vec<f64> = probs.iter().map(|p| p * factor).collect();
                for (row, &label) in labels.iter().enumerate() {
                    gl[row * classes + label] -= factor;
                }
                out.push((*logits, gl));
            }
            &Op::Sum(x) => out.push((x, vec![g[0]; self.value(x).numel()])),
        }
        out
    }
}

fn accumulate(node: &mut Node, g: &[f64]) {
    match &mut node.grad {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a += v),
        None => node.grad = Some(g.to_vec()),
    }
}

//! Reverse-mode autodiff over a per-step computation graph.
//!
//! A [`Graph`] borrows the parameter set, records ops during the forward
//! pass, and propagates gradients backward through the recorded tape.
//! Parameter gradients come back indexed like the parameter list, ready for
//! the optimizer.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fmath::{exp, sqrt, tanh};
use crate::seqnet::tensor::{
    bmm_nn, bmm_nn_acc, bmm_nt, bmm_nt_acc, bmm_tn_acc, gemm_nn, gemm_nt_acc, gemm_tn_acc, Tensor,
};
use crate::seqnet::SeqNetError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(u32);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param { index: usize },
    MatMul { a: NodeId, b: NodeId },
    /// Grouped matmul of `[g, m, k] x [g, k, n]`, optionally `B` transposed
    /// (`[g, n, k]`).
    Bmm { a: NodeId, b: NodeId, g: usize, m: usize, k: usize, n: usize, b_transposed: bool },
    AddBias { a: NodeId, bias: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    /// `y = mul * x + add`, elementwise with scalars; only the slope
    /// matters for the gradient.
    Affine { a: NodeId, mul: f64 },
    Sigmoid { a: NodeId },
    Tanh { a: NodeId },
    Relu { a: NodeId },
    SoftmaxRows { a: NodeId },
    LayerNorm { a: NodeId, gamma: NodeId, beta: NodeId },
    SliceCols { a: NodeId, start: usize, len: usize },
    /// Rows `t, t + t_w, t + 2 t_w, ...` of a `[b * t_w, c]` tensor.
    TimeSlice { a: NodeId, t: usize, t_w: usize },
    /// Adds a `[t_w, c]` parameter tile to every batch block of `[b*t_w, c]`.
    AddTimeParam { a: NodeId, p: NodeId, t_w: usize },
    /// `[b * t_w, h * dh] -> [b * h, t_w, dh]` permutation.
    HeadSplit { a: NodeId, heads: usize, t_w: usize },
    /// Inverse of `HeadSplit`.
    HeadMerge { a: NodeId, heads: usize, t_w: usize },
    Dropout { a: NodeId },
    MseLoss { pred: NodeId, target: NodeId },
}

struct Node {
    op: Op,
    value: Option<Tensor>,
    /// Saved forward intermediates (layer-norm row stats, dropout mask).
    aux: Vec<f64>,
}

/// Reverse-mode tape over a borrowed parameter list.
pub struct Graph<'w> {
    params: &'w [Tensor],
    nodes: Vec<Node>,
}

impl<'w> Graph<'w> {
    pub fn new(params: &'w [Tensor]) -> Self {
        Graph { params, nodes: Vec::with_capacity(1024) }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.push_aux(op, value, Vec::new())
    }

    fn push_aux(&mut self, op: Op, value: Tensor, aux: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, value: Some(value), aux });
        NodeId((self.nodes.len() - 1) as u32)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0 as usize];
        match node.op {
            Op::Param { index } => &self.params[index],
            _ => node.value.as_ref().expect("value present"),
        }
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Input, t)
    }

    pub fn param(&mut self, index: usize) -> NodeId {
        self.nodes.push(Node { op: Op::Param { index }, value: None, aux: Vec::new() });
        NodeId((self.nodes.len() - 1) as u32)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, ka) = self.value(a).rows_cols();
        let (kb, n) = self.value(b).rows_cols();
        assert_eq!(ka, kb, "matmul inner dims {ka} vs {kb}");
        let mut out = Tensor::zeros(&[m, n]);
        gemm_nn(m, ka, n, &self.value(a).data, &self.value(b).data, &mut out.data);
        self.push(Op::MatMul { a, b }, out)
    }

    /// Grouped `[g, m, k] x [g, k, n]` (or `[g, n, k]` when `b_transposed`).
    pub fn bmm(&mut self, a: NodeId, b: NodeId, g: usize, m: usize, k: usize, n: usize, b_transposed: bool) -> NodeId {
        assert_eq!(self.value(a).numel(), g * m * k);
        assert_eq!(self.value(b).numel(), g * k * n);
        let mut out = Tensor::zeros(&[g * m, n]);
        if b_transposed {
            bmm_nt(g, m, k, n, &self.value(a).data, &self.value(b).data, &mut out.data);
        } else {
            bmm_nn(g, m, k, n, &self.value(a).data, &self.value(b).data, &mut out.data);
        }
        self.push(Op::Bmm { a, b, g, m, k, n, b_transposed }, out)
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (rows, cols) = self.value(a).rows_cols();
        assert_eq!(self.value(bias).numel(), cols, "bias width");
        let mut out = self.value(a).clone();
        let b = &self.value(bias).data;
        for r in 0..rows {
            for (o, bv) in out.data[r * cols..(r + 1) * cols].iter_mut().zip(b.iter()) {
                *o += bv;
            }
        }
        self.push(Op::AddBias { a, bias }, out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).shape, self.value(b).shape, "add shapes");
        let mut out = self.value(a).clone();
        for (o, v) in out.data.iter_mut().zip(self.value(b).data.iter()) {
            *o += v;
        }
        self.push(Op::Add { a, b }, out)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).shape, self.value(b).shape, "mul shapes");
        let mut out = self.value(a).clone();
        for (o, v) in out.data.iter_mut().zip(self.value(b).data.iter()) {
            *o *= v;
        }
        self.push(Op::Mul { a, b }, out)
    }

    pub fn affine(&mut self, a: NodeId, mul: f64, add: f64) -> NodeId {
        let mut out = self.value(a).clone();
        for o in out.data.iter_mut() {
            *o = mul * *o + add;
        }
        self.push(Op::Affine { a, mul }, out)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for o in out.data.iter_mut() {
            *o = 1.0 / (1.0 + exp(-*o));
        }
        self.push(Op::Sigmoid { a }, out)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for o in out.data.iter_mut() {
            *o = tanh(*o);
        }
        self.push(Op::Tanh { a }, out)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for o in out.data.iter_mut() {
            if *o < 0.0 {
                *o = 0.0;
            }
        }
        self.push(Op::Relu { a }, out)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (rows, cols) = self.value(a).rows_cols();
        let mut out = self.value(a).clone();
        for r in 0..rows {
            let row = &mut out.data[r * cols..(r + 1) * cols];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = exp(*v - max);
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(Op::SoftmaxRows { a }, out)
    }

    /// Row-wise layer normalization over the trailing dimension with a
    /// learned gain and shift.
    pub fn layer_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        const EPS: f64 = 1e-5;
        let (rows, cols) = self.value(a).rows_cols();
        assert_eq!(self.value(gamma).numel(), cols);
        assert_eq!(self.value(beta).numel(), cols);
        let mut out = Tensor::zeros(&self.value(a).shape.clone());
        let mut aux = Vec::with_capacity(rows * 2);
        {
            let x = &self.value(a).data;
            let g = &self.value(gamma).data;
            let be = &self.value(beta).data;
            for r in 0..rows {
                let row = &x[r * cols..(r + 1) * cols];
                let mean = row.iter().sum::<f64>() / cols as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                let rstd = 1.0 / sqrt(var + EPS);
                aux.push(mean);
                aux.push(rstd);
                let o = &mut out.data[r * cols..(r + 1) * cols];
                for c in 0..cols {
                    o[c] = (row[c] - mean) * rstd * g[c] + be[c];
                }
            }
        }
        self.push_aux(Op::LayerNorm { a, gamma, beta }, out, aux)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let (rows, cols) = self.value(a).rows_cols();
        assert!(start + len <= cols);
        let mut out = Tensor::zeros(&[rows, len]);
        for r in 0..rows {
            out.data[r * len..(r + 1) * len]
                .copy_from_slice(&self.value(a).data[r * cols + start..r * cols + start + len]);
        }
        self.push(Op::SliceCols { a, start, len }, out)
    }

    /// Row `t` of every length-`t_w` batch block.
    pub fn time_slice(&mut self, a: NodeId, t: usize, t_w: usize) -> NodeId {
        let (rows, cols) = self.value(a).rows_cols();
        assert_eq!(rows % t_w, 0);
        assert!(t < t_w);
        let b = rows / t_w;
        let mut out = Tensor::zeros(&[b, cols]);
        for i in 0..b {
            let src = (i * t_w + t) * cols;
            out.data[i * cols..(i + 1) * cols]
                .copy_from_slice(&self.value(a).data[src..src + cols]);
        }
        self.push(Op::TimeSlice { a, t, t_w }, out)
    }

    pub fn add_time_param(&mut self, a: NodeId, p: NodeId, t_w: usize) -> NodeId {
        let (rows, cols) = self.value(a).rows_cols();
        assert_eq!(rows % t_w, 0);
        assert_eq!(self.value(p).numel(), t_w * cols);
        let mut out = self.value(a).clone();
        let pos = &self.value(p).data;
        for r in 0..rows {
            let t = r % t_w;
            for (o, pv) in out.data[r * cols..(r + 1) * cols]
                .iter_mut()
                .zip(&pos[t * cols..(t + 1) * cols])
            {
                *o += pv;
            }
        }
        self.push(Op::AddTimeParam { a, p, t_w }, out)
    }

    /// `[b * t_w, h * dh] -> [b * h, t_w, dh]` (flattened to 2-D rows).
    pub fn head_split(&mut self, a: NodeId, heads: usize, t_w: usize) -> NodeId {
        let (rows, cols) = self.value(a).rows_cols();
        assert_eq!(rows % t_w, 0);
        assert_eq!(cols % heads, 0);
        let b = rows / t_w;
        let dh = cols / heads;
        let mut out = Tensor::zeros(&[b * heads * t_w, dh]);
        for bi in 0..b {
            for t in 0..t_w {
                for h in 0..heads {
                    let src = ((bi * t_w + t) * cols) + h * dh;
                    let dst = (((bi * heads + h) * t_w) + t) * dh;
                    out.data[dst..dst + dh]
                        .copy_from_slice(&self.value(a).data[src..src + dh]);
                }
            }
        }
        self.push(Op::HeadSplit { a, heads, t_w }, out)
    }

    /// Inverse of [`Graph::head_split`].
    pub fn head_merge(&mut self, a: NodeId, heads: usize, t_w: usize) -> NodeId {
        let (rows, dh) = self.value(a).rows_cols();
        assert_eq!(rows % (heads * t_w), 0);
        let b = rows / (heads * t_w);
        let cols = heads * dh;
        let mut out = Tensor::zeros(&[b * t_w, cols]);
        for bi in 0..b {
            for h in 0..heads {
                for t in 0..t_w {
                    let src = (((bi * heads + h) * t_w) + t) * dh;
                    let dst = ((bi * t_w + t) * cols) + h * dh;
                    out.data[dst..dst + dh]
                        .copy_from_slice(&self.value(a).data[src..src + dh]);
                }
            }
        }
        self.push(Op::HeadMerge { a, heads, t_w }, out)
    }

    /// Inverted dropout with a seeded mask; `p = 0` is the identity (no
    /// node recorded). Inference callers simply skip the op.
    pub fn dropout(&mut self, a: NodeId, p: f64, rng: &mut ChaCha8Rng) -> NodeId {
        if p <= 0.0 {
            return a;
        }
        assert!(p < 1.0, "dropout probability must be < 1");
        let keep = 1.0 - p;
        let scale = 1.0 / keep;
        let n = self.value(a).numel();
        let mut mask = Vec::with_capacity(n);
        for _ in 0..n {
            mask.push(if rng.random_range(0.0..1.0) < keep { scale } else { 0.0 });
        }
        let mut out = self.value(a).clone();
        for (o, m) in out.data.iter_mut().zip(mask.iter()) {
            *o *= m;
        }
        self.push_aux(Op::Dropout { a }, out, mask)
    }

    /// Mean squared error over all elements; the canonical training loss.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> NodeId {
        assert_eq!(self.value(pred).shape, self.value(target).shape);
        let n = self.value(pred).numel() as f64;
        let mut acc = 0.0;
        for (p, t) in self.value(pred).data.iter().zip(self.value(target).data.iter()) {
            let d = p - t;
            acc += d * d;
        }
        self.push(Op::MseLoss { pred, target }, Tensor::scalar(acc / n))
    }

    pub fn loss_value(&self, id: NodeId) -> f64 {
        self.value(id).data[0]
    }

    /// Runs the backward pass from `root` (a scalar) and returns parameter
    /// gradients, indexed like the parameter list. Missing entries mean the
    /// parameter did not participate.
    pub fn backward(self, root: NodeId) -> Result<Vec<Option<Tensor>>, SeqNetError> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[root.0 as usize] = Some(Tensor::scalar(1.0));

        for i in (0..n).rev() {
            let Some(gout) = grads[i].take() else { continue };
            if !gout.is_finite() {
                return Err(SeqNetError::NonFinite("gradient"));
            }
            // Park the node's op so we can borrow values freely.
            let op = self.nodes[i].op.clone();
            match op {
                Op::Input => {}
                Op::Param { index } => {
                    // Re-park: parameter grads are harvested at the end.
                    grads[i] = Some(gout);
                    let _ = index;
                }
                Op::MatMul { a, b } => {
                    let (m, k) = self.value(a).rows_cols();
                    let (_, nn) = self.value(b).rows_cols();
                    {
                        let ga = ensure(&mut grads, a, self.value(a).shape.clone());
                        gemm_nt_acc(m, nn, k, &gout.data, &self.value(b).data, &mut ga.data);
                    }
                    {
                        let gb = ensure(&mut grads, b, self.value(b).shape.clone());
                        gemm_tn_acc(m, k, nn, &self.value(a).data, &gout.data, &mut gb.data);
                    }
                }
                Op::Bmm { a, b, g, m, k, n, b_transposed } => {
                    if b_transposed {
                        // C = A · B^T (per group): dA += dC · B; dB += dC^T · A.
                        {
                            let ga = ensure(&mut grads, a, self.value(a).shape.clone());
                            bmm_nn_acc(g, m, n, k, &gout.data, &self.value(b).data, &mut ga.data);
                        }
                        {
                            let gb = ensure(&mut grads, b, self.value(b).shape.clone());
                            bmm_tn_acc(g, m, n, k, &gout.data, &self.value(a).data, &mut gb.data);
                        }
                    } else {
                        // C = A · B: dA += dC · B^T; dB += A^T · dC.
                        {
                            let ga = ensure(&mut grads, a, self.value(a).shape.clone());
                            bmm_nt_acc(g, m, n, k, &gout.data, &self.value(b).data, &mut ga.data);
                        }
                        {
                            let gb = ensure(&mut grads, b, self.value(b).shape.clone());
                            bmm_tn_acc(g, m, k, n, &self.value(a).data, &gout.data, &mut gb.data);
                        }
                    }
                }
                Op::AddBias { a, bias } => {
                    let (rows, cols) = self.value(a).rows_cols();
                    {
                        let ga = ensure(&mut grads, a, self.value(a).shape.clone());
                        for (gv, ov) in ga.data.iter_mut().zip(gout.data.iter()) {
                            *gv += ov;
                        }
                    }
                    {
                        let gb = ensure(&mut grads, bias, self.value(bias).shape.clone());
                        for r in 0..rows {
                            for (gv, ov) in
                                gb.data.iter_mut().zip(&gout.data[r * cols..(r + 1) * cols])
                            {
                                *gv += ov;
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    for id in [a, b] {
                        let g = ensure(&mut grads, id, self.value(id).shape.clone());
                        for (gv, ov) in g.data.iter_mut().zip(gout.data.iter()) {
                            *gv += ov;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    {
                        let bval = self.value(b).data.clone();
                        let ga = ensure(&mut grads, a, self.value(a).shape.clone());
                        for ((gv, ov), bv) in ga.data.iter_mut().zip(gout.data.iter()).zip(bval.iter()) {
                            *gv += ov * bv;
                        }
                    }
                    {
                        let aval = self.value(a).data.clone();
                        let gb = ensure(&mut grads, b, self.value(b).shape.clone());
                        for ((gv, ov), av) in gb.data.iter_mut().zip(gout.data.iter()).zip(aval.iter()) {
                            *gv += ov * av;
                        }
                    }
                }
                Op::Affine { a, mul } => {
                    let ga = ensure(&mut grads, a, self.value(a).shape.clone());
                    for (gv, ov) in ga.data.iter_mut().zip(gout.data.iter()) {
                        *gv += mul * ov;
                    }
                }
                Op::Sigmoid { a } => {
                    let y = self.nodes[i].value.as_ref().unwrap().data.clone();
                    let ga = ensure(&mut grads, a, self.value(a).shape.clone());
                    for ((gv, ov), yv) in ga.data.iter_mut().zip(gout.data.iter()).zip(y.iter()) {
                        *gv += ov * yv * (1.0 - yv);
                    }
                }
                Op::Tanh { a } => {
                    let y = self.nodes[i].value.as_ref().unwrap().data.clone();
                    let ga = ensure(&mut grads, a, self.value(a).shape.clone());
                    for ((gv, ov), yv) in ga.data.iter_mut().zip(gout.data.iter()).zip(y.iter()) {
                        *gv += ov * (1.0 - yv * yv);
                    }
                }
                Op::Relu { a } => {
                    let y = self.nodes[i].value.as_ref().unwrap().data.clone();
                    let ga = ensure(&mut grads, a, self.value(a).shape.clone());
                    for ((gv, ov), yv) in ga.data.iter_mut().zip(gout.data.iter()).zip(y.iter()) {
                        if *yv > 0.0 {
                            *gv += ov;
                        }
                    }
                }
                Op::SoftmaxRows { a } => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    let (rows, cols) = y.rows_cols();
                    let y = y.data.clone();
                    let ga = ensure(&mut grads, a, self.value(a).shape.clone());
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let or = &gout.data[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(or.iter()).map(|(a, b)| a * b).sum();
                        let gr = &mut ga.data[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            gr[c] += yr[c] * (or[c] - dot);
                        }
                    }
                }
                Op::LayerNorm { a, gamma, beta } => {
                    let (rows, cols) = self.value(a).rows_cols();
                    let aux = self.nodes[i].aux.clone();
                    let x = self.value(a).data.clone();
                    let gvals = self.value(gamma).data.clone();
                    // dbeta
                    {
                        let gb = ensure(&mut grads, beta, self.value(beta).shape.clone());
                        for r in 0..rows {
                            for (gv, ov) in
                                gb.data.iter_mut().zip(&gout.data[r * cols..(r + 1) * cols])
                            {
                                *gv += ov;
                            }
                        }
                    }
                    // dgamma
                    {
                        let gg = ensure(&mut grads, gamma, self.value(gamma).shape.clone());
                        for r in 0..rows {
                            let mean = aux[2 * r];
                            let rstd = aux[2 * r + 1];
                            let xr = &x[r * cols..(r + 1) * cols];
                            let or = &gout.data[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                gg.data[c] += or[c] * (xr[c] - mean) * rstd;
                            }
                        }
                    }
                    // dx
                    {
                        let ga = ensure(&mut grads, a, self.value(a).shape.clone());
                        for r in 0..rows {
                            let mean = aux[2 * r];
                            let rstd = aux[2 * r + 1];
                            let xr = &x[r * cols..(r + 1) * cols];
                            let or = &gout.data[r * cols..(r + 1) * cols];
                            let inv_n = 1.0 / cols as f64;
                            let mut sum_dxhat = 0.0;
                            let mut sum_dxhat_xhat = 0.0;
                            for c in 0..cols {
                                let xhat = (xr[c] - mean) * rstd;
                                let dxhat = or[c] * gvals[c];
                                sum_dxhat += dxhat;
                                sum_dxhat_xhat += dxhat * xhat;
                            }
                            let gr = &mut ga.data[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                let xhat = (xr[c] - mean) * rstd;
                                let dxhat = or[c] * gvals[c];
                                gr[c] += rstd
                                    * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
                            }
                        }
                    }
                }
                Op::SliceCols { a, start, len } => {
                    let (rows, cols) = self.value(a).rows_cols();
                    let ga = ensure(&mut grads, a, self.value(a).shape.clone());
                    for r in 0..rows {
                        for c in 0..len {
                            ga.data[r * cols + start + c] += gout.data[r * len + c];
                        }
                    }
                }
                Op::TimeSlice { a, t, t_w } => {
                    let (rows, cols) = self.value(a).rows_cols();
                    let b = rows / t_w;
                    let ga = ensure(&mut grads, a, self.value(a).shape.clone());
                    for bi in 0..b {
                        let dst = (bi * t_w + t) * cols;
                        for c in 0..cols {
                            ga.data[dst + c] += gout.data[bi * cols + c];
                        }
                    }
                }
                Op::AddTimeParam { a, p, t_w } => {
                    let (rows, cols) = self.value(a).rows_cols();
                    {
                        let ga = ensure(&mut grads, a, self.value(a).shape.clone());
                        for (gv, ov) in ga.data.iter_mut().zip(gout.data.iter()) {
                            *gv += ov;
                        }
                    }
                    {
                        let gp = ensure(&mut grads, p, self.value(p).shape.clone());
                        for r in 0..rows {
                            let t = r % t_w;
                            for c in 0..cols {
                                gp.data[t * cols + c] += gout.data[r * cols + c];
                            }
                        }
                    }
                }
                Op::HeadSplit { a, heads, t_w } => {
                    let (rows, cols) = self.value(a).rows_cols();
                    let b = rows / t_w;
                    let dh = cols / heads;
                    let ga = ensure(&mut grads, a, self.value(a).shape.clone());
                    for bi in 0..b {
                        for t in 0..t_w {
                            for h in 0..heads {
                                let dst = ((bi * t_w + t) * cols) + h * dh;
                                let src = (((bi * heads + h) * t_w) + t) * dh;
                                for c in 0..dh {
                                    ga.data[dst + c] += gout.data[src + c];
                                }
                            }
                        }
                    }
                }
                Op::HeadMerge { a, heads, t_w } => {
                    let (rows_in, dh) = self.value(a).rows_cols();
                    let b = rows_in / (heads * t_w);
                    let cols = heads * dh;
                    let ga = ensure(&mut grads, a, self.value(a).shape.clone());
                    for bi in 0..b {
                        for h in 0..heads {
                            for t in 0..t_w {
                                let dst = (((bi * heads + h) * t_w) + t) * dh;
                                let src = ((bi * t_w + t) * cols) + h * dh;
                                for c in 0..dh {
                                    ga.data[dst + c] += gout.data[src + c];
                                }
                            }
                        }
                    }
                }
                Op::Dropout { a } => {
                    let mask = self.nodes[i].aux.clone();
                    let ga = ensure(&mut grads, a, self.value(a).shape.clone());
                    for ((gv, ov), m) in ga.data.iter_mut().zip(gout.data.iter()).zip(mask.iter()) {
                        *gv += ov * m;
                    }
                }
                Op::MseLoss { pred, target } => {
                    let scale = 2.0 / self.value(pred).numel() as f64 * gout.data[0];
                    let tvals = self.value(target).data.clone();
                    let pvals = self.value(pred).data.clone();
                    let gp = ensure(&mut grads, pred, self.value(pred).shape.clone());
                    for ((gv, pv), tv) in gp.data.iter_mut().zip(pvals.iter()).zip(tvals.iter()) {
                        *gv += scale * (pv - tv);
                    }
                }
            }
        }

        // Harvest parameter gradients.
        let mut out: Vec<Option<Tensor>> = (0..self.params.len()).map(|_| None).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param { index } = node.op {
                if let Some(g) = grads[i].take() {
                    out[index] = Some(match out[index].take() {
                        None => g,
                        Some(mut acc) => {
                            for (av, gv) in acc.data.iter_mut().zip(g.data.iter()) {
                                *av += gv;
                            }
                            acc
                        }
                    });
                }
            }
        }
        Ok(out)
    }
}

fn ensure<'g>(grads: &'g mut [Option<Tensor>], id: NodeId, shape: Vec<usize>) -> &'g mut Tensor {
    let slot = &mut grads[id.0 as usize];
    if slot.is_none() {
        *slot = Some(Tensor::zeros(&shape));
    }
    slot.as_mut().unwrap()
}

/// Seeded RNG for dropout masks.
pub fn dropout_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

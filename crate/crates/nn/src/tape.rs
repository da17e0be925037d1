//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding its
//! value. [`Tape::backward`] walks the nodes in reverse, accumulating adjoints,
//! and adds the adjoints of parameter leaves into caller-owned gradient buffers.
//! Only the operations the trajectory network needs are provided; a few of them
//! (LSTM cell, attention, mixture likelihood) are fused for speed.

use waydcm_core::Point2;

use crate::mixture::nll_and_grad;
use crate::tensor::{matmul, matmul_nt_acc, matmul_tn_acc, Tensor};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(usize),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Linear { w: Var, x: Var, b: Option<Var> },
    Tanh(Var),
    Sigmoid(Var),
    LstmCell { gates: Var, c: Var },
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    GatherCols { x: Var, idx: Vec<usize> },
    RepeatCols(Var),
    Transpose(Var),
    RowSum(Var),
    Reshape(Var),
    LogSoftmax(Var),
    Pick { x: Var, index: usize },
    Attention { q: Var, k: Var, v: Var, heads: usize, weights: Tensor },
    MixtureNll { raw: Var, anchors: Vec<Point2>, scales: Vec<f64>, target: Vec<Point2> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn clear(&mut self) {
        self.nodes.clear();
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

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Const, false)
    }

    /// A leaf whose adjoint is added to gradient buffer `index` on backward.
    pub fn param(&mut self, index: usize, value: &Tensor) -> Var {
        self.push(value.clone(), Op::Param(index), true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "add shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let t = Tensor::from_vec(x.rows, x.cols, data);
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Add(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let t = Tensor::from_vec(x.rows, x.cols, data);
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let t = Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|v| v * c).collect());
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, c), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let t = matmul(self.value(a), self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(t, Op::MatMul(a, b), rg)
    }

    /// `w · x + b`, with the column vector `b` broadcast over the columns of `x`.
    pub fn linear(&mut self, w: Var, x: Var, b: Option<Var>) -> Var {
        let mut t = matmul(self.value(w), self.value(x));
        if let Some(b) = b {
            let bias = self.value(b);
            assert_eq!(bias.shape(), [t.rows, 1], "bias shape mismatch");
            for r in 0..t.rows {
                let bv = bias.data[r];
                for v in &mut t.data[r * t.cols..(r + 1) * t.cols] {
                    *v += bv;
                }
            }
        }
        let mut inputs = vec![w, x];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        self.push(t, Op::Linear { w, x, b }, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|v| v.tanh()).collect());
        let rg = self.rg(&[a]);
        self.push(t, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|&v| sigmoid(v)).collect());
        let rg = self.rg(&[a]);
        self.push(t, Op::Sigmoid(a), rg)
    }

    /// One LSTM update. `gates` stacks the input, forget, cell and output
    /// pre-activations (`4H × n`); `c` is the previous cell state (`H × n`).
    /// Returns `[h; c]` (`2H × n`).
    pub fn lstm_cell(&mut self, gates: Var, c: Var) -> Var {
        let g = self.value(gates);
        let cp = self.value(c);
        let h = cp.rows;
        let n = cp.cols;
        assert_eq!(g.shape(), [4 * h, n], "lstm gate shape mismatch");
        let mut out = Tensor::zeros(2 * h, n);
        for r in 0..h {
            for j in 0..n {
                let i = sigmoid(g.at(r, j));
                let f = sigmoid(g.at(h + r, j));
                let gg = g.at(2 * h + r, j).tanh();
                let o = sigmoid(g.at(3 * h + r, j));
                let cn = f * cp.at(r, j) + i * gg;
                *out.at_mut(r, j) = o * cn.tanh();
                *out.at_mut(h + r, j) = cn;
            }
        }
        let rg = self.rg(&[gates, c]);
        self.push(out, Op::LstmCell { gates, c }, rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.rows, "row slice out of range");
        let t = Tensor::from_vec(len, x.cols, x.data[start * x.cols..(start + len) * x.cols].to_vec());
        let rg = self.rg(&[a]);
        self.push(t, Op::SliceRows { x: a, start }, rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&x.data);
            rows += x.rows;
        }
        let rg = self.rg(parts);
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let x = self.value(a);
        let mut t = Tensor::zeros(x.rows, idx.len());
        for r in 0..x.rows {
            for (j, &c) in idx.iter().enumerate() {
                *t.at_mut(r, j) = x.at(r, c);
            }
        }
        let rg = self.rg(&[a]);
        self.push(t, Op::GatherCols { x: a, idx: idx.to_vec() }, rg)
    }

    /// Repeats a column vector `n` times.
    pub fn repeat_cols(&mut self, a: Var, n: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.cols, 1, "repeat_cols needs a column vector");
        let mut t = Tensor::zeros(x.rows, n);
        for r in 0..x.rows {
            t.data[r * n..(r + 1) * n].fill(x.data[r]);
        }
        let rg = self.rg(&[a]);
        self.push(t, Op::RepeatCols(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(t, Op::Transpose(a), rg)
    }

    /// Sums each row into a column vector.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = (0..x.rows)
            .map(|r| x.data[r * x.cols..(r + 1) * x.cols].iter().sum())
            .collect();
        let t = Tensor::from_vec(x.rows, 1, data);
        let rg = self.rg(&[a]);
        self.push(t, Op::RowSum(a), rg)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        let t = Tensor::from_vec(rows, cols, x.data.clone());
        let rg = self.rg(&[a]);
        self.push(t, Op::Reshape(a), rg)
    }

    /// Log-softmax over all entries of `a`.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + x.data.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let t = Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|v| v - lse).collect());
        let rg = self.rg(&[a]);
        self.push(t, Op::LogSoftmax(a), rg)
    }

    /// The flat entry `index` of `a` as a `1 × 1` node.
    pub fn pick(&mut self, a: Var, index: usize) -> Var {
        let t = Tensor::scalar(self.value(a).data[index]);
        let rg = self.rg(&[a]);
        self.push(t, Op::Pick { x: a, index }, rg)
    }

    /// Scaled dot-product attention, one head per block of `d` rows.
    ///
    /// `q` is `heads·d × 1`, `k` and `v` are `heads·d × m` with one column per
    /// attended item. Returns the `heads × d` matrix of per-head contexts.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let m = kv.cols;
        assert!(m > 0, "attention over zero items");
        assert_eq!(qv.rows % heads, 0);
        let d = qv.rows / heads;
        assert_eq!(kv.rows, qv.rows);
        assert_eq!(vv.shape(), kv.shape());
        let inv = 1.0 / (d as f64).sqrt();
        let mut weights = Tensor::zeros(heads, m);
        let mut out = Tensor::zeros(heads, d);
        for h in 0..heads {
            let w = &mut weights.data[h * m..(h + 1) * m];
            for (j, wj) in w.iter_mut().enumerate() {
                let mut s = 0.0;
                for r in 0..d {
                    s += qv.data[h * d + r] * kv.at(h * d + r, j);
                }
                *wj = s * inv;
            }
            let mx = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for wj in w.iter_mut() {
                *wj = (*wj - mx).exp();
                z += *wj;
            }
            for wj in w.iter_mut() {
                *wj /= z;
            }
            for r in 0..d {
                let mut s = 0.0;
                for (j, wj) in w.iter().enumerate() {
                    s += wj * vv.at(h * d + r, j);
                }
                *out.at_mut(h, r) = s;
            }
        }
        let rg = self.rg(&[q, k, v]);
        self.push(out, Op::Attention { q, k, v, heads, weights }, rg)
    }

    /// Attention weights of an attention node (`heads × m`).
    pub fn attention_weights(&self, a: Var) -> Option<&Tensor> {
        match &self.nodes[a.0].op {
            Op::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Summed Gaussian NLL of `target` under each of the `L` columns of `raw`.
    ///
    /// `raw` is `5·T × L`, step-major; `anchors` holds `T·L` points indexed
    /// `t·L + l`; `scales` has one entry per mode. Returns a `1 × L` row.
    pub fn mixture_nll(&mut self, raw: Var, anchors: Vec<Point2>, scales: Vec<f64>, target: Vec<Point2>) -> Var {
        let x = self.value(raw);
        let l = x.cols;
        let steps = target.len();
        assert_eq!(x.rows, 5 * steps, "mixture raw rows do not match the target length");
        assert_eq!(anchors.len(), steps * l);
        assert_eq!(scales.len(), l);
        let mut out = Tensor::zeros(1, l);
        for mode in 0..l {
            let mut s = 0.0;
            for (t, &y) in target.iter().enumerate() {
                let r = std::array::from_fn(|i| x.at(5 * t + i, mode));
                s += nll_and_grad(r, anchors[t * l + mode], scales[mode], y).0;
            }
            out.data[mode] = s;
        }
        let rg = self.rg(&[raw]);
        self.push(
            out,
            Op::MixtureNll {
                raw,
                anchors,
                scales,
                target,
            },
            rg,
        )
    }

    /// Back-propagates `seed · ∂root` and adds parameter adjoints into `grads`,
    /// indexed as given to [`Tape::param`].
    pub fn backward(&self, root: Var, seed: f64, grads: &mut [Tensor]) {
        let mut adj: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        let rv = &self.nodes[root.0].value;
        let mut g = Tensor::zeros(rv.rows, rv.cols);
        g.fill(seed);
        adj[root.0] = Some(g);

        for id in (0..=root.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut adj, grads);
        }
    }

    fn accumulate<'a>(&self, adj: &'a mut [Option<Tensor>], v: Var) -> Option<&'a mut Tensor> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(adj[v.0].get_or_insert_with(|| Tensor::zeros(node.value.rows, node.value.cols)))
    }

    fn propagate(&self, node: &Node, g: &Tensor, adj: &mut [Option<Tensor>], grads: &mut [Tensor]) {
        match &node.op {
            Op::Const => {}
            Op::Param(i) => grads[*i].add_assign(g),
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(t) = self.accumulate(adj, v) {
                        t.add_assign(g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(t) = self.accumulate(adj, *a) {
                    for ((d, gi), y) in t.data.iter_mut().zip(&g.data).zip(&bv.data) {
                        *d += gi * y;
                    }
                }
                if let Some(t) = self.accumulate(adj, *b) {
                    for ((d, gi), x) in t.data.iter_mut().zip(&g.data).zip(&av.data) {
                        *d += gi * x;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(t) = self.accumulate(adj, *a) {
                    for (d, gi) in t.data.iter_mut().zip(&g.data) {
                        *d += gi * c;
                    }
                }
            }
            Op::MatMul(a, b) => self.matmul_backward(*a, *b, g, adj),
            Op::Linear { w, x, b } => {
                self.matmul_backward(*w, *x, g, adj);
                if let Some(b) = b {
                    if let Some(t) = self.accumulate(adj, *b) {
                        for r in 0..g.rows {
                            t.data[r] += g.data[r * g.cols..(r + 1) * g.cols].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(t) = self.accumulate(adj, *a) {
                    for ((d, gi), y) in t.data.iter_mut().zip(&g.data).zip(&node.value.data) {
                        *d += gi * (1.0 - y * y);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(t) = self.accumulate(adj, *a) {
                    for ((d, gi), y) in t.data.iter_mut().zip(&g.data).zip(&node.value.data) {
                        *d += gi * y * (1.0 - y);
                    }
                }
            }
            Op::LstmCell { gates, c } => self.lstm_backward(node, *gates, *c, g, adj),
            Op::SliceRows { x, start } => {
                if let Some(t) = self.accumulate(adj, *x) {
                    let off = start * g.cols;
                    for (d, gi) in t.data[off..off + g.data.len()].iter_mut().zip(&g.data) {
                        *d += gi;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).data.len();
                    if let Some(t) = self.accumulate(adj, p) {
                        for (d, gi) in t.data.iter_mut().zip(&g.data[off..off + n]) {
                            *d += gi;
                        }
                    }
                    off += n;
                }
            }
            Op::GatherCols { x, idx } => {
                if let Some(t) = self.accumulate(adj, *x) {
                    for r in 0..g.rows {
                        for (j, &c) in idx.iter().enumerate() {
                            *t.at_mut(r, c) += g.at(r, j);
                        }
                    }
                }
            }
            Op::RepeatCols(a) => {
                if let Some(t) = self.accumulate(adj, *a) {
                    for r in 0..g.rows {
                        t.data[r] += g.data[r * g.cols..(r + 1) * g.cols].iter().sum::<f64>();
                    }
                }
            }
            Op::Transpose(a) => {
                if let Some(t) = self.accumulate(adj, *a) {
                    t.add_assign(&g.transpose());
                }
            }
            Op::RowSum(a) => {
                if let Some(t) = self.accumulate(adj, *a) {
                    let cols = t.cols;
                    for r in 0..t.rows {
                        for d in &mut t.data[r * cols..(r + 1) * cols] {
                            *d += g.data[r];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(t) = self.accumulate(adj, *a) {
                    for (d, gi) in t.data.iter_mut().zip(&g.data) {
                        *d += gi;
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if let Some(t) = self.accumulate(adj, *a) {
                    let total: f64 = g.data.iter().sum();
                    for ((d, gi), y) in t.data.iter_mut().zip(&g.data).zip(&node.value.data) {
                        *d += gi - y.exp() * total;
                    }
                }
            }
            Op::Pick { x, index } => {
                if let Some(t) = self.accumulate(adj, *x) {
                    t.data[*index] += g.data[0];
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                weights,
            } => self.attention_backward(*q, *k, *v, *heads, weights, g, adj),
            Op::MixtureNll {
                raw,
                anchors,
                scales,
                target,
            } => {
                let x = self.value(*raw);
                let l = x.cols;
                if let Some(t) = self.accumulate(adj, *raw) {
                    for mode in 0..l {
                        let gm = g.data[mode];
                        if gm == 0.0 {
                            continue;
                        }
                        for (step, &y) in target.iter().enumerate() {
                            let r = std::array::from_fn(|i| x.at(5 * step + i, mode));
                            let (_, d) = nll_and_grad(r, anchors[step * l + mode], scales[mode], y);
                            for (i, di) in d.iter().enumerate() {
                                *t.at_mut(5 * step + i, mode) += gm * di;
                            }
                        }
                    }
                }
            }
        }
    }

    fn matmul_backward(&self, a: Var, b: Var, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let (av, bv) = (self.value(a), self.value(b));
        if let Some(t) = self.accumulate(adj, a) {
            matmul_nt_acc(g, bv, t);
        }
        if let Some(t) = self.accumulate(adj, b) {
            matmul_tn_acc(av, g, t);
        }
    }

    fn lstm_backward(&self, node: &Node, gates: Var, c: Var, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let gv = self.value(gates);
        let cp = self.value(c);
        let h = cp.rows;
        let n = cp.cols;
        let mut dg = Tensor::zeros(4 * h, n);
        let mut dc = Tensor::zeros(h, n);
        for r in 0..h {
            for j in 0..n {
                let i = sigmoid(gv.at(r, j));
                let f = sigmoid(gv.at(h + r, j));
                let gg = gv.at(2 * h + r, j).tanh();
                let o = sigmoid(gv.at(3 * h + r, j));
                let cn = node.value.at(h + r, j);
                let th = cn.tanh();
                let dh = g.at(r, j);
                let dct = g.at(h + r, j) + dh * o * (1.0 - th * th);
                *dg.at_mut(r, j) = dct * gg * i * (1.0 - i);
                *dg.at_mut(h + r, j) = dct * cp.at(r, j) * f * (1.0 - f);
                *dg.at_mut(2 * h + r, j) = dct * i * (1.0 - gg * gg);
                *dg.at_mut(3 * h + r, j) = dh * th * o * (1.0 - o);
                *dc.at_mut(r, j) = dct * f;
            }
        }
        if let Some(t) = self.accumulate(adj, gates) {
            t.add_assign(&dg);
        }
        if let Some(t) = self.accumulate(adj, c) {
            t.add_assign(&dc);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        weights: &Tensor,
        g: &Tensor,
        adj: &mut [Option<Tensor>],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let m = kv.cols;
        let d = qv.rows / heads;
        let inv = 1.0 / (d as f64).sqrt();
        let mut dq = Tensor::zeros(qv.rows, 1);
        let mut dk = Tensor::zeros(kv.rows, m);
        let mut dv = Tensor::zeros(vv.rows, m);
        let mut dw = vec![0.0; m];
        for h in 0..heads {
            let w = &weights.data[h * m..(h + 1) * m];
            for (j, dwj) in dw.iter_mut().enumerate() {
                let mut s = 0.0;
                for r in 0..d {
                    let gr = g.at(h, r);
                    s += gr * vv.at(h * d + r, j);
                    *dv.at_mut(h * d + r, j) += w[j] * gr;
                }
                *dwj = s;
            }
            let dot: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
            for j in 0..m {
                let ds = w[j] * (dw[j] - dot) * inv;
                for r in 0..d {
                    dq.data[h * d + r] += ds * kv.at(h * d + r, j);
                    *dk.at_mut(h * d + r, j) += ds * qv.data[h * d + r];
                }
            }
        }
        for (var, t) in [(q, dq), (k, dk), (v, dv)] {
            if let Some(a) = self.accumulate(adj, var) {
                a.add_assign(&t);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Tensor::from_vec(rows, cols, data)
    }

    /// Checks the gradient of `f(params)` (a scalar node) against central
    /// differences for every entry of every parameter.
    fn check(params: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().enumerate().map(|(i, p)| tape.param(i, p)).collect();
        let out = f(&mut tape, &vars);
        let mut grads: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect();
        tape.backward(out, 1.0, &mut grads);
        let eval = |ps: &[Tensor]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ps.iter().enumerate().map(|(i, p)| t.param(i, p)).collect();
            let o = f(&mut t, &vs);
            t.value(o).item()
        };
        let h = 1e-6;
        for (pi, p) in params.iter().enumerate() {
            for e in 0..p.len() {
                let mut up = params.to_vec();
                let mut down = params.to_vec();
                up[pi].data[e] += h;
                down[pi].data[e] -= h;
                let fd = (eval(&up) - eval(&down)) / (2.0 * h);
                let an = grads[pi].data[e];
                let tol = 1e-6 * fd.abs().max(an.abs()) + 1e-9;
                assert!((fd - an).abs() < tol, "param {pi} entry {e}: analytic {an} numeric {fd}");
            }
        }
    }

    #[test]
    fn elementwise_and_linear_ops() {
        let params = [rand_tensor(3, 4, 1), rand_tensor(4, 2, 2), rand_tensor(3, 1, 3), rand_tensor(3, 2, 4)];
        check(&params, |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]));
            let y = t.tanh(y);
            let z = t.mul(y, v[3]);
            let z = t.sigmoid(z);
            let m = t.matmul(v[0], v[1]);
            let s = t.add(z, m);
            let s = t.scale(s, 0.7);
            let tr = t.transpose(s);
            let rs = t.row_sum(tr);
            let ls = t.log_softmax(rs);
            t.pick(ls, 1)
        });
    }

    #[test]
    fn structural_ops() {
        let params = [rand_tensor(4, 3, 5), rand_tensor(2, 1, 6)];
        check(&params, |t, v| {
            let a = t.slice_rows(v[0], 1, 2);
            let b = t.gather_cols(a, &[2, 0, 2]);
            let r = t.repeat_cols(v[1], 3);
            let c = t.concat_rows(&[b, r, b]);
            let c = t.reshape(c, 3, 6);
            let c = t.tanh(c);
            let s = t.row_sum(c);
            let s = t.log_softmax(s);
            t.pick(s, 2)
        });
    }

    #[test]
    fn lstm_cell_gradient() {
        let params = [rand_tensor(12, 2, 7), rand_tensor(3, 2, 8), rand_tensor(1, 3, 9)];
        check(&params, |t, v| {
            let hc = t.lstm_cell(v[0], v[1]);
            let c = t.slice_rows(hc, 3, 3);
            let hc2 = t.lstm_cell(v[0], c);
            let h = t.slice_rows(hc2, 0, 3);
            let y = t.matmul(v[2], h);
            let y = t.log_softmax(y);
            t.pick(y, 0)
        });
    }

    #[test]
    fn attention_gradient_and_simplex() {
        let params = [rand_tensor(6, 1, 10), rand_tensor(6, 4, 11), rand_tensor(6, 4, 12)];
        check(&params, |t, v| {
            let a = t.attention(v[0], v[1], v[2], 3);
            let a = t.tanh(a);
            let s = t.row_sum(a);
            let s = t.log_softmax(s);
            t.pick(s, 1)
        });
        let mut t = Tape::new();
        let v: Vec<Var> = params.iter().enumerate().map(|(i, p)| t.param(i, p)).collect();
        let a = t.attention(v[0], v[1], v[2], 3);
        let w = t.attention_weights(a).unwrap();
        for h in 0..3 {
            let s: f64 = w.data[h * 4..(h + 1) * 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_item_attention_copies_its_value() {
        let mut t = Tape::new();
        let q = t.constant(rand_tensor(4, 1, 1));
        let k = t.constant(rand_tensor(4, 1, 2));
        let vt = rand_tensor(4, 1, 3);
        let v = t.constant(vt.clone());
        let a = t.attention(q, k, v, 2);
        assert_eq!(t.attention_weights(a).unwrap().data, vec![1.0, 1.0]);
        assert_eq!(t.value(a).data, vt.data);
    }

    #[test]
    fn mixture_nll_gradient() {
        let params = [rand_tensor(15, 2, 13)];
        let anchors = (0..6).map(|i| Point2::new(i as f64, -(i as f64))).collect::<Vec<_>>();
        let target = vec![Point2::new(0.5, 0.1), Point2::new(1.2, -0.8), Point2::new(2.0, -2.5)];
        check(&params, |t, v| {
            let n = t.mixture_nll(v[0], anchors.clone(), vec![1.5, 2.0], target.clone());
            let s = t.log_softmax(n);
            t.pick(s, 0)
        });
    }

    #[test]
    fn constants_receive_no_gradient_work() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::scalar(2.0));
        let p = t.param(0, &Tensor::scalar(3.0));
        let y = t.mul(a, p);
        let mut grads = vec![Tensor::zeros(1, 1)];
        t.backward(y, 1.0, &mut grads);
        assert_eq!(grads[0].item(), 2.0);
    }
}

//! A small reverse-mode autodiff tape over row-major `f64` matrices, with
//! the fused operations the model needs.

use ndarray::{s, Array2, Axis, Zip};

pub type NodeId = usize;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

enum Op {
    Leaf,
    Param(usize),
    /// Rows of `table`; `None` gives a zero row.
    Gather {
        table: NodeId,
        idx: Vec<Option<usize>>,
    },
    Add(NodeId, NodeId),
    /// Adds a `1 x n` row to every row.
    AddRow(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    ConcatRows(Vec<NodeId>),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Array2<f64>,
        rstd: Vec<f64>,
    },
    Gelu(NodeId),
    Dropout {
        x: NodeId,
        mask: Array2<f64>,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        heads: usize,
        probs: Vec<Array2<f64>>,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<Option<usize>>,
        probs: Array2<f64>,
    },
    Scale(NodeId, f64),
}

struct Node {
    value: Option<Array2<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Records operations against a borrowed parameter set.
pub struct Tape<'p> {
    params: &'p [Array2<f64>],
    param_nodes: Vec<Option<NodeId>>,
    nodes: Vec<Node>,
}

/// Gradients from one backward pass.
pub struct Grads {
    pub params: Vec<Option<Array2<f64>>>,
    nodes: Vec<Option<Array2<f64>>>,
}

impl Grads {
    /// Gradient reaching a node; `None` if nothing flowed into it.
    pub fn node(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.nodes[id].as_ref()
    }
}

fn softmax_row_masked(row: &mut [f64], allowed: impl Fn(usize) -> bool) {
    let max = row.iter().enumerate().filter(|(j, _)| allowed(*j)).map(|(_, x)| *x).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut sum = 0.0;
    for (j, x) in row.iter_mut().enumerate() {
        *x = if allowed(j) { (*x - max).exp() } else { 0.0 };
        sum += *x;
    }
    row.iter_mut().for_each(|x| *x /= sum);
}

/// Row-wise softmax; no entry masked.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        softmax_row_masked(row.as_slice_mut().expect("standard layout"), |_| true);
    }
    p
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Array2<f64>]) -> Self {
        Self { params, param_nodes: vec![None; params.len()], nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        match self.nodes[id].op {
            Op::Param(p) => &self.params[p],
            _ => self.nodes[id].value.as_ref().expect("non-param nodes hold values"),
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node { value: Some(value), op, requires_grad });
        self.nodes.len() - 1
    }

    /// A value gradients do not flow through.
    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.nodes.push(Node { value: Some(value), op: Op::Leaf, requires_grad: false });
        self.nodes.len() - 1
    }

    /// A leaf whose gradient is reported by [`Grads::node`].
    pub fn input(&mut self, value: Array2<f64>) -> NodeId {
        self.nodes.push(Node { value: Some(value), op: Op::Leaf, requires_grad: true });
        self.nodes.len() - 1
    }

    pub fn param(&mut self, p: usize) -> NodeId {
        if let Some(id) = self.param_nodes[p] {
            return id;
        }
        self.nodes.push(Node { value: None, op: Op::Param(p), requires_grad: true });
        let id = self.nodes.len() - 1;
        self.param_nodes[p] = Some(id);
        id
    }

    pub fn gather(&mut self, table: NodeId, idx: Vec<Option<usize>>) -> NodeId {
        let t = self.value(table);
        let mut out = Array2::zeros((idx.len(), t.ncols()));
        for (r, i) in idx.iter().enumerate() {
            if let Some(i) = i {
                out.row_mut(r).assign(&t.row(*i));
            }
        }
        self.push(out, Op::Gather { table, idx }, &[table])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row), &[a, row])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("equal widths");
        let inputs = parts.clone();
        self.push(v, Op::ConcatRows(parts), &inputs)
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut rstd = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let r = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * r);
            rstd.push(r);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta])
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        self.push(v, Op::Gelu(x), &[x])
    }

    /// Multiplies by a fixed mask (already scaled by `1 / keep`).
    pub fn dropout(&mut self, x: NodeId, mask: Array2<f64>) -> NodeId {
        let v = self.value(x) * &mask;
        self.push(v, Op::Dropout { x, mask }, &[x])
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x) * c;
        self.push(v, Op::Scale(x, c), &[x])
    }

    /// Multi-head scaled dot-product attention of already projected
    /// queries, keys and values. `mask[[i, j]]` allows query `i` to see key
    /// `j`; a query that sees nothing gets a zero row.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize, mask: &Array2<bool>) -> NodeId {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros((qv.nrows(), d));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut p = qv.slice(cols).dot(&kv.slice(cols).t()) * scale;
            for (i, mut row) in p.rows_mut().into_iter().enumerate() {
                softmax_row_masked(row.as_slice_mut().expect("standard layout"), |j| mask[[i, j]]);
            }
            out.slice_mut(cols).assign(&p.dot(&vv.slice(cols)));
            probs.push(p);
        }
        self.push(out, Op::Attention { q, k, v, heads, probs }, &[q, k, v])
    }

    /// Summed negative log-likelihood of the present targets (a `1 x 1` node).
    pub fn cross_entropy(&mut self, logits: NodeId, targets: Vec<Option<usize>>) -> NodeId {
        let probs = softmax_rows(self.value(logits));
        let mut loss = 0.0;
        for (i, t) in targets.iter().enumerate() {
            if let Some(t) = t {
                loss -= probs[[i, *t]].max(f64::MIN_POSITIVE).ln();
            }
        }
        self.push(Array2::from_elem((1, 1), loss), Op::CrossEntropy { logits, targets, probs }, &[logits])
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id)[[0, 0]]
    }

    /// Backpropagates from a `1 x 1` node.
    pub fn backward(&self, root: NodeId) -> Grads {
        let mut g: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[root] = Some(Array2::ones((1, 1)));
        let acc = |g: &mut Vec<Option<Array2<f64>>>, id: NodeId, delta: Array2<f64>| {
            if !self.nodes[id].requires_grad {
                return;
            }
            match &mut g[id] {
                Some(x) => *x += &delta,
                slot => *slot = Some(delta),
            }
        };
        for id in (0..=root).rev() {
            let Some(gy) = g[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf | Op::Param(_) => {}
                Op::Gather { table, idx } => {
                    if self.nodes[*table].requires_grad {
                        let mut gt = Array2::zeros(self.value(*table).raw_dim());
                        for (r, i) in idx.iter().enumerate() {
                            if let Some(i) = i {
                                let mut row = gt.row_mut(*i);
                                row += &gy.row(r);
                            }
                        }
                        acc(&mut g, *table, gt);
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut g, *a, gy.clone());
                    acc(&mut g, *b, gy.clone());
                }
                Op::AddRow(a, b) => {
                    acc(&mut g, *b, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut g, *a, gy.clone());
                }
                Op::MatMul(a, b) => {
                    if self.nodes[*a].requires_grad {
                        acc(&mut g, *a, gy.dot(&self.value(*b).t()));
                    }
                    if self.nodes[*b].requires_grad {
                        acc(&mut g, *b, self.value(*a).t().dot(&gy));
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let n = self.value(p).nrows();
                        acc(&mut g, p, gy.slice(s![start..start + n, ..]).to_owned());
                        start += n;
                    }
                }
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    acc(&mut g, *beta, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut g, *gamma, (&gy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    if self.nodes[*x].requires_grad {
                        let dxhat = &gy * self.value(*gamma);
                        let n = xhat.ncols() as f64;
                        let mut dx = Array2::zeros(xhat.raw_dim());
                        for (i, &r) in rstd.iter().enumerate() {
                            let (dr, xr) = (dxhat.row(i), xhat.row(i));
                            let m1 = dr.sum() / n;
                            let m2 = dr.dot(&xr) / n;
                            Zip::from(dx.row_mut(i))
                                .and(&dr)
                                .and(&xr)
                                .for_each(|o, &d, &xh| *o = r * (d - m1 - xh * m2));
                        }
                        acc(&mut g, *x, dx);
                    }
                }
                Op::Gelu(x) => {
                    let mut dx = self.value(*x).mapv(|x| {
                        let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
                        0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
                    });
                    dx *= &gy;
                    acc(&mut g, *x, dx);
                }
                Op::Dropout { x, mask } => acc(&mut g, *x, &gy * mask),
                Op::Scale(x, c) => acc(&mut g, *x, &gy * *c),
                Op::Attention { q, k, v, heads, probs } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let d = qv.ncols();
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Array2::zeros(qv.raw_dim());
                    let mut dk = Array2::zeros(kv.raw_dim());
                    let mut dv = Array2::zeros(vv.raw_dim());
                    for (h, p) in probs.iter().enumerate() {
                        let cols = s![.., h * dh..(h + 1) * dh];
                        let go = gy.slice(cols);
                        dv.slice_mut(cols).assign(&p.t().dot(&go));
                        let dp = go.dot(&vv.slice(cols).t());
                        let mut ds = &dp * p;
                        for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                            let total = row.sum();
                            Zip::from(&mut row).and(&prow).for_each(|x, &pi| *x -= pi * total);
                        }
                        dq.slice_mut(cols).assign(&(ds.dot(&kv.slice(cols)) * scale));
                        dk.slice_mut(cols).assign(&(ds.t().dot(&qv.slice(cols)) * scale));
                    }
                    acc(&mut g, *q, dq);
                    acc(&mut g, *k, dk);
                    acc(&mut g, *v, dv);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let scale = gy[[0, 0]];
                    let mut dl = Array2::zeros(probs.raw_dim());
                    for (i, t) in targets.iter().enumerate() {
                        if let Some(t) = t {
                            let mut row = dl.row_mut(i);
                            row.assign(&probs.row(i));
                            row[*t] -= 1.0;
                            row *= scale;
                        }
                    }
                    acc(&mut g, *logits, dl);
                }
            }
            g[id] = Some(gy);
        }
        let params = self.param_nodes.iter().map(|n| n.and_then(|id| g[id].clone())).collect();
        Grads { params, nodes: g }
    }
}

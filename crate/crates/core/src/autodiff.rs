//! Reverse-mode differentiation over row-major `f64` matrices.
//!
//! A [`Graph`] records operations as they execute. Frozen weights enter as
//! borrowed constants and never receive gradients; only leaves created with
//! `trainable = true` (and whatever depends on them) are differentiated.
//! [`Graph::backward`] accepts several seeds at once so one graph can be the
//! tail of a larger chain rule split across graphs.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

pub type Matrix = Array2<f64>;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<'a> {
    Leaf,
    Linear {
        x: NodeId,
        w: &'a Matrix,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    /// `a · bᵀ`
    MatMulT {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    AddRow {
        x: NodeId,
        row: NodeId,
    },
    Scale {
        x: NodeId,
        s: NodeId,
    },
    ExpClamped {
        x: NodeId,
        max: f64,
    },
    LayerNorm {
        x: NodeId,
        gamma: &'a Array1<f64>,
        xhat: Matrix,
        inv_std: Array1<f64>,
    },
    Gelu {
        x: NodeId,
    },
    Attention {
        qkv: NodeId,
        heads: usize,
        probs: Vec<Matrix>,
    },
    ConcatRows {
        parts: Vec<NodeId>,
    },
    SliceRows {
        x: NodeId,
        start: usize,
    },
    MeanRows {
        x: NodeId,
    },
    L2NormRows {
        x: NodeId,
        norms: Array1<f64>,
    },
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Matrix,
    },
}

struct Node<'a> {
    value: Matrix,
    op: Op<'a>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by one backward sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads[id.0].as_ref()
    }

    /// Gradient of `id`, or zeros shaped like `shape` if nothing flowed there.
    pub fn get_or_zeros(&self, id: NodeId, shape: (usize, usize)) -> Matrix {
        self.get(id).cloned().unwrap_or_else(|| Matrix::zeros(shape))
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let t = (C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_rows_inplace(m: &mut Matrix) {
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op<'a>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.dim()
    }

    /// Input or parameter. Gradients are tracked only when `trainable`.
    pub fn leaf(&mut self, value: Matrix, trainable: bool) -> NodeId {
        self.push(value, Op::Leaf, trainable)
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.leaf(value, false)
    }

    /// `x · w + b` with frozen `w` (`[in × out]`) and `b`.
    pub fn linear(&mut self, x: NodeId, w: &'a Matrix, b: Option<&'a Array1<f64>>) -> NodeId {
        let mut value = self.value(x).dot(w);
        if let Some(b) = b {
            value += b;
        }
        let needs = self.needs(x);
        self.push(value, Op::Linear { x, w }, needs)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).dot(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul { a, b }, needs)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).dot(&self.value(b).t());
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMulT { a, b }, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let value = self.value(a) + self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add { a, b }, needs)
    }

    /// Adds a `1 × n` row to every row of `x`.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> NodeId {
        assert_eq!(self.shape(row).0, 1, "add_row expects a single row");
        let value = self.value(x) + &self.value(row).row(0);
        let needs = self.needs(x) || self.needs(row);
        self.push(value, Op::AddRow { x, row }, needs)
    }

    /// Multiplies `x` by the `1 × 1` node `s`.
    pub fn scale(&mut self, x: NodeId, s: NodeId) -> NodeId {
        let factor = self.value(s)[[0, 0]];
        let value = self.value(x) * factor;
        let needs = self.needs(x) || self.needs(s);
        self.push(value, Op::Scale { x, s }, needs)
    }

    /// `exp(min(x, max))` elementwise; no gradient flows where clamped.
    pub fn exp_clamped(&mut self, x: NodeId, max: f64) -> NodeId {
        let value = self.value(x).mapv(|v| v.min(max).exp());
        let needs = self.needs(x);
        self.push(value, Op::ExpClamped { x, max }, needs)
    }

    /// Per-row layer normalization with frozen affine parameters.
    pub fn layer_norm(&mut self, x: NodeId, gamma: &'a Array1<f64>, beta: &'a Array1<f64>) -> NodeId {
        let input = self.value(x);
        let (rows, cols) = input.dim();
        let mut xhat = Matrix::zeros((rows, cols));
        let mut inv_std = Array1::zeros(rows);
        for (r, row) in input.rows().into_iter().enumerate() {
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = inv;
            for (c, v) in row.iter().enumerate() {
                xhat[[r, c]] = (v - mean) * inv;
            }
        }
        let value = &xhat * gamma + beta;
        let needs = self.needs(x);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                xhat,
                inv_std,
            },
            needs,
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).mapv(gelu);
        let needs = self.needs(x);
        self.push(value, Op::Gelu { x }, needs)
    }

    /// Multi-head self-attention core. `qkv` is `[n × 3w]` laid out as
    /// `[q | k | v]`; the result is `[n × w]` with heads side by side.
    pub fn attention(&mut self, qkv: NodeId, heads: usize, causal: bool) -> NodeId {
        let input = self.value(qkv);
        let (n, three_w) = input.dim();
        assert_eq!(three_w % 3, 0, "qkv width must be a multiple of 3");
        let width = three_w / 3;
        assert_eq!(width % heads, 0, "width must divide into heads");
        let d = width / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut out = Matrix::zeros((n, width));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let q = input.slice(s![.., h * d..(h + 1) * d]);
            let k = input.slice(s![.., width + h * d..width + (h + 1) * d]);
            let v = input.slice(s![.., 2 * width + h * d..2 * width + (h + 1) * d]);
            let mut scores = q.dot(&k.t()) * scale;
            if causal {
                for i in 0..n {
                    for j in i + 1..n {
                        scores[[i, j]] = f64::NEG_INFINITY;
                    }
                }
            }
            softmax_rows_inplace(&mut scores);
            out.slice_mut(s![.., h * d..(h + 1) * d]).assign(&scores.dot(&v));
            probs.push(scores);
        }
        let needs = self.needs(qkv);
        self.push(out, Op::Attention { qkv, heads, probs }, needs)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows width mismatch");
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(
            value,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            needs,
        )
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, end: usize) -> NodeId {
        let value = self.value(x).slice(s![start..end, ..]).to_owned();
        let needs = self.needs(x);
        self.push(value, Op::SliceRows { x, start }, needs)
    }

    /// Column means as a `1 × n` row.
    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let value = self
            .value(x)
            .mean_axis(Axis(0))
            .expect("mean of zero rows")
            .insert_axis(Axis(0));
        let needs = self.needs(x);
        self.push(value, Op::MeanRows { x }, needs)
    }

    /// Scales each row to unit L2 norm.
    pub fn l2_normalize_rows(&mut self, x: NodeId) -> NodeId {
        let input = self.value(x);
        let norms: Array1<f64> = input
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .collect();
        let mut value = input.clone();
        for (mut row, &n) in value.rows_mut().into_iter().zip(&norms) {
            row /= n;
        }
        let needs = self.needs(x);
        self.push(value, Op::L2NormRows { x, norms }, needs)
    }

    /// Mean softmax cross-entropy of `logits` rows against `labels`, `1 × 1`.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> NodeId {
        let mut probs = self.value(logits).clone();
        assert_eq!(probs.nrows(), labels.len(), "one label per row");
        softmax_rows_inplace(&mut probs);
        let l = self.value(logits);
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = l.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let value = Matrix::from_elem((1, 1), total / labels.len() as f64);
        let needs = self.needs(logits);
        self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        )
    }

    /// Propagates the given output gradients back through the graph.
    pub fn backward(&self, seeds: &[(NodeId, Matrix)]) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, seed) in seeds {
            assert_eq!(seed.dim(), self.shape(*id), "seed shape mismatch");
            accumulate(&mut grads, *id, seed.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node<'a>, dy: &Matrix, grads: &mut [Option<Matrix>]) {
        let needs = |id: NodeId| self.nodes[id.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w } => {
                if needs(*x) {
                    accumulate(grads, *x, dy.dot(&w.t()));
                }
            }
            Op::MatMul { a, b } => {
                if needs(*a) {
                    accumulate(grads, *a, dy.dot(&self.value(*b).t()));
                }
                if needs(*b) {
                    accumulate(grads, *b, self.value(*a).t().dot(dy));
                }
            }
            Op::MatMulT { a, b } => {
                if needs(*a) {
                    accumulate(grads, *a, dy.dot(self.value(*b)));
                }
                if needs(*b) {
                    accumulate(grads, *b, dy.t().dot(self.value(*a)));
                }
            }
            Op::Add { a, b } => {
                if needs(*a) {
                    accumulate(grads, *a, dy.clone());
                }
                if needs(*b) {
                    accumulate(grads, *b, dy.clone());
                }
            }
            Op::AddRow { x, row } => {
                if needs(*x) {
                    accumulate(grads, *x, dy.clone());
                }
                if needs(*row) {
                    accumulate(grads, *row, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Scale { x, s } => {
                let factor = self.value(*s)[[0, 0]];
                if needs(*x) {
                    accumulate(grads, *x, dy * factor);
                }
                if needs(*s) {
                    let ds = (dy * self.value(*x)).sum();
                    accumulate(grads, *s, Matrix::from_elem((1, 1), ds));
                }
            }
            Op::ExpClamped { x, max } => {
                let input = self.value(*x);
                let mut dx = dy * &node.value;
                ndarray::Zip::from(&mut dx)
                    .and(input)
                    .for_each(|g, &v| {
                        if v >= *max {
                            *g = 0.0;
                        }
                    });
                accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                xhat,
                inv_std,
            } => {
                let cols = xhat.ncols() as f64;
                let dxhat = dy * *gamma;
                let mut dx = Matrix::zeros(dxhat.dim());
                for r in 0..dxhat.nrows() {
                    let g = dxhat.row(r);
                    let h = xhat.row(r);
                    let mean_g = g.sum() / cols;
                    let mean_gh = g.dot(&h) / cols;
                    for c in 0..dxhat.ncols() {
                        dx[[r, c]] = inv_std[r] * (g[c] - mean_g - h[c] * mean_gh);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Gelu { x } => {
                let mut dx = self.value(*x).mapv(gelu_grad);
                dx *= dy;
                accumulate(grads, *x, dx);
            }
            Op::Attention { qkv, heads, probs } => {
                let input = self.value(*qkv);
                let (n, three_w) = input.dim();
                let width = three_w / 3;
                let d = width / heads;
                let scale = 1.0 / (d as f64).sqrt();
                let mut dqkv = Matrix::zeros((n, three_w));
                for (h, p) in probs.iter().enumerate() {
                    let q = input.slice(s![.., h * d..(h + 1) * d]);
                    let k = input.slice(s![.., width + h * d..width + (h + 1) * d]);
                    let v = input.slice(s![.., 2 * width + h * d..2 * width + (h + 1) * d]);
                    let dout = dy.slice(s![.., h * d..(h + 1) * d]);
                    let dp = dout.dot(&v.t());
                    let dv = p.t().dot(&dout);
                    let mut ds = p * &dp;
                    for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                        let dot = row.sum();
                        row.zip_mut_with(&prow, |g, &pv| *g -= pv * dot);
                    }
                    ds *= scale;
                    let dq = ds.dot(&k);
                    let dk = ds.t().dot(&q);
                    dqkv.slice_mut(s![.., h * d..(h + 1) * d]).assign(&dq);
                    dqkv.slice_mut(s![.., width + h * d..width + (h + 1) * d])
                        .assign(&dk);
                    dqkv.slice_mut(s![.., 2 * width + h * d..2 * width + (h + 1) * d])
                        .assign(&dv);
                }
                accumulate(grads, *qkv, dqkv);
            }
            Op::ConcatRows { parts } => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.nodes[p.0].value.nrows();
                    if needs(p) {
                        accumulate(grads, p, dy.slice(s![start..start + rows, ..]).to_owned());
                    }
                    start += rows;
                }
            }
            Op::SliceRows { x, start } => {
                let mut dx = Matrix::zeros(self.shape(*x));
                let rows = dy.nrows();
                dx.slice_mut(s![*start..*start + rows, ..]).assign(dy);
                accumulate(grads, *x, dx);
            }
            Op::MeanRows { x } => {
                let rows = self.shape(*x).0;
                let row = dy.row(0).mapv(|v| v / rows as f64);
                let dx = row.broadcast((rows, row.len())).unwrap().to_owned();
                accumulate(grads, *x, dx);
            }
            Op::L2NormRows { x, norms } => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.dim());
                for r in 0..y.nrows() {
                    let yr = y.row(r);
                    let gr = dy.row(r);
                    let proj = yr.dot(&gr);
                    for c in 0..y.ncols() {
                        dx[[r, c]] = (gr[c] - yr[c] * proj) / norms[r];
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let upstream = dy[[0, 0]] / labels.len() as f64;
                let mut dl = probs.clone();
                for (i, &y) in labels.iter().enumerate() {
                    dl[[i, y]] -= 1.0;
                }
                dl *= upstream;
                accumulate(grads, *logits, dl);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut grads[id.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

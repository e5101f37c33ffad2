//! Reverse-mode autodiff over 2-D arrays.
//!
//! Every tensor in the crate is an `Array2<F>` (tokens x channels; scalars
//! are 1x1). A `Graph` is a tape: forward methods append nodes and compute
//! values eagerly, `backward` walks the tape once in reverse. The op set is
//! exactly what the attention blocks and losses need, each with a
//! hand-written adjoint; the f64 finite-difference suite pins them down.

use ndarray::{s, Array2, Axis};

use crate::scalar::{s as sc, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<F: Scalar> {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, F),
    /// x (n x c) + row (1 x c), broadcast over rows.
    AddRow(NodeId, NodeId),
    /// x (n x c) * row (1 x c), broadcast over rows.
    MulRow(NodeId, NodeId),
    /// Elementwise product with a constant array.
    MulMask(NodeId, Array2<F>),
    Transpose(NodeId),
    SoftmaxRows(NodeId),
    LayerNormRows {
        x: NodeId,
        inv_std: Vec<F>,
    },
    Gelu(NodeId),
    Abs(NodeId),
    Square(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    ConcatRows(Vec<NodeId>),
    SliceRows {
        x: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    SliceCols {
        x: NodeId,
        start: usize,
    },
    /// Repeat a 1 x c row n times.
    BroadcastRow {
        row: NodeId,
    },
    /// Row-major flatten of r x c into 1 x (r*c).
    FlattenRows {
        x: NodeId,
    },
    /// Mean softmax cross-entropy over rows of logits; saves the softmax.
    CrossEntropyMean {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Array2<F>,
    },
}

struct Node<F: Scalar> {
    value: Array2<F>,
    op: Op<F>,
    needs_grad: bool,
}

pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<F> {
        &self.nodes[id.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar_value(&self, id: NodeId) -> F {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "scalar_value on non-scalar node");
        v[(0, 0)]
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf: gradients flow into it.
    pub fn param(&mut self, value: Array2<F>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Data leaf: constant, no gradient.
    pub fn input(&mut self, value: Array2<F>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.value(a).dim();
        let (br, bc) = self.value(b).dim();
        assert_eq!(ac, br, "matmul inner dims {}x{} . {}x{}", ar, ac, br, bc);
        let mut out = Array2::zeros((ar, bc));
        ndarray::linalg::general_mat_mul(F::one(), self.value(a), self.value(b), F::zero(), &mut out);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shapes");
        let out = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "sub shapes");
        let out = self.value(a) - self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul shapes");
        let out = self.value(a) * self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: NodeId, c: F) -> NodeId {
        let out = self.value(a).mapv(|x| x * c);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> NodeId {
        let (_, c) = self.value(x).dim();
        assert_eq!(self.value(row).dim().0, 1, "add_row wants a 1xC row");
        assert_eq!(self.value(row).dim().1, c, "add_row channel mismatch");
        let out = self.value(x) + &self.value(row).row(0);
        let ng = self.needs(x) || self.needs(row);
        self.push(out, Op::AddRow(x, row), ng)
    }

    pub fn mul_row(&mut self, x: NodeId, row: NodeId) -> NodeId {
        let (_, c) = self.value(x).dim();
        assert_eq!(self.value(row).dim(), (1, c), "mul_row wants a 1xC row");
        let out = self.value(x) * &self.value(row).row(0);
        let ng = self.needs(x) || self.needs(row);
        self.push(out, Op::MulRow(x, row), ng)
    }

    pub fn mul_mask(&mut self, x: NodeId, mask: Array2<F>) -> NodeId {
        assert_eq!(self.value(x).dim(), mask.dim(), "mul_mask shapes");
        let out = self.value(x) * &mask;
        let ng = self.needs(x);
        self.push(out, Op::MulMask(x, mask), ng)
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).t().to_owned();
        let ng = self.needs(x);
        self.push(out, Op::Transpose(x), ng)
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let mut out = v.clone();
        for mut row in out.rows_mut() {
            let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
            row.mapv_inplace(|t| (t - max).exp());
            let sum = row.iter().cloned().sum::<F>();
            row.mapv_inplace(|t| t / sum);
        }
        let ng = self.needs(x);
        self.push(out, Op::SoftmaxRows(x), ng)
    }

    /// Row-wise layer normalization (no affine; compose with mul_row/add_row).
    pub fn layer_norm_rows(&mut self, x: NodeId, eps: F) -> NodeId {
        let v = self.value(x);
        let (n, c) = v.dim();
        let cf = sc::<F>(c as f64);
        let mut out = Array2::zeros((n, c));
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = v.row(i);
            let mean = row.iter().cloned().sum::<F>() / cf;
            let var = row.iter().map(|&t| (t - mean) * (t - mean)).sum::<F>() / cf;
            let is = (var + eps).sqrt().recip();
            inv_std.push(is);
            for j in 0..c {
                out[(i, j)] = (row[j] - mean) * is;
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::LayerNormRows { x, inv_std }, ng)
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let k: F = sc(0.7978845608028654); // sqrt(2/pi)
        let a: F = sc(0.044715);
        let half: F = sc(0.5);
        let out = self.value(x).mapv(|t| {
            let u = k * (t + a * t * t * t);
            half * t * (F::one() + u.tanh())
        });
        let ng = self.needs(x);
        self.push(out, Op::Gelu(x), ng)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).mapv(F::abs);
        let ng = self.needs(x);
        self.push(out, Op::Abs(x), ng)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).mapv(|t| t * t);
        let ng = self.needs(x);
        self.push(out, Op::Square(x), ng)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let total = self.value(x).iter().cloned().sum::<F>();
        let ng = self.needs(x);
        self.push(Array2::from_elem((1, 1), total), Op::SumAll(x), ng)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let count = sc::<F>((v.len()) as f64);
        let total = v.iter().cloned().sum::<F>() / count;
        let ng = self.needs(x);
        self.push(Array2::from_elem((1, 1), total), Op::MeanAll(x), ng)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let c = self.value(parts[0]).dim().1;
        let total: usize = parts.iter().map(|&p| self.value(p).dim().0).sum();
        let mut out = Array2::zeros((total, c));
        let mut r = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.dim().1, c, "concat_rows channel mismatch");
            out.slice_mut(s![r..r + v.dim().0, ..]).assign(v);
            r += v.dim().0;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let out = self.value(x).slice(s![start..start + len, ..]).to_owned();
        let ng = self.needs(x);
        self.push(out, Op::SliceRows { x, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let r = self.value(parts[0]).dim().0;
        let total: usize = parts.iter().map(|&p| self.value(p).dim().1).sum();
        let mut out = Array2::zeros((r, total));
        let mut c = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.dim().0, r, "concat_cols row mismatch");
            out.slice_mut(s![.., c..c + v.dim().1]).assign(v);
            c += v.dim().1;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let out = self.value(x).slice(s![.., start..start + len]).to_owned();
        let ng = self.needs(x);
        self.push(out, Op::SliceCols { x, start }, ng)
    }

    pub fn flatten_rows(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let (r, c) = v.dim();
        let out = Array2::from_shape_fn((1, r * c), |(_, j)| v[(j / c, j % c)]);
        let ng = self.needs(x);
        self.push(out, Op::FlattenRows { x }, ng)
    }

    pub fn broadcast_row(&mut self, row: NodeId, n: usize) -> NodeId {
        let v = self.value(row);
        assert_eq!(v.dim().0, 1, "broadcast_row wants a 1xC row");
        let out = Array2::from_shape_fn((n, v.dim().1), |(_, j)| v[(0, j)]);
        let ng = self.needs(row);
        self.push(out, Op::BroadcastRow { row }, ng)
    }

    /// Mean softmax cross-entropy over rows; `labels[i]` is row i's class.
    pub fn cross_entropy_mean(&mut self, logits: NodeId, labels: &[usize]) -> NodeId {
        let v = self.value(logits);
        let (n, k) = v.dim();
        assert_eq!(labels.len(), n, "one label per logits row");
        let nf = sc::<F>(n as f64);
        let mut probs = Array2::zeros((n, k));
        let mut loss = F::zero();
        for i in 0..n {
            let row = v.row(i);
            let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut denom = F::zero();
            for j in 0..k {
                let e = (row[j] - max).exp();
                probs[(i, j)] = e;
                denom = denom + e;
            }
            for j in 0..k {
                probs[(i, j)] = probs[(i, j)] / denom;
            }
            loss = loss - (probs[(i, labels[i])] + sc(1e-30)).ln();
        }
        loss = loss / nf;
        let ng = self.needs(logits);
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropyMean {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// Reverse pass from a 1x1 loss node. Returns one gradient slot per node.
    pub fn backward(&self, loss: NodeId) -> Gradients<F> {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Array2<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), F::one()));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let dy = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(dy);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let mut da = grads[a.0]
                            .take()
                            .unwrap_or_else(|| Array2::zeros(self.value(*a).dim()));
                        ndarray::linalg::general_mat_mul(
                            F::one(),
                            &dy,
                            &self.value(*b).t(),
                            F::one(),
                            &mut da,
                        );
                        grads[a.0] = Some(da);
                    }
                    if self.needs(*b) {
                        let mut db = grads[b.0]
                            .take()
                            .unwrap_or_else(|| Array2::zeros(self.value(*b).dim()));
                        ndarray::linalg::general_mat_mul(
                            F::one(),
                            &self.value(*a).t(),
                            &dy,
                            F::one(),
                            &mut db,
                        );
                        grads[b.0] = Some(db);
                    }
                }
                Op::Add(a, b) => {
                    self.accum(&mut grads, *a, &dy);
                    self.accum(&mut grads, *b, &dy);
                }
                Op::Sub(a, b) => {
                    self.accum(&mut grads, *a, &dy);
                    if self.needs(*b) {
                        let neg = dy.mapv(|t| -t);
                        self.accum(&mut grads, *b, &neg);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let da = &dy * self.value(*b);
                        self.accum(&mut grads, *a, &da);
                    }
                    if self.needs(*b) {
                        let db = &dy * self.value(*a);
                        self.accum(&mut grads, *b, &db);
                    }
                }
                Op::Scale(a, c) => {
                    if self.needs(*a) {
                        let da = dy.mapv(|t| t * *c);
                        self.accum(&mut grads, *a, &da);
                    }
                }
                Op::AddRow(x, row) => {
                    self.accum(&mut grads, *x, &dy);
                    if self.needs(*row) {
                        let dr = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.accum(&mut grads, *row, &dr);
                    }
                }
                Op::MulRow(x, row) => {
                    if self.needs(*x) {
                        let dx = &dy * &self.value(*row).row(0);
                        self.accum(&mut grads, *x, &dx);
                    }
                    if self.needs(*row) {
                        let dr = (&dy * self.value(*x))
                            .sum_axis(Axis(0))
                            .insert_axis(Axis(0));
                        self.accum(&mut grads, *row, &dr);
                    }
                }
                Op::MulMask(x, mask) => {
                    if self.needs(*x) {
                        let dx = &dy * mask;
                        self.accum(&mut grads, *x, &dx);
                    }
                }
                Op::Transpose(x) => {
                    if self.needs(*x) {
                        let dx = dy.t().to_owned();
                        self.accum(&mut grads, *x, &dx);
                    }
                }
                Op::SoftmaxRows(x) => {
                    if self.needs(*x) {
                        let y = &node.value;
                        let mut dx = &dy * y;
                        for (mut drow, yrow) in dx.rows_mut().into_iter().zip(y.rows()) {
                            let dot = drow.iter().cloned().sum::<F>();
                            for (d, &yv) in drow.iter_mut().zip(yrow.iter()) {
                                *d = *d - yv * dot;
                            }
                        }
                        self.accum(&mut grads, *x, &dx);
                    }
                }
                Op::LayerNormRows { x, inv_std } => {
                    if self.needs(*x) {
                        let y = &node.value;
                        let (n, c) = y.dim();
                        let cf = sc::<F>(c as f64);
                        let mut dx = Array2::zeros((n, c));
                        for i in 0..n {
                            let dyr = dy.row(i);
                            let yr = y.row(i);
                            let mean_dy = dyr.iter().cloned().sum::<F>() / cf;
                            let mean_dyy =
                                dyr.iter().zip(yr.iter()).map(|(&d, &v)| d * v).sum::<F>() / cf;
                            for j in 0..c {
                                dx[(i, j)] =
                                    inv_std[i] * (dyr[j] - mean_dy - yr[j] * mean_dyy);
                            }
                        }
                        self.accum(&mut grads, *x, &dx);
                    }
                }
                Op::Gelu(x) => {
                    if self.needs(*x) {
                        let k: F = sc(0.7978845608028654);
                        let a: F = sc(0.044715);
                        let half: F = sc(0.5);
                        let three: F = sc(3.0);
                        let xv = self.value(*x);
                        let dx = Array2::from_shape_fn(xv.dim(), |ij| {
                            let t = xv[ij];
                            let u = k * (t + a * t * t * t);
                            let th = u.tanh();
                            let sech2 = F::one() - th * th;
                            let du = k * (F::one() + three * a * t * t);
                            dy[ij] * (half * (F::one() + th) + half * t * sech2 * du)
                        });
                        self.accum(&mut grads, *x, &dx);
                    }
                }
                Op::Abs(x) => {
                    if self.needs(*x) {
                        let xv = self.value(*x);
                        let dx = Array2::from_shape_fn(xv.dim(), |ij| {
                            let t = xv[ij];
                            if t > F::zero() {
                                dy[ij]
                            } else if t < F::zero() {
                                -dy[ij]
                            } else {
                                F::zero()
                            }
                        });
                        self.accum(&mut grads, *x, &dx);
                    }
                }
                Op::Square(x) => {
                    if self.needs(*x) {
                        let two: F = sc(2.0);
                        let dx = (&dy * self.value(*x)).mapv(|t| t * two);
                        self.accum(&mut grads, *x, &dx);
                    }
                }
                Op::SumAll(x) => {
                    if self.needs(*x) {
                        let g = dy[(0, 0)];
                        let dx = Array2::from_elem(self.value(*x).dim(), g);
                        self.accum(&mut grads, *x, &dx);
                    }
                }
                Op::MeanAll(x) => {
                    if self.needs(*x) {
                        let v = self.value(*x);
                        let g = dy[(0, 0)] / sc::<F>(v.len() as f64);
                        let dx = Array2::from_elem(v.dim(), g);
                        self.accum(&mut grads, *x, &dx);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut r = 0;
                    for &p in parts {
                        let rows = self.value(p).dim().0;
                        if self.needs(p) {
                            let dp = dy.slice(s![r..r + rows, ..]).to_owned();
                            self.accum(&mut grads, p, &dp);
                        }
                        r += rows;
                    }
                }
                Op::SliceRows { x, start } => {
                    if self.needs(*x) {
                        let mut dx = Array2::zeros(self.value(*x).dim());
                        dx.slice_mut(s![*start..*start + dy.dim().0, ..]).assign(&dy);
                        self.accum(&mut grads, *x, &dx);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut c = 0;
                    for &p in parts {
                        let cols = self.value(p).dim().1;
                        if self.needs(p) {
                            let dp = dy.slice(s![.., c..c + cols]).to_owned();
                            self.accum(&mut grads, p, &dp);
                        }
                        c += cols;
                    }
                }
                Op::SliceCols { x, start } => {
                    if self.needs(*x) {
                        let mut dx = Array2::zeros(self.value(*x).dim());
                        dx.slice_mut(s![.., *start..*start + dy.dim().1]).assign(&dy);
                        self.accum(&mut grads, *x, &dx);
                    }
                }
                Op::BroadcastRow { row } => {
                    if self.needs(*row) {
                        let dr = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.accum(&mut grads, *row, &dr);
                    }
                }
                Op::FlattenRows { x } => {
                    if self.needs(*x) {
                        let (r, c) = self.value(*x).dim();
                        let dx = Array2::from_shape_fn((r, c), |(i, j)| dy[(0, i * c + j)]);
                        self.accum(&mut grads, *x, &dx);
                    }
                }
                Op::CrossEntropyMean {
                    logits,
                    labels,
                    probs,
                } => {
                    if self.needs(*logits) {
                        let g = dy[(0, 0)];
                        let n = labels.len();
                        let nf = sc::<F>(n as f64);
                        let mut dl = probs.clone();
                        for (i, &lbl) in labels.iter().enumerate() {
                            dl[(i, lbl)] = dl[(i, lbl)] - F::one();
                        }
                        dl.mapv_inplace(|t| t * g / nf);
                        self.accum(&mut grads, *logits, &dl);
                    }
                }
            }
            grads[idx] = Some(dy);
        }

        Gradients { slots: grads }
    }

    fn accum(&self, grads: &mut [Option<Array2<F>>], id: NodeId, contrib: &Array2<F>) {
        if !self.needs(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => *g += contrib,
            slot @ None => *slot = Some(contrib.clone()),
        }
    }
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<F: Scalar> {
    slots: Vec<Option<Array2<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, id: NodeId) -> Option<&Array2<F>> {
        self.slots.get(id.0).and_then(|g| g.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    /// Central finite differences against the analytic gradient for a
    /// scalar-valued builder. Checks every element of every listed leaf.
    fn grad_check<B>(leaves: Vec<Array2<f64>>, build: B)
    where
        B: Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
    {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = leaves.iter().map(|v| g.param(v.clone())).collect();
        let loss = build(&mut g, &ids);
        let grads = g.backward(loss);

        let h = 1e-5;
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads.get(ids[li]).expect("missing grad").clone();
            for idx in 0..leaf.len() {
                let (r, c) = (idx / leaf.dim().1, idx % leaf.dim().1);
                let eval = |delta: f64| {
                    let mut g2 = Graph::new();
                    let ids2: Vec<NodeId> = leaves
                        .iter()
                        .enumerate()
                        .map(|(i, v)| {
                            let mut v = v.clone();
                            if i == li {
                                v[(r, c)] += delta;
                            }
                            g2.param(v)
                        })
                        .collect();
                    let l = build(&mut g2, &ids2);
                    g2.scalar_value(l)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = analytic[(r, c)];
                let denom = an.abs().max(fd.abs()).max(1e-6);
                assert!(
                    ((an - fd) / denom).abs() < 1e-6,
                    "leaf {li} elem ({r},{c}): analytic {an} vs fd {fd}"
                );
            }
        }
    }

    fn rand_arr(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::rng::stream(seed, 0);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn matmul_chain_gradients() {
        grad_check(
            vec![rand_arr(3, 4, 1), rand_arr(4, 2, 2)],
            |g, ids| {
                let y = g.matmul(ids[0], ids[1]);
                let y = g.square(y);
                g.mean_all(y)
            },
        );
    }

    #[test]
    fn softmax_layernorm_gelu_gradients() {
        grad_check(vec![rand_arr(3, 5, 3)], |g, ids| {
            let a = g.softmax_rows(ids[0]);
            let b = g.layer_norm_rows(a, 1e-5);
            let c = g.gelu(b);
            g.mean_all(c)
        });
    }

    #[test]
    fn broadcast_row_and_affine_gradients() {
        grad_check(
            vec![rand_arr(4, 3, 4), rand_arr(1, 3, 5), rand_arr(1, 3, 6)],
            |g, ids| {
                let x = g.mul_row(ids[0], ids[1]);
                let x = g.add_row(x, ids[2]);
                let b = g.broadcast_row(ids[2], 4);
                let y = g.add(x, b);
                let y = g.abs(y);
                g.sum_all(y)
            },
        );
    }

    #[test]
    fn concat_slice_transpose_gradients() {
        grad_check(
            vec![rand_arr(2, 3, 7), rand_arr(3, 3, 8)],
            |g, ids| {
                let z = g.concat_rows(&[ids[0], ids[1]]);
                let t = g.transpose(z);
                let part = g.slice_cols(t, 1, 3);
                let back = g.transpose(part);
                let h1 = g.slice_cols(back, 0, 2);
                let h2 = g.slice_cols(back, 2, 1);
                let joined = g.concat_cols(&[h1, h2]);
                let sq = g.square(joined);
                g.mean_all(sq)
            },
        );
    }

    #[test]
    fn attention_shaped_composite_gradients() {
        // A miniature single-head attention wired from primitives.
        grad_check(
            vec![rand_arr(2, 4, 10), rand_arr(5, 4, 11), rand_arr(5, 4, 12)],
            |g, ids| {
                let kt = g.transpose(ids[1]);
                let scores = g.matmul(ids[0], kt);
                let scores = g.scale(scores, 0.5);
                let attn = g.softmax_rows(scores);
                let out = g.matmul(attn, ids[2]);
                let out = g.square(out);
                g.mean_all(out)
            },
        );
    }

    #[test]
    fn flatten_rows_gradients() {
        grad_check(vec![rand_arr(3, 4, 14), rand_arr(12, 2, 15)], |g, ids| {
            let flat = g.flatten_rows(ids[0]);
            let y = g.matmul(flat, ids[1]);
            let y = g.square(y);
            g.sum_all(y)
        });
    }

    #[test]
    fn cross_entropy_gradients() {
        grad_check(vec![rand_arr(4, 3, 13)], |g, ids| {
            g.cross_entropy_mean(ids[0], &[0, 2, 1, 2])
        });
    }

    #[test]
    fn masked_l1_matches_hand_value() {
        let mut g: Graph<f64> = Graph::new();
        let pred = g.input(array![[1.0, 2.0], [3.0, 4.0]]);
        let target = g.input(array![[1.5, 2.0], [3.0, 3.0]]);
        let diff = g.sub(pred, target);
        let a = g.abs(diff);
        let masked = g.mul_mask(a, array![[1.0, 1.0], [0.0, 1.0]]);
        let total = g.sum_all(masked);
        let loss = g.scale(total, 1.0 / 3.0);
        assert!((g.scalar_value(loss) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_grad_flows_into_inputs() {
        let mut g: Graph<f64> = Graph::new();
        let w = g.param(rand_arr(2, 2, 20));
        let x = g.input(rand_arr(2, 2, 21));
        let y = g.matmul(x, w);
        let loss = g.mean_all(y);
        let grads = g.backward(loss);
        assert!(grads.get(x).is_none());
        assert!(grads.get(w).is_some());
    }
}

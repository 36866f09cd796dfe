//! Reverse-mode tape covering the closed set of primitives the losses need.
//!
//! Recording is eager: every method computes the forward value immediately and
//! stores it with the op metadata. `backward` runs through the recorded nodes
//! in reverse order, which is a valid reverse topological order because ops
//! can only reference earlier nodes. A tape lives for one training step.

use super::{ParamId, ParameterStore, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    /// Full parameter matrix copied in at record time.
    Param { id: ParamId },
    /// Row subset of a parameter; backward touches only these rows.
    ParamRows { id: ParamId, indices: Vec<usize> },
    Constant,
    GatherRows { src: NodeId, indices: Vec<usize> },
    /// out[indices[i]] += src[i] into a fresh zero matrix of `rows` rows.
    ScatterAddRows { src: NodeId, indices: Vec<usize> },
    /// a·b, or a·bᵀ when transpose_b.
    MatMul { a: NodeId, b: NodeId, transpose_b: bool },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Tanh { x: NodeId },
    Sigmoid { x: NodeId },
    LeakyRelu { x: NodeId, slope: f64 },
    Ln { x: NodeId },
    Neg { x: NodeId },
    /// Sum of all entries, scalar output.
    Sum { x: NodeId },
    Scale { x: NodeId, factor: f64 },
    /// Sum of squares of all entries, scalar output.
    SquaredL2 { x: NodeId },
    /// Per-row dot product of equal-shaped matrices, (n,1) output.
    RowDot { a: NodeId, b: NodeId },
    ConcatCols { a: NodeId, b: NodeId },
    /// Same data, new shape.
    Reshape { x: NodeId },
    /// Softmax over contiguous segments of a column vector. A masked segment
    /// produces all-zero coefficients; an empty segment produces nothing.
    SegmentSoftmax {
        x: NodeId,
        offsets: Vec<usize>,
        masked: Option<Vec<bool>>,
    },
    /// out[s] = Σ_{e in segment s} weights[e] · values[e,:]
    SegmentWeightedSum {
        weights: NodeId,
        values: NodeId,
        offsets: Vec<usize>,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Flat record of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> NodeId {
        let value = store.value(id).clone();
        self.push(Op::Param { id }, value)
    }

    pub fn param_rows(&mut self, store: &ParameterStore, id: ParamId, indices: &[usize]) -> NodeId {
        let src = store.value(id);
        let mut out = Tensor::zeros(indices.len(), src.cols());
        for (i, &row) in indices.iter().enumerate() {
            out.row_mut(i).copy_from_slice(src.row(row));
        }
        self.push(
            Op::ParamRows {
                id,
                indices: indices.to_vec(),
            },
            out,
        )
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn gather_rows(&mut self, src: NodeId, indices: &[usize]) -> NodeId {
        let s = self.value(src);
        let mut out = Tensor::zeros(indices.len(), s.cols());
        for (i, &row) in indices.iter().enumerate() {
            out.row_mut(i).copy_from_slice(s.row(row));
        }
        self.push(
            Op::GatherRows {
                src,
                indices: indices.to_vec(),
            },
            out,
        )
    }

    pub fn scatter_add_rows(&mut self, src: NodeId, indices: &[usize], rows: usize) -> NodeId {
        let s = self.value(src);
        assert_eq!(s.rows(), indices.len(), "scatter index count mismatch");
        let mut out = Tensor::zeros(rows, s.cols());
        for (i, &row) in indices.iter().enumerate() {
            assert!(row < rows, "scatter index {row} out of range");
            let dst = out.row_mut(row);
            for (d, v) in dst.iter_mut().zip(s.row(i)) {
                *d += *v;
            }
        }
        self.push(
            Op::ScatterAddRows {
                src,
                indices: indices.to_vec(),
            },
            out,
        )
    }

    /// a·b with shapes (n,m)×(m,p), or a·bᵀ with (n,m)×(p,m) when transpose_b.
    pub fn matmul(&mut self, a: NodeId, b: NodeId, transpose_b: bool) -> NodeId {
        let value = if transpose_b {
            matmul_nt(self.value(a), self.value(b))
        } else {
            matmul_nn(self.value(a), self.value(b))
        };
        self.push(Op::MatMul { a, b, transpose_b }, value)
    }

    /// Matrix–column-vector product, (n,m)×(m,1) → (n,1).
    pub fn matvec(&mut self, a: NodeId, x: NodeId) -> NodeId {
        assert_eq!(self.value(x).cols(), 1, "matvec operand is not a column");
        self.matmul(a, x, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = zip_elementwise(self.value(a), self.value(b), |x, y| x + y);
        self.push(Op::Add { a, b }, value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = zip_elementwise(self.value(a), self.value(b), |x, y| x - y);
        self.push(Op::Sub { a, b }, value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = zip_elementwise(self.value(a), self.value(b), |x, y| x * y);
        self.push(Op::Mul { a, b }, value)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = map_elementwise(self.value(x), f64::tanh);
        self.push(Op::Tanh { x }, value)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = map_elementwise(self.value(x), sigmoid);
        self.push(Op::Sigmoid { x }, value)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let value = map_elementwise(self.value(x), |v| if v >= 0.0 { v } else { slope * v });
        self.push(Op::LeakyRelu { x, slope }, value)
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let value = map_elementwise(self.value(x), f64::ln);
        self.push(Op::Ln { x }, value)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        let value = map_elementwise(self.value(x), |v| -v);
        self.push(Op::Neg { x }, value)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.value(x).data().iter().sum();
        self.push(Op::Sum { x }, Tensor::scalar(total))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let value = map_elementwise(self.value(x), |v| v * factor);
        self.push(Op::Scale { x, factor }, value)
    }

    pub fn squared_l2(&mut self, x: NodeId) -> NodeId {
        let total = self.value(x).squared_norm();
        self.push(Op::SquaredL2 { x }, Tensor::scalar(total))
    }

    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "row_dot shape mismatch");
        let mut out = Tensor::zeros(ta.rows(), 1);
        for i in 0..ta.rows() {
            out.set(i, 0, dot(ta.row(i), tb.row(i)));
        }
        self.push(Op::RowDot { a, b }, out)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.rows(), tb.rows(), "concat_cols row mismatch");
        let mut out = Tensor::zeros(ta.rows(), ta.cols() + tb.cols());
        for i in 0..ta.rows() {
            out.row_mut(i)[..ta.cols()].copy_from_slice(ta.row(i));
            out.row_mut(i)[ta.cols()..].copy_from_slice(tb.row(i));
        }
        self.push(Op::ConcatCols { a, b }, out)
    }

    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> NodeId {
        let t = self.value(x);
        assert_eq!(
            t.rows() * t.cols(),
            rows * cols,
            "reshape changes element count"
        );
        let value = Tensor::from_vec(rows, cols, t.data().to_vec());
        self.push(Op::Reshape { x }, value)
    }

    /// Softmax within each `[offsets[s], offsets[s+1])` range of a column
    /// vector. `masked[s]` zeroes segment s entirely (its node receives no
    /// messages). Subtracts the per-segment max before exponentiating.
    pub fn segment_softmax(
        &mut self,
        x: NodeId,
        offsets: &[usize],
        masked: Option<&[bool]>,
    ) -> NodeId {
        let t = self.value(x);
        assert_eq!(t.cols(), 1, "segment_softmax expects a column vector");
        check_offsets(offsets, t.rows());
        if let Some(m) = masked {
            assert_eq!(m.len(), offsets.len() - 1, "mask per segment");
        }
        let mut out = Tensor::zeros(t.rows(), 1);
        for s in 0..offsets.len() - 1 {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if lo == hi || masked.is_some_and(|m| m[s]) {
                continue;
            }
            let seg = &t.data()[lo..hi];
            let max = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (i, &v) in seg.iter().enumerate() {
                let e = (v - max).exp();
                out.set(lo + i, 0, e);
                denom += e;
            }
            for i in lo..hi {
                let v = out.get(i, 0) / denom;
                out.set(i, 0, v);
            }
        }
        self.push(
            Op::SegmentSoftmax {
                x,
                offsets: offsets.to_vec(),
                masked: masked.map(|m| m.to_vec()),
            },
            out,
        )
    }

    /// Per-segment weighted row sum: `out[s] = Σ_{e in segment s} w[e]·v[e,:]`.
    pub fn segment_weighted_sum(
        &mut self,
        weights: NodeId,
        values: NodeId,
        offsets: &[usize],
    ) -> NodeId {
        let (w, v) = (self.value(weights), self.value(values));
        assert_eq!(w.cols(), 1, "weights must be a column vector");
        assert_eq!(w.rows(), v.rows(), "one weight per value row");
        check_offsets(offsets, v.rows());
        let segments = offsets.len() - 1;
        let mut out = Tensor::zeros(segments, v.cols());
        for s in 0..segments {
            for e in offsets[s]..offsets[s + 1] {
                let we = w.get(e, 0);
                let dst = out.row_mut(s);
                for (d, x) in dst.iter_mut().zip(v.row(e)) {
                    *d += we * x;
                }
            }
        }
        self.push(
            Op::SegmentWeightedSum {
                weights,
                values,
                offsets: offsets.to_vec(),
            },
            out,
        )
    }

    /// Accumulates ∂loss/∂θ into the store's gradient buffers. Consumes the
    /// tape; nodes recorded after `loss` cannot influence it and are skipped.
    pub fn backward(self, loss: NodeId, store: &mut ParameterStore) {
        assert_eq!(
            self.value(loss).shape(),
            (1, 1),
            "backward requires a scalar loss"
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(dy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Param { id: pid } => store.accumulate_grad(*pid, &dy),
                Op::ParamRows { id: pid, indices } => {
                    store.accumulate_grad_rows(*pid, indices, &dy)
                }
                Op::Constant => {}
                Op::GatherRows { src, indices } => {
                    let g = grad_slot(&mut grads, src.0, self.nodes[src.0].value.shape());
                    for (i, &row) in indices.iter().enumerate() {
                        let dst = g.row_mut(row);
                        for (d, v) in dst.iter_mut().zip(dy.row(i)) {
                            *d += *v;
                        }
                    }
                }
                Op::ScatterAddRows { src, indices } => {
                    let g = grad_slot(&mut grads, src.0, self.nodes[src.0].value.shape());
                    for (i, &row) in indices.iter().enumerate() {
                        let dst = g.row_mut(i);
                        for (d, v) in dst.iter_mut().zip(dy.row(row)) {
                            *d += *v;
                        }
                    }
                }
                Op::MatMul { a, b, transpose_b } => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (da, db) = if *transpose_b {
                        // y = a·bᵀ: da = dy·b, db = dyᵀ·a
                        (matmul_nn(&dy, vb), matmul_tn(&dy, va))
                    } else {
                        // y = a·b: da = dy·bᵀ, db = aᵀ·dy
                        (matmul_nt(&dy, vb), matmul_tn(va, &dy))
                    };
                    add_grad(&mut grads, a.0, &da);
                    add_grad(&mut grads, b.0, &db);
                }
                Op::Add { a, b } => {
                    add_grad(&mut grads, a.0, &dy);
                    add_grad(&mut grads, b.0, &dy);
                }
                Op::Sub { a, b } => {
                    add_grad(&mut grads, a.0, &dy);
                    let neg = map_elementwise(&dy, |v| -v);
                    add_grad(&mut grads, b.0, &neg);
                }
                Op::Mul { a, b } => {
                    let da = zip_elementwise(&dy, &self.nodes[b.0].value, |g, v| g * v);
                    let db = zip_elementwise(&dy, &self.nodes[a.0].value, |g, v| g * v);
                    add_grad(&mut grads, a.0, &da);
                    add_grad(&mut grads, b.0, &db);
                }
                Op::Tanh { x } => {
                    let dx = zip_elementwise(&dy, &node.value, |g, y| g * (1.0 - y * y));
                    add_grad(&mut grads, x.0, &dx);
                }
                Op::Sigmoid { x } => {
                    let dx = zip_elementwise(&dy, &node.value, |g, y| g * y * (1.0 - y));
                    add_grad(&mut grads, x.0, &dx);
                }
                Op::LeakyRelu { x, slope } => {
                    let dx = zip_elementwise(&dy, &self.nodes[x.0].value, |g, v| {
                        if v >= 0.0 {
                            g
                        } else {
                            g * slope
                        }
                    });
                    add_grad(&mut grads, x.0, &dx);
                }
                Op::Ln { x } => {
                    let dx = zip_elementwise(&dy, &self.nodes[x.0].value, |g, v| g / v);
                    add_grad(&mut grads, x.0, &dx);
                }
                Op::Neg { x } => {
                    let dx = map_elementwise(&dy, |v| -v);
                    add_grad(&mut grads, x.0, &dx);
                }
                Op::Sum { x } => {
                    let g = dy.scalar_value();
                    let shape = self.nodes[x.0].value.shape();
                    let mut dx = Tensor::zeros(shape.0, shape.1);
                    dx.fill(g);
                    add_grad(&mut grads, x.0, &dx);
                }
                Op::Scale { x, factor } => {
                    let dx = map_elementwise(&dy, |v| v * factor);
                    add_grad(&mut grads, x.0, &dx);
                }
                Op::SquaredL2 { x } => {
                    let g = dy.scalar_value();
                    let dx = map_elementwise(&self.nodes[x.0].value, |v| 2.0 * v * g);
                    add_grad(&mut grads, x.0, &dx);
                }
                Op::RowDot { a, b } => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let mut da = Tensor::zeros(va.rows(), va.cols());
                    let mut db = Tensor::zeros(vb.rows(), vb.cols());
                    for i in 0..va.rows() {
                        let g = dy.get(i, 0);
                        for j in 0..va.cols() {
                            da.set(i, j, g * vb.get(i, j));
                            db.set(i, j, g * va.get(i, j));
                        }
                    }
                    add_grad(&mut grads, a.0, &da);
                    add_grad(&mut grads, b.0, &db);
                }
                Op::ConcatCols { a, b } => {
                    let ca = self.nodes[a.0].value.cols();
                    let cb = self.nodes[b.0].value.cols();
                    let rows = dy.rows();
                    let mut da = Tensor::zeros(rows, ca);
                    let mut db = Tensor::zeros(rows, cb);
                    for i in 0..rows {
                        da.row_mut(i).copy_from_slice(&dy.row(i)[..ca]);
                        db.row_mut(i).copy_from_slice(&dy.row(i)[ca..]);
                    }
                    add_grad(&mut grads, a.0, &da);
                    add_grad(&mut grads, b.0, &db);
                }
                Op::Reshape { x } => {
                    let shape = self.nodes[x.0].value.shape();
                    let dx = Tensor::from_vec(shape.0, shape.1, dy.data().to_vec());
                    add_grad(&mut grads, x.0, &dx);
                }
                Op::SegmentSoftmax { x, offsets, masked } => {
                    // dx_i = y_i (dy_i − Σ_j y_j dy_j) within the segment.
                    let y = &node.value;
                    let mut dx = Tensor::zeros(y.rows(), 1);
                    for s in 0..offsets.len() - 1 {
                        let (lo, hi) = (offsets[s], offsets[s + 1]);
                        if lo == hi || masked.as_ref().is_some_and(|m| m[s]) {
                            continue;
                        }
                        let inner: f64 = (lo..hi).map(|i| y.get(i, 0) * dy.get(i, 0)).sum();
                        for i in lo..hi {
                            dx.set(i, 0, y.get(i, 0) * (dy.get(i, 0) - inner));
                        }
                    }
                    add_grad(&mut grads, x.0, &dx);
                }
                Op::SegmentWeightedSum {
                    weights,
                    values,
                    offsets,
                } => {
                    let (w, v) = (&self.nodes[weights.0].value, &self.nodes[values.0].value);
                    let mut dw = Tensor::zeros(w.rows(), 1);
                    let mut dv = Tensor::zeros(v.rows(), v.cols());
                    for s in 0..offsets.len() - 1 {
                        for e in offsets[s]..offsets[s + 1] {
                            dw.set(e, 0, dot(dy.row(s), v.row(e)));
                            let we = w.get(e, 0);
                            let dst = dv.row_mut(e);
                            for (d, g) in dst.iter_mut().zip(dy.row(s)) {
                                *d += we * g;
                            }
                        }
                    }
                    add_grad(&mut grads, weights.0, &dw);
                    add_grad(&mut grads, values.0, &dv);
                }
            }
        }
    }
}

fn check_offsets(offsets: &[usize], len: usize) {
    assert!(offsets.len() >= 2, "offsets need at least one segment");
    assert!(
        offsets.windows(2).all(|w| w[0] <= w[1]),
        "offsets must be nondecreasing"
    );
    assert_eq!(offsets[0], 0);
    assert_eq!(*offsets.last().unwrap(), len, "offsets must cover all rows");
}

fn grad_slot(grads: &mut [Option<Tensor>], idx: usize, shape: (usize, usize)) -> &mut Tensor {
    grads[idx].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}

fn add_grad(grads: &mut [Option<Tensor>], idx: usize, delta: &Tensor) {
    grad_slot(grads, idx, delta.shape()).add_assign(delta);
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn map_elementwise(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_vec(t.rows(), t.cols(), t.data().iter().map(|&x| f(x)).collect())
}

fn zip_elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

fn matmul_nn(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols(), b.rows(), "matmul inner dimension mismatch");
    let mut out = Tensor::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for k in 0..a.cols() {
            let aik = a.get(i, k);
            if aik == 0.0 {
                continue;
            }
            let brow = b.row(k);
            let orow = out.row_mut(i);
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// a·bᵀ with a (n,m), b (p,m).
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols(), b.cols(), "matmul_nt inner dimension mismatch");
    let mut out = Tensor::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            out.set(i, j, dot(a.row(i), b.row(j)));
        }
    }
    out
}

/// aᵀ·b with a (n,m), b (n,p).
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows(), b.rows(), "matmul_tn inner dimension mismatch");
    let mut out = Tensor::zeros(a.cols(), b.cols());
    for i in 0..a.rows() {
        for k in 0..a.cols() {
            let aik = a.get(i, k);
            if aik == 0.0 {
                continue;
            }
            let brow = b.row(i);
            let orow = out.row_mut(k);
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

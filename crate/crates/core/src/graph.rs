//! Reverse-mode automatic differentiation on a dynamic tape.
//!
//! A [`Graph`] records every primitive applied during a forward pass as a
//! node whose inputs precede it, so a single reverse sweep visits each node
//! exactly once. The tape is rebuilt per forward pass: permutation sampling
//! changes the graph every step, so nothing is cached across passes.
//! Gradients accumulate additively when a tensor is reused; callers zero
//! their persistent gradient buffers between optimizer steps.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId, bias: bool },
    Mul { a: TensorId, b: TensorId },
    Relu { x: TensorId },
    Tanh { x: TensorId },
    Exp { x: TensorId },
    Log { x: TensorId },
    MaskedSoftmax { x: TensorId, mask: Option<TensorId> },
    GatherRows { x: TensorId, idx: Vec<usize> },
    ConcatCols { xs: Vec<TensorId> },
    ConcatRows { xs: Vec<TensorId> },
    Transpose { x: TensorId },
    Scale { x: TensorId, c: Real },
    Sum { x: TensorId },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<Real>>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Interprets a 1-D or 2-D shape as (rows, cols); 1-D is a single row.
fn rows_cols(shape: &[usize]) -> Option<(usize, usize)> {
    match shape.len() {
        1 => Some((1, shape[0])),
        2 => Some((shape[0], shape[1])),
        _ => None,
    }
}

fn matmul_raw(a: &[Real], b: &[Real], m: usize, k: usize, n: usize, out: &mut [Real]) {
    // ikj order keeps the inner loop contiguous over b and out.
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable leaf (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> TensorId {
        self.push(value, true, Op::Leaf)
    }

    /// Registers a non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the most recent `backward` with respect to `id`, if the
    /// node required one.
    pub fn grad(&self, id: TensorId) -> Option<&[Real]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> TensorId {
        debug_assert!(
            matches!(op, Op::Leaf) || value.all_finite(),
            "non-finite forward output at node {}",
            self.nodes.len()
        );
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        id
    }

    fn needs_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    // ── Primitives ──────────────────────────────────────────────────

    /// Matrix product. Accepts matrix*matrix, matrix*vector and
    /// vector*matrix; 1-D operands are treated as a row (lhs) or a column
    /// (rhs) and the singleton dimension is squeezed from the output.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ashape, bshape) = (self.shape_of(a), self.shape_of(b));
        let (m, k) = match ashape.len() {
            1 => (1, ashape[0]),
            2 => (ashape[0], ashape[1]),
            _ => {
                return Err(Error::BadShape {
                    op: "matmul",
                    shape: ashape,
                })
            }
        };
        let (k2, n) = match bshape.len() {
            1 => (bshape[0], 1),
            2 => (bshape[0], bshape[1]),
            _ => {
                return Err(Error::BadShape {
                    op: "matmul",
                    shape: bshape,
                })
            }
        };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ashape,
                rhs: bshape,
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_raw(
            self.nodes[a.0].value.data(),
            self.nodes[b.0].value.data(),
            m,
            k,
            n,
            &mut out,
        );
        let out_shape = match (ashape.len(), bshape.len()) {
            (2, 2) => vec![m, n],
            (2, 1) => vec![m],
            (1, 2) => vec![n],
            _ => vec![1],
        };
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Tensor::new(out_shape, out)?, rg, Op::Matmul { a, b }))
    }

    /// Elementwise addition. When `b` is a vector matching the column count
    /// of matrix `a`, it is broadcast across rows (bias addition).
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ashape, bshape) = (self.shape_of(a), self.shape_of(b));
        let bias = ashape.len() == 2 && bshape.len() == 1 && bshape[0] == ashape[1];
        if !bias && ashape != bshape {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: ashape,
                rhs: bshape,
            });
        }
        let bd = self.nodes[b.0].value.data();
        let out: Vec<Real> = if bias {
            let cols = ashape[1];
            self.nodes[a.0]
                .value
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| v + bd[i % cols])
                .collect()
        } else {
            self.nodes[a.0]
                .value
                .data()
                .iter()
                .zip(bd)
                .map(|(&x, &y)| x + y)
                .collect()
        };
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Tensor::new(ashape, out)?, rg, Op::Add { a, b, bias }))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ashape, bshape) = (self.shape_of(a), self.shape_of(b));
        if ashape != bshape {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: ashape,
                rhs: bshape,
            });
        }
        let out: Vec<Real> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Tensor::new(ashape, out)?, rg, Op::Mul { a, b }))
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let out: Vec<Real> = self.nodes[x.0].value.data().iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape_of(x);
        let rg = self.needs_grad(&[x]);
        self.push(Tensor::new(shape, out).unwrap(), rg, Op::Relu { x })
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        let out: Vec<Real> = self.nodes[x.0].value.data().iter().map(|&v| v.tanh()).collect();
        let shape = self.shape_of(x);
        let rg = self.needs_grad(&[x]);
        self.push(Tensor::new(shape, out).unwrap(), rg, Op::Tanh { x })
    }

    pub fn exp(&mut self, x: TensorId) -> TensorId {
        let out: Vec<Real> = self.nodes[x.0].value.data().iter().map(|&v| v.exp()).collect();
        let shape = self.shape_of(x);
        let rg = self.needs_grad(&[x]);
        self.push(Tensor::new(shape, out).unwrap(), rg, Op::Exp { x })
    }

    pub fn log(&mut self, x: TensorId) -> TensorId {
        let out: Vec<Real> = self.nodes[x.0].value.data().iter().map(|&v| v.ln()).collect();
        let shape = self.shape_of(x);
        let rg = self.needs_grad(&[x]);
        self.push(Tensor::new(shape, out).unwrap(), rg, Op::Log { x })
    }

    /// Softmax along the last axis of a 1-D or 2-D tensor.
    pub fn softmax(&mut self, x: TensorId) -> Result<TensorId> {
        self.masked_softmax_impl(x, None)
    }

    /// Softmax along the last axis with an additive mask of the same shape
    /// (entries 0 to keep, -inf to drop). A fully masked row is an error.
    pub fn masked_softmax(&mut self, x: TensorId, mask: TensorId) -> Result<TensorId> {
        let (xs, ms) = (self.shape_of(x), self.shape_of(mask));
        if xs != ms {
            return Err(Error::ShapeMismatch {
                op: "masked_softmax",
                lhs: xs,
                rhs: ms,
            });
        }
        self.masked_softmax_impl(x, Some(mask))
    }

    fn masked_softmax_impl(&mut self, x: TensorId, mask: Option<TensorId>) -> Result<TensorId> {
        let shape = self.shape_of(x);
        let (rows, cols) = rows_cols(&shape).ok_or_else(|| Error::BadShape {
            op: "masked_softmax",
            shape: shape.clone(),
        })?;
        if cols == 0 {
            return Err(Error::Empty("softmax input".into()));
        }
        let xd = self.nodes[x.0].value.data();
        let md = mask.map(|m| self.nodes[m.0].value.data());
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let base = r * cols;
            let masked = |j: usize| -> Real {
                let m = md.map_or(0.0, |m| m[base + j]);
                xd[base + j] + m
            };
            let mut mx = Real::NEG_INFINITY;
            for j in 0..cols {
                mx = mx.max(masked(j));
            }
            if mx == Real::NEG_INFINITY {
                return Err(Error::AllMaskedRow { row: r });
            }
            let mut denom = 0.0;
            for j in 0..cols {
                let e = (masked(j) - mx).exp();
                out[base + j] = e;
                denom += e;
            }
            for j in 0..cols {
                out[base + j] /= denom;
            }
        }
        let rg = self.needs_grad(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::MaskedSoftmax { x, mask }))
    }

    /// Selects rows of a matrix (or elements of a vector) by index, in
    /// order, with repetition allowed. The backward pass scatter-adds.
    pub fn gather_rows(&mut self, x: TensorId, idx: &[usize]) -> Result<TensorId> {
        let shape = self.shape_of(x);
        let (rows, cols) = match shape.len() {
            1 => (shape[0], 1),
            2 => (shape[0], shape[1]),
            _ => {
                return Err(Error::BadShape {
                    op: "gather_rows",
                    shape,
                })
            }
        };
        let mut out = Vec::with_capacity(idx.len() * cols);
        let xd = self.nodes[x.0].value.data();
        for &i in idx {
            if i >= rows {
                return Err(Error::IndexOutOfBounds {
                    op: "gather_rows",
                    index: i,
                    extent: rows,
                });
            }
            out.extend_from_slice(&xd[i * cols..(i + 1) * cols]);
        }
        let out_shape = if shape.len() == 1 {
            vec![idx.len()]
        } else {
            vec![idx.len(), cols]
        };
        let rg = self.needs_grad(&[x]);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            rg,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, xs: &[TensorId]) -> Result<TensorId> {
        if xs.is_empty() {
            return Err(Error::Empty("concat_cols input list".into()));
        }
        let first = self.shape_of(xs[0]);
        if first.len() != 2 {
            return Err(Error::BadShape {
                op: "concat_cols",
                shape: first,
            });
        }
        let rows = first[0];
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape_of(x);
            if s.len() != 2 || s[0] != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: first,
                    rhs: s,
                });
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&x, &w) in xs.iter().zip(&widths) {
            let xd = self.nodes[x.0].value.data();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&xd[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let rg = self.needs_grad(xs);
        Ok(self.push(
            Tensor::new(vec![rows, total], out)?,
            rg,
            Op::ConcatCols { xs: xs.to_vec() },
        ))
    }

    /// Stacks 1-D vectors (and/or matrices of matching width) vertically
    /// into a single matrix.
    pub fn concat_rows(&mut self, xs: &[TensorId]) -> Result<TensorId> {
        if xs.is_empty() {
            return Err(Error::Empty("concat_rows input list".into()));
        }
        let width = {
            let s = self.shape_of(xs[0]);
            *s.last().unwrap()
        };
        let mut rows = 0;
        for &x in xs {
            let s = self.shape_of(x);
            match s.len() {
                1 if s[0] == width => rows += 1,
                2 if s[1] == width => rows += s[0],
                _ => {
                    return Err(Error::ShapeMismatch {
                        op: "concat_rows",
                        lhs: vec![width],
                        rhs: s,
                    })
                }
            }
        }
        let mut out = Vec::with_capacity(rows * width);
        for &x in xs {
            out.extend_from_slice(self.nodes[x.0].value.data());
        }
        let rg = self.needs_grad(xs);
        Ok(self.push(
            Tensor::new(vec![rows, width], out)?,
            rg,
            Op::ConcatRows { xs: xs.to_vec() },
        ))
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let shape = self.shape_of(x);
        if shape.len() != 2 {
            return Err(Error::BadShape {
                op: "transpose",
                shape,
            });
        }
        let (r, c) = (shape[0], shape[1]);
        let xd = self.nodes[x.0].value.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xd[i * c + j];
            }
        }
        let rg = self.needs_grad(&[x]);
        Ok(self.push(Tensor::new(vec![c, r], out)?, rg, Op::Transpose { x }))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, x: TensorId, c: Real) -> TensorId {
        let out: Vec<Real> = self.nodes[x.0].value.data().iter().map(|&v| v * c).collect();
        let shape = self.shape_of(x);
        let rg = self.needs_grad(&[x]);
        self.push(Tensor::new(shape, out).unwrap(), rg, Op::Scale { x, c })
    }

    /// Sums all elements into a scalar of shape `[1]`.
    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let s: Real = self.nodes[x.0].value.data().iter().sum();
        let rg = self.needs_grad(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Sum { x })
    }

    // ── Composites (no new backward rules) ──────────────────────────

    /// Adds a constant scalar to every element.
    pub fn add_scalar(&mut self, x: TensorId, c: Real) -> TensorId {
        let shape = self.shape_of(x);
        let k = self.constant(Tensor::full(shape, c));
        self.add(x, k).expect("same shape by construction")
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    /// Numerically stable `ln(1 + exp(x))`, built from primitives:
    /// `relu(x) + ln(1 + exp(-|x|))` where `|x| = relu(x) + relu(-x)`.
    pub fn softplus(&mut self, x: TensorId) -> Result<TensorId> {
        let pos = self.relu(x);
        let neg_in = self.scale(x, -1.0);
        let neg = self.relu(neg_in);
        let abs = self.add(pos, neg)?;
        let nabs = self.scale(abs, -1.0);
        let e = self.exp(nabs);
        let one_plus = self.add_scalar(e, 1.0);
        let lg = self.log(one_plus);
        self.add(pos, lg)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: TensorId) -> TensorId {
        let n = self.nodes[x.0].value.numel().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as Real)
    }

    fn shape_of(&self, id: TensorId) -> Vec<usize> {
        self.nodes[id.0].value.shape().to_vec()
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Fills `grad` on every node that
    /// requires one; leaves unreachable from the loss keep a zero gradient.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::LossNotScalar {
                shape: self.shape_of(loss),
            });
        }
        // Zero-initialize gradients for every node that participates.
        for node in &mut self.nodes {
            if node.requires_grad {
                node.grad = Some(vec![0.0; node.value.numel()]);
            }
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(()); // loss does not depend on any leaf
        }
        if let Some(g) = self.nodes[loss.0].grad.as_mut() {
            g[0] = 1.0;
        }
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let gout = match self.nodes[i].grad.as_ref() {
                Some(g) => g.clone(),
                None => continue,
            };
            self.apply_backward(i, &gout);
        }
        Ok(())
    }

    fn add_grad(&mut self, id: TensorId, delta: &[Real]) {
        if let Some(g) = self.nodes[id.0].grad.as_mut() {
            for (gi, di) in g.iter_mut().zip(delta) {
                *gi += di;
            }
        }
    }

    fn apply_backward(&mut self, i: usize, gout: &[Real]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (a, b) = (*a, *b);
                let ashape = self.shape_of(a);
                let bshape = self.shape_of(b);
                let (m, k) = rows_cols(&ashape).unwrap();
                let n = if bshape.len() == 1 { 1 } else { bshape[1] };
                let ad = self.nodes[a.0].value.data().to_vec();
                let bd = self.nodes[b.0].value.data().to_vec();
                if self.nodes[a.0].requires_grad {
                    // dA = dC . B^T
                    let mut bt = vec![0.0; k * n];
                    for p in 0..k {
                        for j in 0..n {
                            bt[j * k + p] = bd[p * n + j];
                        }
                    }
                    let mut da = vec![0.0; m * k];
                    matmul_raw(gout, &bt, m, n, k, &mut da);
                    self.add_grad(a, &da);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = A^T . dC
                    let mut at = vec![0.0; k * m];
                    for r in 0..m {
                        for p in 0..k {
                            at[p * m + r] = ad[r * k + p];
                        }
                    }
                    let mut db = vec![0.0; k * n];
                    matmul_raw(&at, gout, k, m, n, &mut db);
                    self.add_grad(b, &db);
                }
            }
            Op::Add { a, b, bias } => {
                let (a, b, bias) = (*a, *b, *bias);
                self.add_grad(a, gout);
                if bias {
                    let cols = self.nodes[b.0].value.numel();
                    let mut db = vec![0.0; cols];
                    for (idx, &g) in gout.iter().enumerate() {
                        db[idx % cols] += g;
                    }
                    self.add_grad(b, &db);
                } else {
                    self.add_grad(b, gout);
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let ad = self.nodes[a.0].value.data().to_vec();
                let bd = self.nodes[b.0].value.data().to_vec();
                let da: Vec<Real> = gout.iter().zip(&bd).map(|(&g, &v)| g * v).collect();
                let db: Vec<Real> = gout.iter().zip(&ad).map(|(&g, &v)| g * v).collect();
                self.add_grad(a, &da);
                self.add_grad(b, &db);
            }
            Op::Relu { x } => {
                let x = *x;
                let xd = self.nodes[x.0].value.data().to_vec();
                let dx: Vec<Real> = gout
                    .iter()
                    .zip(&xd)
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                self.add_grad(x, &dx);
            }
            Op::Tanh { x } => {
                let x = *x;
                let yd = self.nodes[i].value.data().to_vec();
                let dx: Vec<Real> = gout.iter().zip(&yd).map(|(&g, &y)| g * (1.0 - y * y)).collect();
                self.add_grad(x, &dx);
            }
            Op::Exp { x } => {
                let x = *x;
                let yd = self.nodes[i].value.data().to_vec();
                let dx: Vec<Real> = gout.iter().zip(&yd).map(|(&g, &y)| g * y).collect();
                self.add_grad(x, &dx);
            }
            Op::Log { x } => {
                let x = *x;
                let xd = self.nodes[x.0].value.data().to_vec();
                let dx: Vec<Real> = gout.iter().zip(&xd).map(|(&g, &v)| g / v).collect();
                self.add_grad(x, &dx);
            }
            Op::MaskedSoftmax { x, .. } => {
                let x = *x;
                let yd = self.nodes[i].value.data().to_vec();
                let shape = self.shape_of(TensorId(i));
                let (rows, cols) = rows_cols(&shape).unwrap();
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let base = r * cols;
                    let dot: Real = (0..cols).map(|j| gout[base + j] * yd[base + j]).sum();
                    for j in 0..cols {
                        dx[base + j] = yd[base + j] * (gout[base + j] - dot);
                    }
                }
                self.add_grad(x, &dx);
            }
            Op::GatherRows { x, idx } => {
                let x = *x;
                let idx = idx.clone();
                let xshape = self.shape_of(x);
                let cols = if xshape.len() == 1 { 1 } else { xshape[1] };
                let mut dx = vec![0.0; self.nodes[x.0].value.numel()];
                for (r, &src) in idx.iter().enumerate() {
                    for c in 0..cols {
                        dx[src * cols + c] += gout[r * cols + c];
                    }
                }
                self.add_grad(x, &dx);
            }
            Op::ConcatCols { xs } => {
                let xs = xs.clone();
                let total = self.shape_of(TensorId(i))[1];
                let rows = self.shape_of(TensorId(i))[0];
                let mut offset = 0;
                for x in xs {
                    let w = self.shape_of(x)[1];
                    let mut dx = vec![0.0; rows * w];
                    for r in 0..rows {
                        dx[r * w..(r + 1) * w]
                            .copy_from_slice(&gout[r * total + offset..r * total + offset + w]);
                    }
                    self.add_grad(x, &dx);
                    offset += w;
                }
            }
            Op::ConcatRows { xs } => {
                let xs = xs.clone();
                let mut offset = 0;
                for x in xs {
                    let n = self.nodes[x.0].value.numel();
                    let dx = gout[offset..offset + n].to_vec();
                    self.add_grad(x, &dx);
                    offset += n;
                }
            }
            Op::Transpose { x } => {
                let x = *x;
                let yshape = self.shape_of(TensorId(i));
                let (r, c) = (yshape[0], yshape[1]);
                let mut dx = vec![0.0; r * c];
                for a in 0..r {
                    for b in 0..c {
                        dx[b * r + a] = gout[a * c + b];
                    }
                }
                self.add_grad(x, &dx);
            }
            Op::Scale { x, c } => {
                let (x, c) = (*x, *c);
                let dx: Vec<Real> = gout.iter().map(|&g| g * c).collect();
                self.add_grad(x, &dx);
            }
            Op::Sum { x } => {
                let x = *x;
                let n = self.nodes[x.0].value.numel();
                let dx = vec![gout[0]; n];
                self.add_grad(x, &dx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NEG_INF: Real = Real::NEG_INFINITY;

    fn close(a: Real, b: Real, tol: Real) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_hand_case() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = g.constant(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_reports_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let b = g.constant(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn softmax_symmetric_pair() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let m = g.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let y = g.masked_softmax(x, m).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn masked_softmax_drops_masked_entry() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![5.0, 1.0, 3.0]));
        let m = g.constant(Tensor::from_vec(vec![0.0, NEG_INF, 0.0]));
        let y = g.masked_softmax(x, m).unwrap();
        let denom = (5.0 as Real).exp() + (3.0 as Real).exp();
        let got = g.value(y).data();
        assert!(close(got[0], (5.0 as Real).exp() / denom, 1e-12));
        assert_eq!(got[1], 0.0);
        assert!(close(got[2], (3.0 as Real).exp() / denom, 1e-12));
    }

    #[test]
    fn masked_softmax_all_masked_row_errors_with_row() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let m = g.constant(Tensor::matrix(2, 2, vec![0.0, 0.0, NEG_INF, NEG_INF]).unwrap());
        match g.masked_softmax(x, m) {
            Err(Error::AllMaskedRow { row }) => assert_eq!(row, 1),
            other => panic!("expected AllMaskedRow, got {other:?}"),
        }
    }

    #[test]
    fn backward_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_quadratic() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_accumulates_across_reuse() {
        // y = sum(x) + sum(x) => dy/dx = 2
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![1.0, -1.0]));
        let s1 = g.sum(x);
        let s2 = g.sum(x);
        let y = g.add(s1, s2).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(
            g.backward(x),
            Err(Error::LossNotScalar { .. })
        ));
    }

    #[test]
    fn unreachable_leaf_keeps_zero_grad() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![1.0]));
        let y = g.leaf(Tensor::from_vec(vec![2.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(y).unwrap(), &[0.0]);
    }

    #[test]
    fn bias_broadcast_add() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let b = g.leaf(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let y = g.add(a, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(b).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn gather_rows_and_scatter_grad() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let y = g.gather_rows(x, &[2, 0, 2]).unwrap();
        assert_eq!(g.value(y).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        // row 2 pulled twice, row 1 never
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn concat_cols_splits_grad() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
        let b = g.leaf(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let y = g.concat_cols(&[a, b]).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = g.constant(Tensor::matrix(2, 3, vec![1.0, 10.0, 100.0, 2.0, 20.0, 200.0]).unwrap());
        let p = g.mul(y, w).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[1.0, 2.0]);
        assert_eq!(g.grad(b).unwrap(), &[10.0, 100.0, 20.0, 200.0]);
    }

    #[test]
    fn softplus_matches_reference_and_is_stable() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![-40.0, -1.0, 0.0, 1.0, 40.0]));
        let y = g.softplus(x).unwrap();
        let got = g.value(y).data().to_vec();
        for (i, &v) in [-40.0 as Real, -1.0, 0.0, 1.0, 40.0].iter().enumerate() {
            let reference = if v > 0.0 {
                v + (-v as Real).exp().ln_1p()
            } else {
                (v as Real).exp().ln_1p()
            };
            assert!(close(got[i], reference, 1e-12), "{v}: {} vs {reference}", got[i]);
        }
    }

    #[test]
    fn concat_rows_stacks_vectors_and_splits_grad() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        let b = g.leaf(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let y = g.concat_rows(&[a, b]).unwrap();
        assert_eq!(g.value(y).shape(), &[3, 2]);
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = g.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let p = g.mul(y, w).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[1.0, 2.0]);
        assert_eq!(g.grad(b).unwrap(), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut g = Graph::new();
            let x = g.leaf(Tensor::from_vec(vec![0.3, -0.7, 1.9]));
            let w = g.leaf(Tensor::matrix(3, 3, (0..9).map(|i| 0.1 * i as Real).collect()).unwrap());
            let h = g.matmul(w, x).unwrap();
            let t = g.tanh(h);
            let sm = g.softmax(t).unwrap();
            let lg = g.log(sm);
            let s = g.sum(lg);
            g.backward(s).unwrap();
            (
                g.grad(x).unwrap().to_vec(),
                g.grad(w).unwrap().to_vec(),
            )
        };
        let (gx1, gw1) = run();
        let (gx2, gw2) = run();
        assert!(gx1.iter().zip(&gx2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(gw1.iter().zip(&gw2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

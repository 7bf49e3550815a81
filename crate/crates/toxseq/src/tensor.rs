//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain value: shape plus row-major data, an optional
//! gradient buffer, and a `requires_grad` flag. Computation happens on a
//! [`Tape`]: leaves are registered with [`Tape::leaf`], operations append
//! nodes in topological order, and [`Tape::backward`] walks the nodes in
//! reverse, accumulating `d(loss)/d(node)` for everything that needs a
//! gradient. The tape is rebuilt for every forward pass (define-by-run), so
//! dynamic sequence lengths need no special casing.
//!
//! Everything is 64-bit; [`grad_check`] provides the central finite-difference
//! oracle used throughout the test suites.

use crate::error::{Error, Result};

/// Clamp floor applied to probabilities inside [`Tape::cross_entropy`].
pub const PROB_EPS: f64 = 1e-12;

/// Epsilon inside the layer-norm variance denominator.
pub const LAYER_NORM_EPS: f64 = 1e-12;

// ───────────────────────────────────────────────────────────────────────────
// Tensor
// ───────────────────────────────────────────────────────────────────────────

/// Dense multi-dimensional array of f64 in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Panics if `product(shape) != data.len()`; that is a caller bug, not a
    /// runtime condition.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor shape {:?} implies {} values, got {}",
            shape,
            numel,
            data.len()
        );
        assert!(
            shape.iter().all(|&d| d > 0),
            "zero-sized dimension in {shape:?}"
        );
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel])
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![value; numel])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(vec![1], vec![value])
    }

    /// Every entry drawn from N(mean, std) using the passed generator.
    pub fn randn(shape: Vec<usize>, mean: f64, std: f64, rng: &mut crate::rng::Rng) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.normal(mean, std)).collect();
        Tensor::new(shape, data)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows of a rank-2 tensor (rank-1 counts as a single row).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.data.len(), "gradient length mismatch");
        match &mut self.grad {
            Some(buf) => {
                for (a, b) in buf.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => self.grad = Some(g.to_vec()),
        }
    }
}

// ───────────────────────────────────────────────────────────────────────────
// Tape
// ───────────────────────────────────────────────────────────────────────────

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Narrow {
        a: Var,
        axis: usize,
        start: usize,
    },
    GatherRows {
        a: Var,
        indices: Vec<usize>,
    },
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax {
        a: Var,
        axis: usize,
    },
    Sum(Var),
    Reshape(Var),
    LayerNorm {
        a: Var,
        gamma: Var,
        beta: Var,
    },
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
        weights: Option<Vec<f64>>,
    },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation: nodes in topological order (operands always precede
/// their consumers). Confine a tape and its gradient-carrying leaves to one
/// thread; grad-free [`Tensor`] snapshots are freely shareable.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a tensor as a leaf. Data is copied onto the tape; gradients
    /// flow back to it only if `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        self.push(
            tensor.shape.clone(),
            tensor.data.clone(),
            Op::Leaf,
            tensor.requires_grad,
        )
    }

    /// Registers a tensor as a grad-free leaf regardless of its
    /// `requires_grad` flag (used to freeze parameter groups).
    pub fn leaf_detached(&mut self, tensor: &Tensor) -> Var {
        self.push(tensor.shape.clone(), tensor.data.clone(), Op::Leaf, false)
    }

    /// Grad-free leaf built in place.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Var {
        let t = Tensor::new(shape, data);
        self.leaf(&t)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].data.len()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    // ── forward operations ──────────────────────────────────────────

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a), self.value(b), m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], out, Op::Matmul(a, b), ng))
    }

    /// Elementwise addition; shapes must match exactly.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "add", |x, y| x + y, Op::Add)
    }

    /// Elementwise product; shapes must match exactly.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    fn elementwise(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(Var, Var) -> Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(shape, data, op(a, b), ng))
    }

    /// Adds a rank-1 bias of length `c` to every row of a `[r, c]` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(bias).to_vec());
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: sa,
                rhs: sb,
            });
        }
        let (r, c) = (sa[0], sa[1]);
        let bv = self.value(bias).to_vec();
        let data: Vec<f64> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % c])
            .collect();
        let ng = self.needs(a) || self.needs(bias);
        Ok(self.push(vec![r, c], data, Op::AddBias(a, bias), ng))
    }

    /// Multiplies every entry by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data: Vec<f64> = self.value(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(a);
        self.push(shape, data, Op::Scale(a, c), ng)
    }

    /// Concatenation along `axis` (0 for rank-1; 0 or 1 for rank-2). All
    /// parts must agree on every dimension except `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat parts"));
        }
        let rank = self.shape(parts[0]).len();
        if axis >= rank {
            return Err(Error::InvalidShape {
                op: "concat",
                expected: "axis within rank",
                shape: self.shape(parts[0]).to_vec(),
            });
        }
        let mut out_shape = self.shape(parts[0]).to_vec();
        for &p in &parts[1..] {
            let s = self.shape(p);
            let compatible = s.len() == rank
                && s.iter()
                    .zip(&out_shape)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: out_shape,
                    rhs: s.to_vec(),
                });
            }
            out_shape[axis] += s[axis];
        }
        let numel = out_shape.iter().product();
        let mut data = vec![0.0; numel];
        if rank == 1 || axis == 0 {
            let mut at = 0;
            for &p in parts {
                let v = self.value(p);
                data[at..at + v.len()].copy_from_slice(v);
                at += v.len();
            }
        } else {
            // rank-2, axis 1: interleave row slices
            let rows = out_shape[0];
            let out_cols = out_shape[1];
            let mut col_at = 0;
            for &p in parts {
                let cols = self.shape(p)[1];
                let v = self.value(p).to_vec();
                for r in 0..rows {
                    data[r * out_cols + col_at..r * out_cols + col_at + cols]
                        .copy_from_slice(&v[r * cols..(r + 1) * cols]);
                }
                col_at += cols;
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            out_shape,
            data,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::InvalidShape {
                op: "narrow",
                expected: "slice range within axis",
                shape,
            });
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let v = self.value(a);
        let data = if shape.len() == 1 || axis == 0 {
            let row: usize = shape[1..].iter().product();
            v[start * row..(start + len) * row].to_vec()
        } else {
            let cols = shape[1];
            let mut out = Vec::with_capacity(shape[0] * len);
            for r in 0..shape[0] {
                out.extend_from_slice(&v[r * cols + start..r * cols + start + len]);
            }
            out
        };
        let ng = self.needs(a);
        Ok(self.push(out_shape, data, Op::Narrow { a, axis, start }, ng))
    }

    /// Rows of a rank-2 tensor picked by index, in order. Repeats allowed;
    /// gradients scatter-add back into the source rows.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "gather_rows",
                expected: "rank-2 input",
                shape,
            });
        }
        if indices.is_empty() {
            return Err(Error::EmptyInput("gather_rows indices"));
        }
        let (rows, cols) = (shape[0], shape[1]);
        for &i in indices {
            if i >= rows {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    size: rows,
                });
            }
        }
        let v = self.value(a);
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(&v[i * cols..(i + 1) * cols]);
        }
        let ng = self.needs(a);
        Ok(self.push(
            vec![indices.len(), cols],
            data,
            Op::GatherRows {
                a,
                indices: indices.to_vec(),
            },
            ng,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "transpose",
                expected: "rank-2 input",
                shape,
            });
        }
        let (r, c) = (shape[0], shape[1]);
        let v = self.value(a);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = v[i * c + j];
            }
        }
        let ng = self.needs(a);
        Ok(self.push(vec![c, r], data, Op::Transpose(a), ng))
    }

    /// Elementwise logistic sigmoid; output strictly in (0, 1).
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    /// Elementwise hyperbolic tangent; output in (-1, 1).
    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    /// Elementwise max(0, x).
    pub fn relu(&mut self, a: Var) -> Var {
        // explicit NaN pass-through; f64::max would silently map NaN to 0
        self.unary(
            a,
            |x| if x > 0.0 || x.is_nan() { x } else { 0.0 },
            Op::Relu(a),
        )
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(a);
        self.push(shape, data, op, ng)
    }

    /// Max-subtraction stabilized softmax along `axis`; every slice sums to 1.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidShape {
                op: "softmax",
                expected: "axis within rank",
                shape,
            });
        }
        let data = softmax_raw(self.value(a), &shape, axis);
        let ng = self.needs(a);
        Ok(self.push(shape, data, Op::Softmax { a, axis }, ng))
    }

    /// Sum of all entries, as a scalar (shape `[1]`).
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().sum();
        let ng = self.needs(a);
        self.push(vec![1], vec![s], Op::Sum(a), ng)
    }

    pub fn reshape(&mut self, a: Var, new_shape: Vec<usize>) -> Result<Var> {
        if new_shape.iter().product::<usize>() != self.numel(a) {
            return Err(Error::InvalidShape {
                op: "reshape",
                expected: "matching element count",
                shape: new_shape,
            });
        }
        let data = self.value(a).to_vec();
        let ng = self.needs(a);
        Ok(self.push(new_shape, data, Op::Reshape(a), ng))
    }

    /// Per-row layer normalization of a `[n, d]` tensor with learned scale
    /// and offset of length `d`. Uses [`LAYER_NORM_EPS`].
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let d = *shape.last().unwrap();
        if shape.len() != 2 || self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: shape,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let v = self.value(a);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut data = vec![0.0; v.len()];
        for r in 0..shape[0] {
            let row = &v[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for j in 0..d {
                data[r * d + j] = (row[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        let ng = self.needs(a) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(shape, data, Op::LayerNorm { a, gamma, beta }, ng))
    }

    /// Mean negative log probability of the labeled class over a
    /// `[batch, classes]` matrix of probabilities. Probabilities are clamped
    /// at [`PROB_EPS`] before the log.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        self.cross_entropy_weighted(probs, labels, None)
    }

    /// Class-weighted cross-entropy: `sum_i w[y_i] * -ln(p_i[y_i]) / sum_i w[y_i]`.
    /// With all weights 1 this reduces to the plain mean.
    pub fn cross_entropy_weighted(
        &mut self,
        probs: Var,
        labels: &[usize],
        class_weights: Option<&[f64]>,
    ) -> Result<Var> {
        let shape = self.shape(probs).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::InvalidShape {
                op: "cross_entropy",
                expected: "[batch, classes] with one label per row",
                shape,
            });
        }
        let classes = shape[1];
        for &l in labels {
            if l >= classes {
                return Err(Error::LabelOutOfRange { label: l, classes });
            }
        }
        if let Some(w) = class_weights {
            if w.len() != classes {
                return Err(Error::InvalidShape {
                    op: "cross_entropy",
                    expected: "one weight per class",
                    shape: vec![w.len()],
                });
            }
        }
        let v = self.value(probs);
        let weights: Vec<f64> = labels
            .iter()
            .map(|&l| class_weights.map_or(1.0, |w| w[l]))
            .collect();
        let total_w: f64 = weights.iter().sum();
        let mut loss = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let p = v[i * classes + l];
            // clamp only genuine underflow; NaN must propagate, not vanish
            let p = if p.is_nan() { p } else { p.max(PROB_EPS) };
            loss -= weights[i] * p.ln();
        }
        loss /= total_w;
        let ng = self.needs(probs);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
                weights: class_weights.map(|_| weights),
            },
            ng,
        ))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Populates `d(loss)/d(node)` for every node that needs a gradient.
    /// Gradients are recomputed from scratch on each call, so repeated calls
    /// from the same tape state agree bit for bit. Within a pass, a node used
    /// by several consumers accumulates all of their contributions.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.numel(loss) != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue, // not on any path to the loss
            };
            self.apply_backward(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        self.grads = grads;
        Ok(())
    }

    /// Gradient of the most recent [`Tape::backward`] call, if `v` received one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn apply_backward(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let shape = &self.nodes[i].shape;
        match &self.nodes[i].op {
            Op::Leaf => {}

            Op::Matmul(a, b) => {
                let (m, n) = (shape[0], shape[1]);
                let k = self.shape(*a)[1];
                if self.needs(*a) {
                    // dA = g · Bᵀ
                    let bt = transpose_raw(self.value(*b), k, n);
                    let da = matmul_raw(g, &bt, m, n, k);
                    accumulate(grads, a.0, &da, m * k);
                }
                if self.needs(*b) {
                    // dB = Aᵀ · g
                    let at = transpose_raw(self.value(*a), m, k);
                    let db = matmul_raw(&at, g, k, m, n);
                    accumulate(grads, b.0, &db, k * n);
                }
            }

            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, a.0, g, g.len());
                }
                if self.needs(*b) {
                    accumulate(grads, b.0, g, g.len());
                }
            }

            Op::AddBias(a, bias) => {
                if self.needs(*a) {
                    accumulate(grads, a.0, g, g.len());
                }
                if self.needs(*bias) {
                    let c = shape[1];
                    let mut db = vec![0.0; c];
                    for (idx, &gv) in g.iter().enumerate() {
                        db[idx % c] += gv;
                    }
                    accumulate(grads, bias.0, &db, c);
                }
            }

            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.value(*b))
                        .map(|(&gv, &bv)| gv * bv)
                        .collect();
                    accumulate(grads, a.0, &da, g.len());
                }
                if self.needs(*b) {
                    let db: Vec<f64> = g
                        .iter()
                        .zip(self.value(*a))
                        .map(|(&gv, &av)| gv * av)
                        .collect();
                    accumulate(grads, b.0, &db, g.len());
                }
            }

            Op::Scale(a, c) => {
                if self.needs(*a) {
                    let da: Vec<f64> = g.iter().map(|&gv| gv * c).collect();
                    accumulate(grads, a.0, &da, g.len());
                }
            }

            Op::Concat { parts, axis } => {
                if shape.len() == 1 || *axis == 0 {
                    let mut at = 0;
                    for &p in parts {
                        let len = self.numel(p);
                        if self.needs(p) {
                            accumulate(grads, p.0, &g[at..at + len], len);
                        }
                        at += len;
                    }
                } else {
                    let rows = shape[0];
                    let out_cols = shape[1];
                    let mut col_at = 0;
                    for &p in parts {
                        let cols = self.shape(p)[1];
                        if self.needs(p) {
                            let mut dp = vec![0.0; rows * cols];
                            for r in 0..rows {
                                dp[r * cols..(r + 1) * cols].copy_from_slice(
                                    &g[r * out_cols + col_at..r * out_cols + col_at + cols],
                                );
                            }
                            accumulate(grads, p.0, &dp, rows * cols);
                        }
                        col_at += cols;
                    }
                }
            }

            Op::Narrow { a, axis, start } => {
                if !self.needs(*a) {
                    return;
                }
                let src_shape = self.shape(*a).to_vec();
                let mut da = vec![0.0; src_shape.iter().product()];
                if src_shape.len() == 1 || *axis == 0 {
                    let row: usize = src_shape[1..].iter().product::<usize>().max(1);
                    da[start * row..start * row + g.len()].copy_from_slice(g);
                } else {
                    let cols = src_shape[1];
                    let len = shape[1];
                    for r in 0..src_shape[0] {
                        da[r * cols + start..r * cols + start + len]
                            .copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                }
                accumulate(grads, a.0, &da, da.len());
            }

            Op::GatherRows { a, indices } => {
                if !self.needs(*a) {
                    return;
                }
                let src_shape = self.shape(*a);
                let cols = src_shape[1];
                let mut da = vec![0.0; src_shape[0] * cols];
                for (r, &idx) in indices.iter().enumerate() {
                    for j in 0..cols {
                        da[idx * cols + j] += g[r * cols + j];
                    }
                }
                accumulate(grads, a.0, &da, da.len());
            }

            Op::Transpose(a) => {
                if self.needs(*a) {
                    let (r, c) = (shape[0], shape[1]);
                    let da = transpose_raw(g, r, c);
                    accumulate(grads, a.0, &da, r * c);
                }
            }

            Op::Sigmoid(a) => {
                if self.needs(*a) {
                    let out = &self.nodes[i].data;
                    let da: Vec<f64> = g
                        .iter()
                        .zip(out)
                        .map(|(&gv, &s)| gv * s * (1.0 - s))
                        .collect();
                    accumulate(grads, a.0, &da, g.len());
                }
            }

            Op::Tanh(a) => {
                if self.needs(*a) {
                    let out = &self.nodes[i].data;
                    let da: Vec<f64> = g
                        .iter()
                        .zip(out)
                        .map(|(&gv, &t)| gv * (1.0 - t * t))
                        .collect();
                    accumulate(grads, a.0, &da, g.len());
                }
            }

            Op::Relu(a) => {
                if self.needs(*a) {
                    let input = self.value(*a);
                    let da: Vec<f64> = g
                        .iter()
                        .zip(input)
                        .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(grads, a.0, &da, g.len());
                }
            }

            Op::Softmax { a, axis } => {
                if !self.needs(*a) {
                    return;
                }
                // ds_j = s_j * (g_j - sum_k g_k s_k) per slice
                let s = &self.nodes[i].data;
                let axis_len = shape[*axis];
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let mut da = vec![0.0; s.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let mut dot = 0.0;
                        for j in 0..axis_len {
                            let flat = o * axis_len * inner + j * inner + ii;
                            dot += g[flat] * s[flat];
                        }
                        for j in 0..axis_len {
                            let flat = o * axis_len * inner + j * inner + ii;
                            da[flat] = s[flat] * (g[flat] - dot);
                        }
                    }
                }
                accumulate(grads, a.0, &da, da.len());
            }

            Op::Sum(a) => {
                if self.needs(*a) {
                    let da = vec![g[0]; self.numel(*a)];
                    accumulate(grads, a.0, &da, da.len());
                }
            }

            Op::Reshape(a) => {
                if self.needs(*a) {
                    accumulate(grads, a.0, g, g.len());
                }
            }

            Op::LayerNorm { a, gamma, beta } => {
                let d = *shape.last().unwrap();
                let rows = shape[0];
                let x = self.value(*a);
                let gm = self.value(*gamma);
                let mut da = vec![0.0; x.len()];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for r in 0..rows {
                    let row = &x[r * d..(r + 1) * d];
                    let grow = &g[r * d..(r + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv_std).collect();
                    let dxhat: Vec<f64> = grow.iter().zip(gm).map(|(&gv, &gmv)| gv * gmv).collect();
                    let sum_dxhat: f64 = dxhat.iter().sum();
                    let sum_dxhat_xhat: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dgamma[j] += grow[j] * xhat[j];
                        dbeta[j] += grow[j];
                        da[r * d + j] = inv_std / d as f64
                            * (d as f64 * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                    }
                }
                if self.needs(*a) {
                    accumulate(grads, a.0, &da, da.len());
                }
                if self.needs(*gamma) {
                    accumulate(grads, gamma.0, &dgamma, d);
                }
                if self.needs(*beta) {
                    accumulate(grads, beta.0, &dbeta, d);
                }
            }

            Op::CrossEntropy {
                probs,
                labels,
                weights,
            } => {
                if !self.needs(*probs) {
                    return;
                }
                let classes = self.shape(*probs)[1];
                let v = self.value(*probs);
                let total_w: f64 = weights
                    .as_ref()
                    .map_or(labels.len() as f64, |w| w.iter().sum());
                let mut dp = vec![0.0; v.len()];
                for (r, &l) in labels.iter().enumerate() {
                    let w = weights.as_ref().map_or(1.0, |ws| ws[r]);
                    let p = v[r * classes + l];
                    if p > PROB_EPS {
                        // d/dp of -w*ln(p)/W; clamped entries are constant
                        dp[r * classes + l] = -g[0] * w / (total_w * p);
                    }
                }
                accumulate(grads, probs.0, &dp, dp.len());
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, contribution: &[f64], numel: usize) {
    debug_assert_eq!(contribution.len(), numel);
    match &mut grads[id] {
        Some(buf) => {
            for (a, b) in buf.iter_mut().zip(contribution) {
                *a += b;
            }
        }
        None => grads[id] = Some(contribution.to_vec()),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn softmax_raw(v: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let axis_len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; v.len()];
    for o in 0..outer {
        for ii in 0..inner {
            let flat = |j: usize| o * axis_len * inner + j * inner + ii;
            let max = (0..axis_len)
                .map(|j| v[flat(j)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..axis_len {
                let e = (v[flat(j)] - max).exp();
                out[flat(j)] = e;
                sum += e;
            }
            for j in 0..axis_len {
                out[flat(j)] /= sum;
            }
        }
    }
    out
}

// ───────────────────────────────────────────────────────────────────────────
// Gradient checking
// ───────────────────────────────────────────────────────────────────────────

/// Compares reverse-mode gradients against central finite differences.
///
/// `f` must build a scalar loss from leaves registered for the given
/// parameters, and must be deterministic (no fresh randomness per call).
/// Returns the maximum relative error `|a - b| / max(1, |a|, |b|)` over all
/// parameter coordinates.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let run = |tensors: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.requires_grad = true;
                tape.leaf(&t)
            })
            .collect();
        let loss = f(&mut tape, &vars)?;
        Ok((tape, vars, loss))
    };

    // Analytic gradients.
    let (mut tape, vars, loss) = run(params)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            tape.grad(v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; tape.numel(v)])
        })
        .collect();

    // Central differences, one coordinate at a time.
    let mut max_err: f64 = 0.0;
    let mut work: Vec<Tensor> = params.to_vec();
    for pi in 0..params.len() {
        for (ci, &a) in analytic[pi].iter().enumerate() {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + eps;
            let (tp, _, lp) = run(&work)?;
            let plus = tp.value(lp)[0];
            work[pi].data_mut()[ci] = orig - eps;
            let (tm, _, lm) = run(&work)?;
            let minus = tm.value(lm)[0];
            work[pi].data_mut()[ci] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let err = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}

/// Copies the most recent backward gradients into the tensors' own gradient
/// buffers (adding to whatever is already accumulated there).
pub fn write_back_grads(tape: &Tape, bindings: &mut [(&mut Tensor, Var)]) {
    for (tensor, var) in bindings {
        if let Some(g) = tape.grad(*var) {
            tensor.accumulate_grad(g);
        }
    }
}

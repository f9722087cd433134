//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Graph`] is an append-only record of the primitive operations applied
//! during one forward pass. Node ids are indices into that record, so the
//! record is already in topological order and `backward` is a single reverse
//! sweep.

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Exp(NodeId),
    Square(NodeId),
    SliceCols(NodeId, usize, usize),
    ConcatCols(NodeId, NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    /// Saves the softmax probabilities.
    SoftmaxXent {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Matrix,
    },
    /// `log (1/n) Σ exp(a)` over every element; saves the normalized weights.
    LogMeanExp { input: NodeId, weights: Matrix },
    /// `-(1/n) Σ_i log (1/n) Σ_j exp(-‖z_i - z_j‖² / 2σ²)`; saves the row-normalized kernel.
    PairwiseEntropy {
        input: NodeId,
        sigma: f64,
        weights: Matrix,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Forward-pass record.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node that required them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Matrix> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

fn check_same(op: &str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "{op}: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[[0, 0]]
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> NodeId {
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

    /// A leaf that receives a gradient (parameters, or inputs under attack).
    pub fn variable(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::Shape(format!(
                "matmul: {:?} · {:?}",
                va.dim(),
                vb.dim()
            )));
        }
        let out = va.dot(vb);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `a + row`, broadcasting a 1×n row over every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(Error::Shape(format!(
                "add_row: {:?} + {:?}",
                va.dim(),
                vr.dim()
            )));
        }
        let out = va + vr;
        let ng = self.needs(a) || self.needs(row);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        check_same("add", self.value(a), self.value(b))?;
        let out = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        check_same("sub", self.value(a), self.value(b))?;
        let out = self.value(a) - self.value(b);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        check_same("mul", self.value(a), self.value(b))?;
        let out = self.value(a) * self.value(b);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.value(a) * c;
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).mapv(|v| v.max(0.0));
        let ng = self.needs(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).mapv(f64::exp);
        let ng = self.needs(a);
        self.push(out, Op::Exp(a), ng)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).mapv(|v| v * v);
        let ng = self.needs(a);
        self.push(out, Op::Square(a), ng)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let va = self.value(a);
        if start >= end || end > va.ncols() {
            return Err(Error::Shape(format!(
                "slice_cols {start}..{end} of {:?}",
                va.dim()
            )));
        }
        let out = va.slice(s![.., start..end]).to_owned();
        let ng = self.needs(a);
        Ok(self.push(out, Op::SliceCols(a, start, end), ng))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.nrows() != vb.nrows() {
            return Err(Error::Shape(format!(
                "concat_cols: {:?} | {:?}",
                va.dim(),
                vb.dim()
            )));
        }
        let out = ndarray::concatenate(Axis(1), &[va.view(), vb.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::ConcatCols(a, b), ng))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.needs(a);
        self.push(out, Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let out = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        let ng = self.needs(a);
        self.push(out, Op::MeanAll(a), ng)
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, max-subtracted.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let v = self.value(logits);
        let (n, k) = v.dim();
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "cross-entropy: {n} rows but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let probs = softmax_rows(v);
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let row = v.row(i);
                let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
                lse - row[l]
            })
            .sum::<f64>()
            / n as f64;
        let ng = self.needs(logits);
        Ok(self.push(
            Array2::from_elem((1, 1), loss),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// `log((1/n) Σ exp(a))` over all elements of `a`, stabilized.
    pub fn log_mean_exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let max = v.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let shifted = v.mapv(|x| (x - max).exp());
        let total = shifted.sum();
        let out = max + (total / v.len() as f64).ln();
        let weights = shifted / total;
        let ng = self.needs(a);
        self.push(
            Array2::from_elem((1, 1), out),
            Op::LogMeanExp { input: a, weights },
            ng,
        )
    }

    /// Pairwise Gaussian-mixture entropy bound of the rows of `z`, in nats:
    /// `-(1/n) Σ_i log (1/n) Σ_j exp(-‖z_i - z_j‖² / (2σ²))`.
    pub fn pairwise_entropy(&mut self, z: NodeId, sigma: f64) -> Result<NodeId> {
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!("kernel width must be positive, got {sigma}")));
        }
        let v = self.value(z);
        let (value, weights) = pairwise_entropy_forward(v, sigma);
        let ng = self.needs(z);
        Ok(self.push(
            Array2::from_elem((1, 1), value),
            Op::PairwiseEntropy {
                input: z,
                sigma,
                weights,
            },
            ng,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every upstream node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let node = self.nodes.get(loss.0).ok_or_else(|| {
            Error::Usage(format!(
                "backward on node {} but the record holds {} nodes",
                loss.0,
                self.nodes.len()
            ))
        })?;
        if node.value.dim() != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.dim()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *row, gr);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, -&g);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, &g * self.value(*b));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, &g * self.value(*a));
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g * *c),
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|gv, &x| {
                            if x <= 0.0 {
                                *gv = 0.0
                            }
                        });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => accumulate(&mut grads, *a, g * &node.value),
                Op::Square(a) => accumulate(&mut grads, *a, g * self.value(*a) * 2.0),
                Op::SliceCols(a, start, end) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(a, b) => {
                    let split = self.value(*a).ncols();
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.slice(s![.., ..split]).to_owned());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.slice(s![.., split..]).to_owned());
                    }
                }
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    accumulate(&mut grads, *a, ga);
                }
                Op::MeanAll(a) => {
                    let v = self.value(*a);
                    let ga = Array2::from_elem(v.dim(), g[[0, 0]] / v.len() as f64);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                } => {
                    let n = labels.len() as f64;
                    let mut ga = probs.clone();
                    for (i, &l) in labels.iter().enumerate() {
                        ga[[i, l]] -= 1.0;
                    }
                    ga *= g[[0, 0]] / n;
                    accumulate(&mut grads, *logits, ga);
                }
                Op::LogMeanExp { input, weights } => {
                    accumulate(&mut grads, *input, weights * g[[0, 0]]);
                }
                Op::PairwiseEntropy {
                    input,
                    sigma,
                    weights,
                } => {
                    let ga = pairwise_entropy_backward(self.value(*input), weights, *sigma)
                        * g[[0, 0]];
                    accumulate(&mut grads, *input, ga);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut grads[id.0] {
        Some(existing) => *existing += &g,
        slot => *slot = Some(g),
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let total = row.sum();
        row /= total;
    }
    out
}

pub(crate) fn squared_distances(z: &Matrix) -> Matrix {
    let n = z.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        let zi = z.row(i);
        for j in (i + 1)..n {
            let dist: f64 = zi
                .iter()
                .zip(z.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[[i, j]] = dist;
            d[[j, i]] = dist;
        }
    }
    d
}

/// Returns the entropy bound (nats) and the row-normalized kernel weights.
pub(crate) fn pairwise_entropy_forward(z: &Matrix, sigma: f64) -> (f64, Matrix) {
    let n = z.nrows();
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut weights = squared_distances(z);
    let mut total = 0.0;
    for mut row in weights.rows_mut() {
        // the diagonal term exp(0) = 1 bounds the row sum away from zero
        row.mapv_inplace(|d| (-d * inv).exp());
        let s = row.sum();
        total += (s / n as f64).ln();
        row /= s;
    }
    (-total / n as f64, weights)
}

fn pairwise_entropy_backward(z: &Matrix, weights: &Matrix, sigma: f64) -> Matrix {
    // ∂/∂z_k of -(1/n) Σ_i log Σ_j K_ij, with ∂K_ij/∂z_i = -K_ij (z_i - z_j)/σ²
    let n = z.nrows() as f64;
    let sym = weights + &weights.t();
    let row_sums = sym.sum_axis(Axis(1)).insert_axis(Axis(1));
    let grad = (&row_sums * z - sym.dot(z)) / (n * sigma * sigma);
    grad
}

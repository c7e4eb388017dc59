//! Reverse-mode differentiation over a flat operation tape.
//!
//! Every operation appends one node holding its forward value and the
//! handles of its inputs. [`Tape::backward`] walks the nodes in reverse and
//! accumulates one gradient contribution per recorded use of each input.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;

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
    Affine { x: Var, weight: Var, bias: Var },
    Relu(Var),
    Sigmoid(Var),
    Sqrt(Var),
    Mask { x: Var, mask: Vec<f64> },
    Add(Var, Var),
    Sub(Var, Var),
    ConvexMix { lambda: Var, a: Var, b: Var },
    SegmentMean { x: Var, segments: Vec<Vec<usize>> },
    GatherRows { x: Var, index: Vec<usize> },
    ConcatCols(Var, Var),
    PairwiseSqDist(Var, Var),
    RowSqDist(Var, Var),
    Reshape(Var),
    Neg(Var),
    Sum(Var),
    Mean(Var),
    CrossEntropy { scores: Var, targets: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a computation for later differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node on a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; exactly zero when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// `x · weight + bias`, row by row, for `x: [batch, in]`.
    pub fn affine(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(weight), self.value(bias));
        if xv.shape().len() != 2 || wv.shape().len() != 2 || xv.shape()[1] != wv.shape()[0] {
            return Err(Error::dim("affine", xv.shape(), wv.shape()));
        }
        let (batch, inner, out) = (xv.shape()[0], wv.shape()[0], wv.shape()[1]);
        if bv.len() != out {
            return Err(Error::dim("affine bias", wv.shape(), bv.shape()));
        }
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let mut data = Vec::with_capacity(batch * out);
        for r in 0..batch {
            let mut row = bd.to_vec();
            for k in 0..inner {
                let xk = xd[r * inner + k];
                if xk == 0.0 {
                    continue;
                }
                let wrow = &wd[k * out..(k + 1) * out];
                for (acc, w) in row.iter_mut().zip(wrow) {
                    *acc += xk * w;
                }
            }
            data.extend_from_slice(&row);
        }
        let value = Tensor::new(vec![batch, out], data)?;
        Ok(self.push(value, Op::Affine { x, weight, bias }))
    }

    /// Which inputs of every recorded ReLU are strictly positive, in
    /// recording order. Two replays of the same graph give patterns of equal
    /// length, so a changed entry means an input crossed the kink.
    pub fn relu_signs(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                out.extend(self.value(x).data().iter().map(|&v| v > 0.0));
            }
        }
        out
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v < 0.0 { 0.0 } else { v });
        self.push(value, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(ops::sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    /// Elementwise square root; the derivative at 0 is taken as 0.
    pub fn sqrt(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v < 0.0 { 0.0 } else { v.sqrt() });
        self.push(value, Op::Sqrt(x))
    }

    /// Inverted dropout: survivors are scaled by `1 / keep_probability`.
    ///
    /// Returns `x` itself when not training or when nothing is dropped.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        keep_probability: f64,
        rng: &mut R,
        training: bool,
    ) -> Result<Var> {
        validate_keep_probability(keep_probability)?;
        if !training || keep_probability == 1.0 {
            return Ok(x);
        }
        let scale = 1.0 / keep_probability;
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < keep_probability {
                    scale
                } else {
                    0.0
                }
            })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mask { x, mask }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| -v);
        self.push(value, Op::Neg(x))
    }

    /// Row-wise convex combination `lambda_i · a_i + (1 − lambda_i) · b_i`
    /// for `a, b: [m, n]` and one coefficient per row.
    pub fn convex_mix(&mut self, lambda: Var, a: Var, b: Var) -> Result<Var> {
        self.same_shape("convex_mix", a, b)?;
        let (lv, av, bv) = (self.value(lambda), self.value(a), self.value(b));
        let rows = av.rows();
        if lv.len() != rows {
            return Err(Error::dim("convex_mix lambda", lv.shape(), av.shape()));
        }
        let cols = av.cols();
        let mut data = Vec::with_capacity(av.len());
        for i in 0..rows {
            let l = lv.data()[i];
            for j in 0..cols {
                data.push(l * av.data()[i * cols + j] + (1.0 - l) * bv.data()[i * cols + j]);
            }
        }
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, Op::ConvexMix { lambda, a, b }))
    }

    /// Mean of the rows listed in each segment, giving `[segments, cols]`.
    pub fn segment_mean(&mut self, x: Var, segments: Vec<Vec<usize>>) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        if segments.is_empty() {
            return Err(Error::Usage("segment_mean over zero segments".into()));
        }
        let mut data = Vec::with_capacity(segments.len() * cols);
        for seg in &segments {
            if seg.is_empty() {
                return Err(Error::Usage("segment_mean over an empty segment".into()));
            }
            let mut acc = vec![0.0; cols];
            for &r in seg {
                if r >= xv.rows() {
                    return Err(Error::Usage(format!("row {r} out of range")));
                }
                for (a, v) in acc.iter_mut().zip(xv.row(r)) {
                    *a += v;
                }
            }
            let n = seg.len() as f64;
            data.extend(acc.into_iter().map(|a| a / n));
        }
        let value = Tensor::new(vec![segments.len(), cols], data)?;
        Ok(self.push(value, Op::SegmentMean { x, segments }))
    }

    /// Selects rows (with repetition allowed), giving `[index.len(), cols]`.
    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &r in &index {
            if r >= xv.rows() {
                return Err(Error::Usage(format!("row {r} out of range")));
            }
            data.extend_from_slice(xv.row(r));
        }
        let value = Tensor::new(vec![index.len(), cols], data)?;
        Ok(self.push(value, Op::GatherRows { x, index }))
    }

    /// `[m, p]` and `[m, q]` side by side as `[m, p + q]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::dim("concat_cols", av.shape(), bv.shape()));
        }
        let (p, q) = (av.cols(), bv.cols());
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for i in 0..av.rows() {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let value = Tensor::new(vec![av.rows(), p + q], data)?;
        Ok(self.push(value, Op::ConcatCols(a, b)))
    }

    /// Squared distances between every row of `a: [m, d]` and of `b: [n, d]`.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(Error::dim("pairwise_sq_dist", av.shape(), bv.shape()));
        }
        let (m, n) = (av.rows(), bv.rows());
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                data.push(ops::squared_euclidean(av.row(i), bv.row(j))?);
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(value, Op::PairwiseSqDist(a, b)))
    }

    /// Squared distance between matching rows of two `[m, d]` tensors, giving `[m]`.
    pub fn row_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_sq_dist", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = (0..av.rows())
            .map(|i| ops::squared_euclidean(av.row(i), bv.row(i)))
            .collect::<Result<Vec<_>>>()?;
        let value = Tensor::new(vec![av.rows()], data)?;
        Ok(self.push(value, Op::RowSqDist(a, b)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(value, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = Tensor::scalar(xv.data().iter().sum::<f64>() / xv.len() as f64);
        self.push(value, Op::Mean(x))
    }

    /// Mean over rows of `−scores[i, targets[i]] + log Σ_j exp(scores[i, j])`.
    pub fn cross_entropy(&mut self, scores: Var, targets: Vec<usize>) -> Result<Var> {
        let sv = self.value(scores);
        if sv.rows() != targets.len() {
            return Err(Error::dim("cross_entropy", sv.shape(), &[targets.len()]));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= sv.cols()) {
            return Err(Error::Usage(format!("target {t} out of range")));
        }
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| ops::negative_log_softmax(sv.row(i), t))
            .sum();
        let value = Tensor::scalar(total / targets.len() as f64);
        Ok(self.push(value, Op::CrossEntropy { scores, targets }))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    /// Gradients of the scalar `loss` with respect to every recorded node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, weight, bias } => {
                let (xv, wv) = (self.value(*x), self.value(*weight));
                let (batch, inner, out) = (xv.shape()[0], wv.shape()[0], wv.shape()[1]);
                let mut dx = vec![0.0; batch * inner];
                let mut dw = vec![0.0; inner * out];
                let mut db = vec![0.0; out];
                for r in 0..batch {
                    let grow = &gd[r * out..(r + 1) * out];
                    for (d, gv) in db.iter_mut().zip(grow) {
                        *d += gv;
                    }
                    for k in 0..inner {
                        let wrow = &wv.data()[k * out..(k + 1) * out];
                        dx[r * inner + k] = wrow.iter().zip(grow).map(|(w, gv)| w * gv).sum();
                        let xk = xv.data()[r * inner + k];
                        for (d, gv) in dw[k * out..(k + 1) * out].iter_mut().zip(grow) {
                            *d += xk * gv;
                        }
                    }
                }
                accumulate(grads, *x, xv.shape(), dx);
                accumulate(grads, *weight, wv.shape(), dw);
                accumulate(grads, *bias, self.shape(*bias), db);
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let d = xv
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(v, gv)| if *v > 0.0 { *gv } else { 0.0 })
                    .collect();
                accumulate(grads, *x, xv.shape(), d);
            }
            Op::Sigmoid(x) => {
                let d = node
                    .value
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(s, gv)| gv * s * (1.0 - s))
                    .collect();
                accumulate(grads, *x, self.shape(*x), d);
            }
            Op::Sqrt(x) => {
                let d = node
                    .value
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(r, gv)| if *r > 0.0 { gv / (2.0 * r) } else { 0.0 })
                    .collect();
                accumulate(grads, *x, self.shape(*x), d);
            }
            Op::Mask { x, mask } => {
                let d = mask.iter().zip(gd).map(|(m, gv)| m * gv).collect();
                accumulate(grads, *x, self.shape(*x), d);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.shape(), gd.to_vec());
                accumulate(grads, *b, g.shape(), gd.to_vec());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.shape(), gd.to_vec());
                accumulate(grads, *b, g.shape(), gd.iter().map(|v| -v).collect());
            }
            Op::Neg(x) => {
                accumulate(grads, *x, g.shape(), gd.iter().map(|v| -v).collect());
            }
            Op::ConvexMix { lambda, a, b } => {
                let (lv, av, bv) = (self.value(*lambda), self.value(*a), self.value(*b));
                let (rows, cols) = (av.rows(), av.cols());
                let mut dl = vec![0.0; rows];
                let mut da = vec![0.0; av.len()];
                let mut db = vec![0.0; av.len()];
                for i in 0..rows {
                    let l = lv.data()[i];
                    for j in 0..cols {
                        let k = i * cols + j;
                        dl[i] += gd[k] * (av.data()[k] - bv.data()[k]);
                        da[k] = l * gd[k];
                        db[k] = (1.0 - l) * gd[k];
                    }
                }
                accumulate(grads, *lambda, lv.shape(), dl);
                accumulate(grads, *a, av.shape(), da);
                accumulate(grads, *b, bv.shape(), db);
            }
            Op::SegmentMean { x, segments } => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut d = vec![0.0; xv.len()];
                for (s, seg) in segments.iter().enumerate() {
                    let n = seg.len() as f64;
                    for &r in seg {
                        for j in 0..cols {
                            d[r * cols + j] += gd[s * cols + j] / n;
                        }
                    }
                }
                accumulate(grads, *x, xv.shape(), d);
            }
            Op::GatherRows { x, index } => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut d = vec![0.0; xv.len()];
                for (o, &r) in index.iter().enumerate() {
                    for j in 0..cols {
                        d[r * cols + j] += gd[o * cols + j];
                    }
                }
                accumulate(grads, *x, xv.shape(), d);
            }
            Op::ConcatCols(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (p, q) = (av.cols(), bv.cols());
                let mut da = Vec::with_capacity(av.len());
                let mut db = Vec::with_capacity(bv.len());
                for i in 0..av.rows() {
                    let row = &gd[i * (p + q)..(i + 1) * (p + q)];
                    da.extend_from_slice(&row[..p]);
                    db.extend_from_slice(&row[p..]);
                }
                accumulate(grads, *a, av.shape(), da);
                accumulate(grads, *b, bv.shape(), db);
            }
            Op::PairwiseSqDist(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, n, dim) = (av.rows(), bv.rows(), av.cols());
                let mut da = vec![0.0; av.len()];
                let mut db = vec![0.0; bv.len()];
                for i in 0..m {
                    for j in 0..n {
                        let gij = 2.0 * gd[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for k in 0..dim {
                            let diff = av.data()[i * dim + k] - bv.data()[j * dim + k];
                            da[i * dim + k] += gij * diff;
                            db[j * dim + k] -= gij * diff;
                        }
                    }
                }
                accumulate(grads, *a, av.shape(), da);
                accumulate(grads, *b, bv.shape(), db);
            }
            Op::RowSqDist(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let dim = av.cols();
                let mut da = vec![0.0; av.len()];
                let mut db = vec![0.0; bv.len()];
                for i in 0..av.rows() {
                    let gi = 2.0 * gd[i];
                    for k in 0..dim {
                        let diff = av.data()[i * dim + k] - bv.data()[i * dim + k];
                        da[i * dim + k] = gi * diff;
                        db[i * dim + k] = -gi * diff;
                    }
                }
                accumulate(grads, *a, av.shape(), da);
                accumulate(grads, *b, bv.shape(), db);
            }
            Op::Reshape(x) => {
                accumulate(grads, *x, self.shape(*x), gd.to_vec());
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                accumulate(grads, *x, xv.shape(), vec![gd[0]; xv.len()]);
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let v = gd[0] / xv.len() as f64;
                accumulate(grads, *x, xv.shape(), vec![v; xv.len()]);
            }
            Op::CrossEntropy { scores, targets } => {
                let sv = self.value(*scores);
                let cols = sv.cols();
                let scale = gd[0] / targets.len() as f64;
                let mut d = Vec::with_capacity(sv.len());
                for (i, &t) in targets.iter().enumerate() {
                    let probs = ops::softmax_from_scores(sv.row(i));
                    for (j, p) in probs.into_iter().enumerate() {
                        let indicator = if j == t { 1.0 } else { 0.0 };
                        d.push(scale * (p - indicator));
                    }
                }
                debug_assert_eq!(d.len(), sv.rows() * cols);
                accumulate(grads, *scores, sv.shape(), d);
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect()
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, shape: &[usize], data: Vec<f64>) {
    let contribution = Tensor::new(shape.to_vec(), data).expect("gradient shape");
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&contribution),
        slot @ None => *slot = Some(contribution),
    }
}

pub(crate) fn validate_keep_probability(keep_probability: f64) -> Result<()> {
    if !(keep_probability > 0.0 && keep_probability <= 1.0) {
        return Err(Error::Config(format!(
            "keep probability must be in (0, 1], got {keep_probability}"
        )));
    }
    Ok(())
}

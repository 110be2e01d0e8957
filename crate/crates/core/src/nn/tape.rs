//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in evaluation order. Calling
//! [`Tape::backward`] on a scalar (1x1) node walks the record in reverse and
//! applies each operation's vector-Jacobian product. Leaves are either
//! parameters (gradients wanted) or constants; gradients are only propagated
//! through nodes that transitively depend on a parameter.

use crate::error::{invalid, Error, Result};
use crate::nn::Tensor2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor2),
    Scale(Var, f64),
    AddBias(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    SoftmaxRows(Var),
    MaskedSoftmaxRows(Var),
    ConcatCols(Var, Var),
    MaxPoolRows(Var, Vec<usize>),
    SumPoolRows(Var),
    RowSums(Var),
    ScaleRows(Var, Var),
    OuterSum(Var, Var),
    Transpose(Var),
    Column(Var, usize),
    Reshape(Var),
    GcnNormalize(Var, Vec<f64>),
    NegLogMass {
        logits: Var,
        classes: Vec<usize>,
        clamped: bool,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor2> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor2 {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor2::zeros(shape.0, shape.1))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor2> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn check_finite(t: &Tensor2, what: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericOverflow(format!("non-finite value in {what}")))
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

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor2, op: Op, needs_grad: bool, what: &str) -> Result<Var> {
        check_finite(&value, what)?;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn param(&mut self, value: Tensor2) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), ng, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng, "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), ng, "mul")
    }

    /// Entrywise product with a constant matrix (typically a 0/1 mask).
    pub fn mul_const(&mut self, a: Var, mask: Tensor2) -> Result<Var> {
        let value = self.value(a).zip_map(&mask, |x, y| x * y)?;
        let ng = self.needs(a);
        self.push(value, Op::MulConst(a, mask), ng, "mul_const")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.value(a).scale(factor);
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, factor), ng, "scale")
    }

    /// Adds a 1xC row vector to every row of an RxC matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(invalid(format!(
                "bias shape {:?} incompatible with {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let value = Tensor2::from_fn(xv.rows(), xv.cols(), |i, j| xv[(i, j)] + bv[(0, j)]);
        let ng = self.needs(x) || self.needs(bias);
        self.push(value, Op::AddBias(x, bias), ng, "add_bias")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(0.0));
        let ng = self.needs(x);
        self.push(value, Op::Relu(x), ng, "relu")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let value = self
            .value(x)
            .map(|v| if v > 0.0 { v } else { slope * v });
        let ng = self.needs(x);
        self.push(value, Op::LeakyRelu(x, slope), ng, "leaky_relu")
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let value = masked_softmax(xv, None);
        let ng = self.needs(x);
        self.push(value, Op::SoftmaxRows(x), ng, "softmax_rows")
    }

    /// Row softmax restricted to entries where `mask` is nonzero; the rest are 0.
    pub fn masked_softmax_rows(&mut self, x: Var, mask: &Tensor2) -> Result<Var> {
        let xv = self.value(x);
        xv.expect_same_shape(mask)?;
        let value = masked_softmax(xv, Some(mask));
        let ng = self.needs(x);
        self.push(value, Op::MaskedSoftmaxRows(x), ng, "masked_softmax_rows")
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(invalid("concat_cols row mismatch"));
        }
        let (ca, cb) = (av.cols(), bv.cols());
        let value = Tensor2::from_fn(av.rows(), ca + cb, |i, j| {
            if j < ca {
                av[(i, j)]
            } else {
                bv[(i, j - ca)]
            }
        });
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::ConcatCols(a, b), ng, "concat_cols")
    }

    /// Column-wise maximum over rows (RxC -> 1xC). Ties go to the lowest row.
    pub fn row_max_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() == 0 {
            return Err(invalid("max pool over zero rows"));
        }
        let mut argmax = vec![0usize; xv.cols()];
        let mut out = Tensor2::zeros(1, xv.cols());
        for (j, slot) in argmax.iter_mut().enumerate() {
            let mut best = xv[(0, j)];
            for i in 1..xv.rows() {
                if xv[(i, j)] > best {
                    best = xv[(i, j)];
                    *slot = i;
                }
            }
            out[(0, j)] = best;
        }
        let ng = self.needs(x);
        self.push(out, Op::MaxPoolRows(x, argmax), ng, "row_max_pool")
    }

    /// Column-wise sum over rows (RxC -> 1xC).
    pub fn row_sum_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut out = Tensor2::zeros(1, xv.cols());
        for i in 0..xv.rows() {
            for (o, v) in out.data_mut().iter_mut().zip(xv.row(i)) {
                *o += v;
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::SumPoolRows(x), ng, "row_sum_pool")
    }

    /// Per-row sums (RxC -> Rx1).
    pub fn row_sums(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let value = Tensor2::from_fn(xv.rows(), 1, |i, _| xv.row(i).iter().sum());
        let ng = self.needs(x);
        self.push(value, Op::RowSums(x), ng, "row_sums")
    }

    /// Multiplies row `i` of `x` by `factors[i]` (factors is Rx1).
    pub fn scale_rows(&mut self, x: Var, factors: Var) -> Result<Var> {
        let (xv, fv) = (self.value(x), self.value(factors));
        if fv.shape() != (xv.rows(), 1) {
            return Err(invalid("scale_rows expects an Rx1 factor column"));
        }
        let value = Tensor2::from_fn(xv.rows(), xv.cols(), |i, j| xv[(i, j)] * fv[(i, 0)]);
        let ng = self.needs(x) || self.needs(factors);
        self.push(value, Op::ScaleRows(x, factors), ng, "scale_rows")
    }

    /// `out[i][j] = s[i] + t[j]` for column vectors `s` (Rx1) and `t` (Cx1).
    pub fn outer_sum(&mut self, s: Var, t: Var) -> Result<Var> {
        let (sv, tv) = (self.value(s), self.value(t));
        if sv.cols() != 1 || tv.cols() != 1 {
            return Err(invalid("outer_sum expects column vectors"));
        }
        let value = Tensor2::from_fn(sv.rows(), tv.rows(), |i, j| sv[(i, 0)] + tv[(j, 0)]);
        let ng = self.needs(s) || self.needs(t);
        self.push(value, Op::OuterSum(s, t), ng, "outer_sum")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose();
        let ng = self.needs(x);
        self.push(value, Op::Transpose(x), ng, "transpose")
    }

    pub fn column(&mut self, x: Var, j: usize) -> Result<Var> {
        let xv = self.value(x);
        if j >= xv.cols() {
            return Err(invalid(format!("column {j} out of range")));
        }
        let value = Tensor2::from_fn(xv.rows(), 1, |i, _| xv[(i, j)]);
        let ng = self.needs(x);
        self.push(value, Op::Column(x, j), ng, "column")
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(x).clone().reshaped(rows, cols)?;
        let ng = self.needs(x);
        self.push(value, Op::Reshape(x), ng, "reshape")
    }

    /// Symmetric GCN normalisation `D^-1/2 (A + I) D^-1/2` where `D` holds the
    /// row sums of `A + I`. `A` may be real-valued.
    pub fn gcn_normalize(&mut self, adj: Var) -> Result<Var> {
        let av = self.value(adj);
        let n = av.rows();
        if av.cols() != n {
            return Err(invalid("gcn_normalize expects a square matrix"));
        }
        let mut inv_sqrt = Vec::with_capacity(n);
        for i in 0..n {
            let d = 1.0 + av.row(i).iter().sum::<f64>();
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::NumericOverflow(format!(
                    "non-positive degree {d} at node {i}"
                )));
            }
            inv_sqrt.push(d.powf(-0.5));
        }
        let value = Tensor2::from_fn(n, n, |i, j| {
            let b = av[(i, j)] + if i == j { 1.0 } else { 0.0 };
            b * inv_sqrt[i] * inv_sqrt[j]
        });
        let ng = self.needs(adj);
        self.push(value, Op::GcnNormalize(adj, inv_sqrt), ng, "gcn_normalize")
    }

    /// `-log(sum_{y in classes} softmax(logits)_y)` for a 1xC logit row.
    ///
    /// With `floor = Some(p)` the result is capped at `-log p` (zero gradient
    /// once capped), guarding against probability underflow.
    pub fn neg_log_mass(&mut self, logits: Var, classes: &[usize], floor: Option<f64>) -> Result<Var> {
        let z = self.value(logits);
        if z.rows() != 1 {
            return Err(invalid("neg_log_mass expects a single logit row"));
        }
        if classes.is_empty() || classes.iter().any(|&c| c >= z.cols()) {
            return Err(invalid("neg_log_mass class set empty or out of range"));
        }
        let row = z.row(0);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse_all = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let lse_sel = m + classes.iter().map(|&c| (row[c] - m).exp()).sum::<f64>().ln();
        let mut loss = lse_all - lse_sel;
        let mut clamped = false;
        if let Some(p) = floor {
            let cap = -p.ln();
            if loss > cap {
                loss = cap;
                clamped = true;
            }
        }
        let ng = self.needs(logits);
        self.push(
            Tensor2::filled(1, 1, loss),
            Op::NegLogMass {
                logits,
                classes: classes.to_vec(),
                clamped,
            },
            ng,
            "neg_log_mass",
        )
    }

    /// Cross-entropy of a 1xC logit row against `target`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        self.neg_log_mass(logits, &[target], None)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(invalid("backward requires a scalar loss"));
        }
        let mut grads: Vec<Option<Tensor2>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor2::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let acc = |v: Var, t: Tensor2, grads: &mut Vec<Option<Tensor2>>| -> Result<()> {
                if !self.nodes[v.0].needs_grad {
                    return Ok(());
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&t)?,
                    slot @ None => *slot = Some(t),
                }
                Ok(())
            };
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        acc(*a, g.matmul(&self.value(*b).transpose())?, &mut grads)?;
                    }
                    if self.needs(*b) {
                        acc(*b, self.value(*a).transpose().matmul(&g)?, &mut grads)?;
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads)?;
                    acc(*b, g, &mut grads)?;
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        acc(*a, g.zip_map(self.value(*b), |x, y| x * y)?, &mut grads)?;
                    }
                    if self.needs(*b) {
                        acc(*b, g.zip_map(self.value(*a), |x, y| x * y)?, &mut grads)?;
                    }
                }
                Op::MulConst(a, mask) => acc(*a, g.zip_map(mask, |x, y| x * y)?, &mut grads)?,
                Op::Scale(a, f) => acc(*a, g.scale(*f), &mut grads)?,
                Op::AddBias(x, b) => {
                    if self.needs(*b) {
                        let mut db = Tensor2::zeros(1, g.cols());
                        for i in 0..g.rows() {
                            for (d, v) in db.data_mut().iter_mut().zip(g.row(i)) {
                                *d += v;
                            }
                        }
                        acc(*b, db, &mut grads)?;
                    }
                    acc(*x, g, &mut grads)?;
                }
                Op::Relu(x) => {
                    let d = g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })?;
                    acc(*x, d, &mut grads)?;
                }
                Op::LeakyRelu(x, slope) => {
                    let s = *slope;
                    let d = g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { s * gv })?;
                    acc(*x, d, &mut grads)?;
                }
                Op::SoftmaxRows(x) | Op::MaskedSoftmaxRows(x) => {
                    let mut d = Tensor2::zeros(out.rows(), out.cols());
                    for i in 0..out.rows() {
                        let (y, gr) = (out.row(i), g.row(i));
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (j, dv) in d.row_mut(i).iter_mut().enumerate() {
                            *dv = y[j] * (gr[j] - dot);
                        }
                    }
                    acc(*x, d, &mut grads)?;
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    if self.needs(*a) {
                        acc(*a, Tensor2::from_fn(g.rows(), ca, |i, j| g[(i, j)]), &mut grads)?;
                    }
                    if self.needs(*b) {
                        acc(*b, Tensor2::from_fn(g.rows(), cb, |i, j| g[(i, ca + j)]), &mut grads)?;
                    }
                }
                Op::MaxPoolRows(x, argmax) => {
                    let xv = self.value(*x);
                    let mut d = Tensor2::zeros(xv.rows(), xv.cols());
                    for (j, &i) in argmax.iter().enumerate() {
                        d[(i, j)] = g[(0, j)];
                    }
                    acc(*x, d, &mut grads)?;
                }
                Op::SumPoolRows(x) => {
                    let xv = self.value(*x);
                    acc(*x, Tensor2::from_fn(xv.rows(), xv.cols(), |_, j| g[(0, j)]), &mut grads)?;
                }
                Op::RowSums(x) => {
                    let xv = self.value(*x);
                    acc(*x, Tensor2::from_fn(xv.rows(), xv.cols(), |i, _| g[(i, 0)]), &mut grads)?;
                }
                Op::ScaleRows(x, f) => {
                    let (xv, fv) = (self.value(*x), self.value(*f));
                    if self.needs(*x) {
                        acc(*x, Tensor2::from_fn(xv.rows(), xv.cols(), |i, j| g[(i, j)] * fv[(i, 0)]), &mut grads)?;
                    }
                    if self.needs(*f) {
                        let df = Tensor2::from_fn(xv.rows(), 1, |i, _| {
                            g.row(i).iter().zip(xv.row(i)).map(|(a, b)| a * b).sum()
                        });
                        acc(*f, df, &mut grads)?;
                    }
                }
                Op::OuterSum(s, t) => {
                    if self.needs(*s) {
                        acc(*s, Tensor2::from_fn(g.rows(), 1, |i, _| g.row(i).iter().sum()), &mut grads)?;
                    }
                    if self.needs(*t) {
                        let mut dt = Tensor2::zeros(g.cols(), 1);
                        for i in 0..g.rows() {
                            for (j, v) in g.row(i).iter().enumerate() {
                                dt[(j, 0)] += v;
                            }
                        }
                        acc(*t, dt, &mut grads)?;
                    }
                }
                Op::Transpose(x) => acc(*x, g.transpose(), &mut grads)?,
                Op::Column(x, col) => {
                    let xv = self.value(*x);
                    let c = *col;
                    acc(*x, Tensor2::from_fn(xv.rows(), xv.cols(), |i, j| if j == c { g[(i, 0)] } else { 0.0 }), &mut grads)?;
                }
                Op::Reshape(x) => {
                    let (r, c) = self.value(*x).shape();
                    acc(*x, g.reshaped(r, c)?, &mut grads)?;
                }
                Op::GcnNormalize(a, s) => {
                    let av = self.value(*a);
                    let n = av.rows();
                    let b = |i: usize, j: usize| av[(i, j)] + if i == j { 1.0 } else { 0.0 };
                    // d out_ij / d B_ij directly, plus the path through the degrees.
                    let mut d_deg = vec![0.0; n];
                    for (i, dd) in d_deg.iter_mut().enumerate() {
                        let mut ds = 0.0;
                        for j in 0..n {
                            ds += g[(i, j)] * b(i, j) * s[j] + g[(j, i)] * b(j, i) * s[j];
                        }
                        *dd = ds * (-0.5) * s[i].powi(3);
                    }
                    let d = Tensor2::from_fn(n, n, |i, j| g[(i, j)] * s[i] * s[j] + d_deg[i]);
                    acc(*a, d, &mut grads)?;
                }
                Op::NegLogMass {
                    logits,
                    classes,
                    clamped,
                } => {
                    if *clamped {
                        continue;
                    }
                    let z = self.value(*logits).row(0);
                    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                    let total: f64 = e.iter().sum();
                    let sel: f64 = classes.iter().map(|&c| e[c]).sum();
                    let scale = g[(0, 0)];
                    let mut d = Tensor2::zeros(1, z.len());
                    for (y, dv) in d.data_mut().iter_mut().enumerate() {
                        let in_sel = if classes.contains(&y) { e[y] / sel } else { 0.0 };
                        *dv = scale * (e[y] / total - in_sel);
                    }
                    acc(*logits, d, &mut grads)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn masked_softmax(x: &Tensor2, mask: Option<&Tensor2>) -> Tensor2 {
    let mut out = Tensor2::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let keep = |j: usize| mask.is_none_or(|m| m[(i, j)] != 0.0);
        let row = x.row(i);
        let m = (0..row.len())
            .filter(|&j| keep(j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0;
        for j in 0..row.len() {
            if keep(j) {
                let e = (row[j] - m).exp();
                out[(i, j)] = e;
                total += e;
            }
        }
        for v in out.row_mut(i) {
            *v /= total;
        }
    }
    out
}

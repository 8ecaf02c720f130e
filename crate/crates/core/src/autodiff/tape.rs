//! The operation tape and its reverse pass.

use crate::scalar::Scalar;

use super::{AdError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T: Scalar> {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// a*x + b with constant coefficients.
    Affine(Var, T, T),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    LayerNorm {
        x: Var,
        eps: T,
    },
    /// x (n x d) + b (1 x d), b broadcast over rows.
    AddBcastRow(Var, Var),
    /// x (n x d) * g (1 x d), g broadcast over rows.
    MulBcastRow(Var, Var),
    GatherRows(Var, Vec<usize>),
    /// Place rows of x at `idx` in an otherwise-zero (n_out x d) output.
    ScatterRows {
        x: Var,
        idx: Vec<usize>,
    },
    /// x (n x d) * s (n x 1), s broadcast over columns.
    MulRowScalar(Var, Var),
    /// x * s where s is a 1x1 recorded variable.
    ScaleByScalar(Var, Var),
    /// Softmax within each contiguous segment of rows; x is (e x 1).
    SegmentSoftmax {
        x: Var,
        seg: Vec<usize>,
    },
    /// Sum rows of x into out[seg[r]]; rows with no incoming segment stay zero.
    SegmentSum {
        x: Var,
        seg: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanAll(Var),
    SumAll(Var),
    /// Mean of (pred - target)^2 over unmasked rows.
    MseReduce {
        pred: Var,
        target: Var,
        row_mask: Option<Vec<bool>>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records primitive operations during a forward pass. Single-threaded;
/// distinct tapes may run concurrently over shared immutable parameters.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Per-variable gradients produced by [`Tape::grad`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. `var`; zero tensor if the variable
    /// does not influence the loss.
    pub fn get(&self, var: Var, tape: &Tape<T>) -> Tensor<T> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.value(var).shape();
                Tensor::zeros(r, c)
            }
        }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    /// Record an input. Leaves include both trainable parameters and
    /// constant inputs; callers simply ignore gradients they do not need.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_unchecked(value, Op::Leaf)
    }

    fn push_unchecked(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var, AdError> {
        if !value.all_finite() {
            return Err(AdError::NonFinite { op: name });
        }
        Ok(self.push_unchecked(value, op))
    }

    fn same_shape(a: &Tensor<T>, b: &Tensor<T>, op: &'static str) -> Result<(), AdError> {
        if a.shape() != b.shape() {
            return Err(AdError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::Matmul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        Self::same_shape(self.value(a), self.value(b), "add")?;
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        Self::same_shape(self.value(a), self.value(b), "sub")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data: Vec<T> = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let v = Tensor::new(va.rows(), va.cols(), data)?;
        self.push(v, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        Self::same_shape(self.value(a), self.value(b), "mul")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data: Vec<T> = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let v = Tensor::new(va.rows(), va.cols(), data)?;
        self.push(v, Op::Mul(a, b), "mul")
    }

    /// Elementwise a*x + b with constants.
    pub fn affine(&mut self, x: Var, a: T, b: T) -> Result<Var, AdError> {
        let v = self.value(x).map(|t| a * t + b);
        self.push(v, Op::Affine(x, a, b), "affine")
    }

    pub fn scale(&mut self, x: Var, a: T) -> Result<Var, AdError> {
        self.affine(x, a, T::zero())
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, AdError> {
        let v = self.value(x).map(|t| t.exp());
        self.push(v, Op::Exp(x), "exp")
    }

    pub fn log(&mut self, x: Var) -> Result<Var, AdError> {
        let v = self.value(x).map(|t| t.ln());
        self.push(v, Op::Log(x), "log")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AdError> {
        let one = T::one();
        let v = self.value(x).map(|t| one / (one + (-t).exp()));
        self.push(v, Op::Sigmoid(x), "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AdError> {
        let v = self.value(x).map(|t| t.tanh());
        self.push(v, Op::Tanh(x), "tanh")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AdError> {
        let v = self.value(x).map(|t| if t > T::zero() { t } else { T::zero() });
        self.push(v, Op::Relu(x), "relu")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var, AdError> {
        let v = self
            .value(x)
            .map(|t| if t > T::zero() { t } else { slope * t });
        self.push(v, Op::LeakyRelu(x, slope), "leaky_relu")
    }

    /// Per-row normalization to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var, eps: T) -> Result<Var, AdError> {
        let vx = self.value(x);
        let (n, d) = vx.shape();
        let mut out = Tensor::zeros(n, d);
        let inv_d = T::one() / T::from_usize(d);
        for r in 0..n {
            let row = vx.row(r);
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let inv_std = T::one() / (var + eps).sqrt();
            for c in 0..d {
                out.set(r, c, (row[c] - mean) * inv_std);
            }
        }
        self.push(out, Op::LayerNorm { x, eps }, "layer_norm")
    }

    pub fn add_bcast_row(&mut self, x: Var, b: Var) -> Result<Var, AdError> {
        let (vx, vb) = (self.value(x), self.value(b));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(AdError::ShapeMismatch {
                op: "add_bcast_row",
                detail: format!("{:?} + {:?}", vx.shape(), vb.shape()),
            });
        }
        let mut out = vx.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                out.set(r, c, out.get(r, c) + vb.get(0, c));
            }
        }
        self.push(out, Op::AddBcastRow(x, b), "add_bcast_row")
    }

    pub fn mul_bcast_row(&mut self, x: Var, g: Var) -> Result<Var, AdError> {
        let (vx, vg) = (self.value(x), self.value(g));
        if vg.rows() != 1 || vg.cols() != vx.cols() {
            return Err(AdError::ShapeMismatch {
                op: "mul_bcast_row",
                detail: format!("{:?} * {:?}", vx.shape(), vg.shape()),
            });
        }
        let mut out = vx.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                out.set(r, c, out.get(r, c) * vg.get(0, c));
            }
        }
        self.push(out, Op::MulBcastRow(x, g), "mul_bcast_row")
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, AdError> {
        let vx = self.value(x);
        let d = vx.cols();
        let mut out = Tensor::zeros(idx.len(), d);
        for (r, &i) in idx.iter().enumerate() {
            if i >= vx.rows() {
                return Err(AdError::ShapeMismatch {
                    op: "gather_rows",
                    detail: format!("row {} out of {}", i, vx.rows()),
                });
            }
            for c in 0..d {
                out.set(r, c, vx.get(i, c));
            }
        }
        self.push(out, Op::GatherRows(x, idx.to_vec()), "gather_rows")
    }

    pub fn scatter_rows(&mut self, x: Var, idx: &[usize], n_out: usize) -> Result<Var, AdError> {
        let vx = self.value(x);
        if idx.len() != vx.rows() {
            return Err(AdError::ShapeMismatch {
                op: "scatter_rows",
                detail: format!("{} indices for {} rows", idx.len(), vx.rows()),
            });
        }
        let d = vx.cols();
        let mut out = Tensor::zeros(n_out, d);
        for (r, &i) in idx.iter().enumerate() {
            if i >= n_out {
                return Err(AdError::ShapeMismatch {
                    op: "scatter_rows",
                    detail: format!("target row {} out of {}", i, n_out),
                });
            }
            for c in 0..d {
                out.set(i, c, out.get(i, c) + vx.get(r, c));
            }
        }
        self.push(
            out,
            Op::ScatterRows {
                x,
                idx: idx.to_vec(),
            },
            "scatter_rows",
        )
    }

    pub fn mul_row_scalar(&mut self, x: Var, s: Var) -> Result<Var, AdError> {
        let (vx, vs) = (self.value(x), self.value(s));
        if vs.cols() != 1 || vs.rows() != vx.rows() {
            return Err(AdError::ShapeMismatch {
                op: "mul_row_scalar",
                detail: format!("{:?} * {:?}", vx.shape(), vs.shape()),
            });
        }
        let mut out = vx.clone();
        for r in 0..out.rows() {
            let sv = vs.get(r, 0);
            for c in 0..out.cols() {
                out.set(r, c, out.get(r, c) * sv);
            }
        }
        self.push(out, Op::MulRowScalar(x, s), "mul_row_scalar")
    }

    pub fn scale_by_scalar(&mut self, x: Var, s: Var) -> Result<Var, AdError> {
        let vs = self.value(s);
        if vs.len() != 1 {
            return Err(AdError::ShapeMismatch {
                op: "scale_by_scalar",
                detail: format!("scale has shape {:?}", vs.shape()),
            });
        }
        let sv = vs.item();
        let v = self.value(x).map(|t| t * sv);
        self.push(v, Op::ScaleByScalar(x, s), "scale_by_scalar")
    }

    fn check_segments(seg: &[usize]) -> Result<(), AdError> {
        let mut prev = 0usize;
        for (k, &s) in seg.iter().enumerate() {
            if k == 0 {
                if s != 0 {
                    return Err(AdError::BadSegments);
                }
            } else if s != prev && s != prev + 1 {
                return Err(AdError::BadSegments);
            }
            prev = s;
        }
        Ok(())
    }

    /// Softmax within each contiguous segment of rows of an (e x 1) column.
    pub fn segment_softmax(&mut self, x: Var, seg: &[usize]) -> Result<Var, AdError> {
        let vx = self.value(x);
        if vx.cols() != 1 || vx.rows() != seg.len() {
            return Err(AdError::ShapeMismatch {
                op: "segment_softmax",
                detail: format!("{:?} with {} segment ids", vx.shape(), seg.len()),
            });
        }
        Self::check_segments(seg)?;
        let n = seg.len();
        let mut out = Tensor::zeros(n, 1);
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n && seg[end] == seg[start] {
                end += 1;
            }
            let mut max = vx.get(start, 0);
            for r in start + 1..end {
                max = max.max(vx.get(r, 0));
            }
            let mut denom = T::zero();
            for r in start..end {
                denom = denom + (vx.get(r, 0) - max).exp();
            }
            for r in start..end {
                out.set(r, 0, (vx.get(r, 0) - max).exp() / denom);
            }
            start = end;
        }
        self.push(
            out,
            Op::SegmentSoftmax {
                x,
                seg: seg.to_vec(),
            },
            "segment_softmax",
        )
    }

    /// Sum rows of x into `out[seg[r]]` of an (n_out x d) result.
    pub fn segment_sum(&mut self, x: Var, seg: &[usize], n_out: usize) -> Result<Var, AdError> {
        let vx = self.value(x);
        if vx.rows() != seg.len() {
            return Err(AdError::ShapeMismatch {
                op: "segment_sum",
                detail: format!("{:?} with {} segment ids", vx.shape(), seg.len()),
            });
        }
        if seg.iter().any(|&s| s >= n_out) {
            return Err(AdError::BadSegments);
        }
        let d = vx.cols();
        let mut out = Tensor::zeros(n_out, d);
        for (r, &s) in seg.iter().enumerate() {
            for c in 0..d {
                out.set(s, c, out.get(s, c) + vx.get(r, c));
            }
        }
        self.push(
            out,
            Op::SegmentSum {
                x,
                seg: seg.to_vec(),
            },
            "segment_sum",
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        let n = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != n) {
            return Err(AdError::ShapeMismatch {
                op: "concat_cols",
                detail: "row counts differ".into(),
            });
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(n, total);
        let mut off = 0;
        for &p in parts {
            let vp = self.value(p);
            for r in 0..n {
                for c in 0..vp.cols() {
                    out.set(r, off + c, vp.get(r, c));
                }
            }
            off += vp.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        let d = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != d) {
            return Err(AdError::ShapeMismatch {
                op: "concat_rows",
                detail: "column counts differ".into(),
            });
        }
        let total: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut out = Tensor::zeros(total, d);
        let mut off = 0;
        for &p in parts {
            let vp = self.value(p);
            for r in 0..vp.rows() {
                for c in 0..d {
                    out.set(off + r, c, vp.get(r, c));
                }
            }
            off += vp.rows();
        }
        self.push(out, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var, AdError> {
        let vx = self.value(x);
        let m = vx.data().iter().copied().sum::<T>() / T::from_usize(vx.len());
        self.push(Tensor::scalar(m), Op::MeanAll(x), "mean_all")
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var, AdError> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::SumAll(x), "sum_all")
    }

    /// Mean squared error over unmasked rows; masked rows contribute nothing.
    pub fn mse_reduce(
        &mut self,
        pred: Var,
        target: Var,
        row_mask: Option<&[bool]>,
    ) -> Result<Var, AdError> {
        let (vp, vt) = (self.value(pred), self.value(target));
        Self::same_shape(vp, vt, "mse_reduce")?;
        if let Some(m) = row_mask {
            if m.len() != vp.rows() {
                return Err(AdError::ShapeMismatch {
                    op: "mse_reduce",
                    detail: format!("mask len {} for {} rows", m.len(), vp.rows()),
                });
            }
        }
        let mut count = 0usize;
        let mut total = T::zero();
        for r in 0..vp.rows() {
            if row_mask.is_some_and(|m| !m[r]) {
                continue;
            }
            for c in 0..vp.cols() {
                let d = vp.get(r, c) - vt.get(r, c);
                total = total + d * d;
                count += 1;
            }
        }
        if count == 0 {
            return Err(AdError::ShapeMismatch {
                op: "mse_reduce",
                detail: "mask excludes every row".into(),
            });
        }
        let v = Tensor::scalar(total / T::from_usize(count));
        self.push(
            v,
            Op::MseReduce {
                pred,
                target,
                row_mask: row_mask.map(|m| m.to_vec()),
            },
            "mse_reduce",
        )
    }

    /// Reverse pass from a scalar loss. Visits operations in exact reverse
    /// recording order.
    pub fn grad(&self, loss: Var) -> Result<Gradients<T>, AdError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AdError::NotScalar {
                rows: lv.rows(),
                cols: lv.cols(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Tensor<T>>], var: Var, delta: Tensor<T>) {
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    #[allow(clippy::too_many_lines)]
    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da = g.matmul(&vb.transpose()).expect("matmul grad shape");
                let db = va.transpose().matmul(g).expect("matmul grad shape");
                Self::accumulate(grads, *a, da);
                Self::accumulate(grads, *b, db);
            }
            Op::Add(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.map(|t| -t));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da = elementwise(g, vb, |x, y| x * y);
                let db = elementwise(g, va, |x, y| x * y);
                Self::accumulate(grads, *a, da);
                Self::accumulate(grads, *b, db);
            }
            Op::Affine(x, a, _) => {
                let av = *a;
                Self::accumulate(grads, *x, g.map(|t| av * t));
            }
            Op::Exp(x) => {
                let y = &self.nodes[i].value;
                Self::accumulate(grads, *x, elementwise(g, y, |gv, yv| gv * yv));
            }
            Op::Log(x) => {
                let vx = self.value(*x);
                Self::accumulate(grads, *x, elementwise(g, vx, |gv, xv| gv / xv));
            }
            Op::Sigmoid(x) => {
                let y = &self.nodes[i].value;
                Self::accumulate(
                    grads,
                    *x,
                    elementwise(g, y, |gv, yv| gv * yv * (T::one() - yv)),
                );
            }
            Op::Tanh(x) => {
                let y = &self.nodes[i].value;
                Self::accumulate(
                    grads,
                    *x,
                    elementwise(g, y, |gv, yv| gv * (T::one() - yv * yv)),
                );
            }
            Op::Relu(x) => {
                let vx = self.value(*x);
                Self::accumulate(
                    grads,
                    *x,
                    elementwise(g, vx, |gv, xv| if xv > T::zero() { gv } else { T::zero() }),
                );
            }
            Op::LeakyRelu(x, slope) => {
                let (vx, s) = (self.value(*x), *slope);
                Self::accumulate(
                    grads,
                    *x,
                    elementwise(g, vx, |gv, xv| if xv > T::zero() { gv } else { s * gv }),
                );
            }
            Op::LayerNorm { x, eps } => {
                let vx = self.value(*x);
                let y = &self.nodes[i].value;
                let (n, d) = vx.shape();
                let inv_d = T::one() / T::from_usize(d);
                let mut dx = Tensor::zeros(n, d);
                for r in 0..n {
                    let row = vx.row(r);
                    let mean = row.iter().copied().sum::<T>() * inv_d;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
                    let inv_std = T::one() / (var + *eps).sqrt();
                    let mut g_mean = T::zero();
                    let mut gy_mean = T::zero();
                    for c in 0..d {
                        g_mean = g_mean + g.get(r, c);
                        gy_mean = gy_mean + g.get(r, c) * y.get(r, c);
                    }
                    g_mean = g_mean * inv_d;
                    gy_mean = gy_mean * inv_d;
                    for c in 0..d {
                        let val = inv_std * (g.get(r, c) - g_mean - y.get(r, c) * gy_mean);
                        dx.set(r, c, val);
                    }
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::AddBcastRow(x, b) => {
                Self::accumulate(grads, *x, g.clone());
                let mut db = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        db.set(0, c, db.get(0, c) + g.get(r, c));
                    }
                }
                Self::accumulate(grads, *b, db);
            }
            Op::MulBcastRow(x, gain) => {
                let (vx, vg) = (self.value(*x), self.value(*gain));
                let mut dx = Tensor::zeros(vx.rows(), vx.cols());
                let mut dg = Tensor::zeros(1, vx.cols());
                for r in 0..vx.rows() {
                    for c in 0..vx.cols() {
                        dx.set(r, c, g.get(r, c) * vg.get(0, c));
                        dg.set(0, c, dg.get(0, c) + g.get(r, c) * vx.get(r, c));
                    }
                }
                Self::accumulate(grads, *x, dx);
                Self::accumulate(grads, *gain, dg);
            }
            Op::GatherRows(x, idx) => {
                let vx = self.value(*x);
                let mut dx = Tensor::zeros(vx.rows(), vx.cols());
                for (r, &srcr) in idx.iter().enumerate() {
                    for c in 0..vx.cols() {
                        dx.set(srcr, c, dx.get(srcr, c) + g.get(r, c));
                    }
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::ScatterRows { x, idx } => {
                let vx = self.value(*x);
                let mut dx = Tensor::zeros(vx.rows(), vx.cols());
                for (r, &dstr) in idx.iter().enumerate() {
                    for c in 0..vx.cols() {
                        dx.set(r, c, g.get(dstr, c));
                    }
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::MulRowScalar(x, s) => {
                let (vx, vs) = (self.value(*x), self.value(*s));
                let mut dx = Tensor::zeros(vx.rows(), vx.cols());
                let mut ds = Tensor::zeros(vx.rows(), 1);
                for r in 0..vx.rows() {
                    let sv = vs.get(r, 0);
                    let mut acc = T::zero();
                    for c in 0..vx.cols() {
                        dx.set(r, c, g.get(r, c) * sv);
                        acc = acc + g.get(r, c) * vx.get(r, c);
                    }
                    ds.set(r, 0, acc);
                }
                Self::accumulate(grads, *x, dx);
                Self::accumulate(grads, *s, ds);
            }
            Op::ScaleByScalar(x, s) => {
                let (vx, vs) = (self.value(*x), self.value(*s));
                let sv = vs.item();
                Self::accumulate(grads, *x, g.map(|t| t * sv));
                let acc = g
                    .data()
                    .iter()
                    .zip(vx.data())
                    .map(|(&gv, &xv)| gv * xv)
                    .sum::<T>();
                Self::accumulate(grads, *s, Tensor::scalar(acc));
            }
            Op::SegmentSoftmax { x, seg } => {
                let y = &self.nodes[i].value;
                let n = seg.len();
                let mut dx = Tensor::zeros(n, 1);
                let mut start = 0;
                while start < n {
                    let mut end = start + 1;
                    while end < n && seg[end] == seg[start] {
                        end += 1;
                    }
                    let mut dot = T::zero();
                    for r in start..end {
                        dot = dot + y.get(r, 0) * g.get(r, 0);
                    }
                    for r in start..end {
                        dx.set(r, 0, y.get(r, 0) * (g.get(r, 0) - dot));
                    }
                    start = end;
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::SegmentSum { x, seg } => {
                let vx = self.value(*x);
                let mut dx = Tensor::zeros(vx.rows(), vx.cols());
                for (r, &s) in seg.iter().enumerate() {
                    for c in 0..vx.cols() {
                        dx.set(r, c, g.get(s, c));
                    }
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let vp = self.value(p);
                    let mut dp = Tensor::zeros(vp.rows(), vp.cols());
                    for r in 0..vp.rows() {
                        for c in 0..vp.cols() {
                            dp.set(r, c, g.get(r, off + c));
                        }
                    }
                    off += vp.cols();
                    Self::accumulate(grads, p, dp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let vp = self.value(p);
                    let mut dp = Tensor::zeros(vp.rows(), vp.cols());
                    for r in 0..vp.rows() {
                        for c in 0..vp.cols() {
                            dp.set(r, c, g.get(off + r, c));
                        }
                    }
                    off += vp.rows();
                    Self::accumulate(grads, p, dp);
                }
            }
            Op::MeanAll(x) => {
                let vx = self.value(*x);
                let gv = g.item() / T::from_usize(vx.len());
                Self::accumulate(grads, *x, vx.map(|_| gv));
            }
            Op::SumAll(x) => {
                let vx = self.value(*x);
                let gv = g.item();
                Self::accumulate(grads, *x, vx.map(|_| gv));
            }
            Op::MseReduce {
                pred,
                target,
                row_mask,
            } => {
                let (vp, vt) = (self.value(*pred), self.value(*target));
                let count = match row_mask {
                    Some(m) => m.iter().filter(|&&b| b).count() * vp.cols(),
                    None => vp.len(),
                };
                let coef = g.item() * T::from_f64(2.0) / T::from_usize(count);
                let mut dp = Tensor::zeros(vp.rows(), vp.cols());
                for r in 0..vp.rows() {
                    if row_mask.as_ref().is_some_and(|m| !m[r]) {
                        continue;
                    }
                    for c in 0..vp.cols() {
                        dp.set(r, c, coef * (vp.get(r, c) - vt.get(r, c)));
                    }
                }
                let dt = dp.map(|t| -t);
                Self::accumulate(grads, *pred, dp);
                Self::accumulate(grads, *target, dt);
            }
        }
    }
}

fn elementwise<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let data: Vec<T> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.rows(), a.cols(), data).expect("elementwise shape")
}

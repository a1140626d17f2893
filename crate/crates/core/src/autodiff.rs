//! Minimal reverse-mode automatic differentiation over dense f32 matrices.
//!
//! A [`Tape`] records every forward operation in execution order; backward
//! walks the record in exact reverse and accumulates gradients into buffers
//! keyed by tensor id. The operator set is exactly what the embedding and
//! quantisation networks need: affine maps, batch norm, ReLU, row softmax,
//! row distances/inner products, row gathers and reductions.
//!
//! Values are stored in 32-bit floats; reductions (sums, means, norms,
//! batch statistics) accumulate in 64-bit.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

const BN_EPS: f64 = 1e-5;
// Inside the square root of the L2-distance gradient, so coincident rows do
// not divide by zero.
const L2_GRAD_EPS: f64 = 1e-12;

/// Handle to a value recorded on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    tape: u64,
    idx: usize,
}

/// Running batch-norm statistics (shape 1 x O), updated in training mode and
/// read in evaluation mode.
#[derive(Debug, Clone)]
pub struct BnState {
    pub running_mean: Array2<f32>,
    pub running_var: Array2<f32>,
    pub momentum: f32,
}

impl BnState {
    pub fn new(dim: usize) -> Self {
        BnState {
            running_mean: Array2::zeros((1, dim)),
            running_var: Array2::ones((1, dim)),
            momentum: 0.9,
        }
    }

    pub fn dim(&self) -> usize {
        self.running_mean.ncols()
    }
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f32),
    AddScalar(usize),
    Relu(usize),
    SoftmaxRows(usize),
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Array2<f32>,
        inv_std: Vec<f32>,
        train: bool,
    },
    L2DistRows {
        a: usize,
        b: usize,
        grad_inv_dist: Vec<f32>,
    },
    DotRows(usize, usize),
    Sum(usize),
    GatherRows {
        src: usize,
        idx: Vec<usize>,
    },
    SelectColPerRow {
        src: usize,
        cols: Vec<usize>,
    },
}

struct Node {
    value: Array2<f32>,
    op: Op,
    requires_grad: bool,
}

/// Forward recording plus reverse-mode gradient buffers.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f32>>>,
}

fn next_tape_id() -> u64 {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(1);
    COUNTER.fetch_add(1, Ordering::Relaxed)
}

fn check_finite(value: &Array2<f32>, what: &str) -> Result<()> {
    if value.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss(format!(
            "{what} produced NaN or Inf values"
        )))
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: next_tape_id(),
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn check(&self, t: Tensor) -> Result<usize> {
        if t.tape != self.id || t.idx >= self.nodes.len() {
            return Err(Error::Invalid("tensor does not belong to this tape".into()));
        }
        Ok(t.idx)
    }

    fn push(&mut self, value: Array2<f32>, op: Op, requires_grad: bool, what: &str) -> Result<Tensor> {
        check_finite(&value, what)?;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Tensor {
            tape: self.id,
            idx: self.nodes.len() - 1,
        })
    }

    fn requires(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    pub fn value(&self, t: Tensor) -> &Array2<f32> {
        &self.nodes[t.idx].value
    }

    pub fn shape(&self, t: Tensor) -> (usize, usize) {
        let v = &self.nodes[t.idx].value;
        (v.nrows(), v.ncols())
    }

    /// Record a leaf. Gradients accumulate for it iff `requires_grad`.
    pub fn leaf(&mut self, value: Array2<f32>, requires_grad: bool) -> Result<Tensor> {
        self.push(value, Op::Leaf, requires_grad, "leaf")
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Array2<f32>) -> Result<Tensor> {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if av.ncols() != bv.nrows() {
            return Err(Error::Dim(format!(
                "matmul {}x{} . {}x{}",
                av.nrows(),
                av.ncols(),
                bv.nrows(),
                bv.ncols()
            )));
        }
        let value = av.dot(bv);
        let req = self.requires(ai) || self.requires(bi);
        self.push(value, Op::MatMul(ai, bi), req, "matmul")
    }

    /// Row-broadcast bias add: `x (B x O) + b (1 x O)`.
    pub fn add_bias(&mut self, x: Tensor, b: Tensor) -> Result<Tensor> {
        let (xi, bi) = (self.check(x)?, self.check(b)?);
        let (xv, bv) = (&self.nodes[xi].value, &self.nodes[bi].value);
        if bv.nrows() != 1 || bv.ncols() != xv.ncols() {
            return Err(Error::Dim(format!(
                "bias shape {}x{} does not broadcast over {}x{}",
                bv.nrows(),
                bv.ncols(),
                xv.nrows(),
                xv.ncols()
            )));
        }
        let value = xv + bv;
        let req = self.requires(xi) || self.requires(bi);
        self.push(value, Op::AddBias(xi, bi), req, "add_bias")
    }

    /// Affine map `x.w + b`.
    pub fn dense(&mut self, x: Tensor, w: Tensor, b: Tensor) -> Result<Tensor> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    fn binary_same_shape(&mut self, a: Tensor, b: Tensor, which: &str) -> Result<(usize, usize)> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if av.dim() != bv.dim() {
            return Err(Error::Dim(format!(
                "{which}: {}x{} vs {}x{}",
                av.nrows(),
                av.ncols(),
                bv.nrows(),
                bv.ncols()
            )));
        }
        Ok((ai, bi))
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (ai, bi) = self.binary_same_shape(a, b, "add")?;
        let value = &self.nodes[ai].value + &self.nodes[bi].value;
        let req = self.requires(ai) || self.requires(bi);
        self.push(value, Op::Add(ai, bi), req, "add")
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (ai, bi) = self.binary_same_shape(a, b, "sub")?;
        let value = &self.nodes[ai].value - &self.nodes[bi].value;
        let req = self.requires(ai) || self.requires(bi);
        self.push(value, Op::Sub(ai, bi), req, "sub")
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (ai, bi) = self.binary_same_shape(a, b, "mul")?;
        let value = &self.nodes[ai].value * &self.nodes[bi].value;
        let req = self.requires(ai) || self.requires(bi);
        self.push(value, Op::Mul(ai, bi), req, "mul")
    }

    pub fn scale(&mut self, x: Tensor, c: f32) -> Result<Tensor> {
        let xi = self.check(x)?;
        let value = &self.nodes[xi].value * c;
        let req = self.requires(xi);
        self.push(value, Op::Scale(xi, c), req, "scale")
    }

    pub fn add_scalar(&mut self, x: Tensor, c: f32) -> Result<Tensor> {
        let xi = self.check(x)?;
        let value = &self.nodes[xi].value + c;
        let req = self.requires(xi);
        self.push(value, Op::AddScalar(xi), req, "add_scalar")
    }

    pub fn relu(&mut self, x: Tensor) -> Result<Tensor> {
        let xi = self.check(x)?;
        let value = self.nodes[xi].value.mapv(|v| v.max(0.0));
        let req = self.requires(xi);
        self.push(value, Op::Relu(xi), req, "relu")
    }

    /// Row-wise softmax (max-shifted, 64-bit denominators).
    pub fn softmax_rows(&mut self, x: Tensor) -> Result<Tensor> {
        let xi = self.check(x)?;
        let xv = &self.nodes[xi].value;
        let mut value = Array2::<f32>::zeros(xv.dim());
        for (mut out, row) in value.axis_iter_mut(Axis(0)).zip(xv.axis_iter(Axis(0))) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut denom = 0f64;
            for (o, &v) in out.iter_mut().zip(row.iter()) {
                let e = ((v - max) as f64).exp();
                *o = e as f32;
                denom += e;
            }
            let inv = (1.0 / denom) as f32;
            out.mapv_inplace(|v| v * inv);
        }
        let req = self.requires(xi);
        self.push(value, Op::SoftmaxRows(xi), req, "softmax_rows")
    }

    /// Batch normalisation over rows with learned affine. Training mode
    /// normalises by batch statistics (biased variance) and updates the
    /// running state; evaluation mode uses the running state.
    pub fn batchnorm(
        &mut self,
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        state: &mut BnState,
        train: bool,
    ) -> Result<Tensor> {
        if !train {
            return self.batchnorm_eval(x, gamma, beta, state);
        }
        let (xi, gi, bi) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let xv = &self.nodes[xi].value;
        let (rows, cols) = xv.dim();
        if state.dim() != cols
            || self.nodes[gi].value.dim() != (1, cols)
            || self.nodes[bi].value.dim() != (1, cols)
        {
            return Err(Error::Dim("batchnorm parameter width mismatch".into()));
        }
        if rows < 2 {
            return Err(Error::Invalid(
                "batchnorm requires batch size >= 2 in training mode".into(),
            ));
        }

        let mut xhat = Array2::<f32>::zeros((rows, cols));
        let mut inv_std = vec![0f32; cols];
        let mut new_mean = vec![0f32; cols];
        let mut new_var = vec![0f32; cols];
        for c in 0..cols {
            let col = xv.column(c);
            let mean = col.iter().map(|&v| v as f64).sum::<f64>() / rows as f64;
            let var = col
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / rows as f64;
            let inv = 1.0 / (var + BN_EPS).sqrt();
            inv_std[c] = inv as f32;
            for r in 0..rows {
                xhat[(r, c)] = ((xv[(r, c)] as f64 - mean) * inv) as f32;
            }
            new_mean[c] = mean as f32;
            // Unbiased estimate for the running state.
            new_var[c] = (var * rows as f64 / (rows as f64 - 1.0)) as f32;
        }
        let m = state.momentum;
        for c in 0..cols {
            state.running_mean[(0, c)] = m * state.running_mean[(0, c)] + (1.0 - m) * new_mean[c];
            state.running_var[(0, c)] = m * state.running_var[(0, c)] + (1.0 - m) * new_var[c];
        }

        self.bn_finish(xi, gi, bi, xhat, inv_std, true)
    }

    /// Evaluation-mode batch norm: normalise by the running statistics,
    /// leaving the state untouched (row-independent, thread-safe).
    pub fn batchnorm_eval(
        &mut self,
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        state: &BnState,
    ) -> Result<Tensor> {
        let (xi, gi, bi) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let xv = &self.nodes[xi].value;
        let (rows, cols) = xv.dim();
        if state.dim() != cols
            || self.nodes[gi].value.dim() != (1, cols)
            || self.nodes[bi].value.dim() != (1, cols)
        {
            return Err(Error::Dim("batchnorm parameter width mismatch".into()));
        }
        let mut xhat = Array2::<f32>::zeros((rows, cols));
        let mut inv_std = vec![0f32; cols];
        for c in 0..cols {
            let mean = state.running_mean[(0, c)] as f64;
            let inv = 1.0 / (state.running_var[(0, c)] as f64 + BN_EPS).sqrt();
            inv_std[c] = inv as f32;
            for r in 0..rows {
                xhat[(r, c)] = ((xv[(r, c)] as f64 - mean) * inv) as f32;
            }
        }
        self.bn_finish(xi, gi, bi, xhat, inv_std, false)
    }

    fn bn_finish(
        &mut self,
        xi: usize,
        gi: usize,
        bi: usize,
        xhat: Array2<f32>,
        inv_std: Vec<f32>,
        train: bool,
    ) -> Result<Tensor> {
        let cols = xhat.ncols();
        let gv = &self.nodes[gi].value;
        let bv = &self.nodes[bi].value;
        let mut value = xhat.clone();
        for mut row in value.axis_iter_mut(Axis(0)) {
            for c in 0..cols {
                row[c] = row[c] * gv[(0, c)] + bv[(0, c)];
            }
        }
        let req = self.requires(xi) || self.requires(gi) || self.requires(bi);
        self.push(
            value,
            Op::BatchNorm {
                x: xi,
                gamma: gi,
                beta: bi,
                xhat,
                inv_std,
                train,
            },
            req,
            "batchnorm",
        )
    }

    /// Per-row Euclidean distance: `out[i] = ||a_i - b_i||_2`, shape B x 1.
    pub fn l2_distance_rows(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (ai, bi) = self.binary_same_shape(a, b, "l2_distance_rows")?;
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let rows = av.nrows();
        let mut value = Array2::<f32>::zeros((rows, 1));
        let mut grad_inv_dist = vec![0f32; rows];
        for r in 0..rows {
            let mut ss = 0f64;
            for c in 0..av.ncols() {
                let d = (av[(r, c)] - bv[(r, c)]) as f64;
                ss += d * d;
            }
            value[(r, 0)] = ss.sqrt() as f32;
            grad_inv_dist[r] = (1.0 / (ss + L2_GRAD_EPS).sqrt()) as f32;
        }
        let req = self.requires(ai) || self.requires(bi);
        self.push(
            value,
            Op::L2DistRows {
                a: ai,
                b: bi,
                grad_inv_dist,
            },
            req,
            "l2_distance_rows",
        )
    }

    /// Per-row inner product: `out[i] = <a_i, b_i>`, shape B x 1.
    pub fn inner_product_rows(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (ai, bi) = self.binary_same_shape(a, b, "inner_product_rows")?;
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let rows = av.nrows();
        let mut value = Array2::<f32>::zeros((rows, 1));
        for r in 0..rows {
            let mut acc = 0f64;
            for c in 0..av.ncols() {
                acc += av[(r, c)] as f64 * bv[(r, c)] as f64;
            }
            value[(r, 0)] = acc as f32;
        }
        let req = self.requires(ai) || self.requires(bi);
        self.push(value, Op::DotRows(ai, bi), req, "inner_product_rows")
    }

    /// Full reduction to a 1 x 1 scalar.
    pub fn sum(&mut self, x: Tensor) -> Result<Tensor> {
        let xi = self.check(x)?;
        let total: f64 = self.nodes[xi].value.iter().map(|&v| v as f64).sum();
        let value = Array2::from_elem((1, 1), total as f32);
        let req = self.requires(xi);
        self.push(value, Op::Sum(xi), req, "sum")
    }

    /// Select rows of `src` by index (rows may repeat).
    pub fn gather_rows(&mut self, src: Tensor, idx: &[usize]) -> Result<Tensor> {
        let si = self.check(src)?;
        let sv = &self.nodes[si].value;
        if let Some(&bad) = idx.iter().find(|&&i| i >= sv.nrows()) {
            return Err(Error::Dim(format!(
                "gather_rows index {bad} out of range ({} rows)",
                sv.nrows()
            )));
        }
        let mut value = Array2::<f32>::zeros((idx.len(), sv.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            value.row_mut(r).assign(&sv.row(i));
        }
        let req = self.requires(si);
        self.push(
            value,
            Op::GatherRows {
                src: si,
                idx: idx.to_vec(),
            },
            req,
            "gather_rows",
        )
    }

    /// Pick one column per row: `out[i] = src[i, cols[i]]`, shape B x 1.
    pub fn select_col_per_row(&mut self, src: Tensor, cols: &[usize]) -> Result<Tensor> {
        let si = self.check(src)?;
        let sv = &self.nodes[si].value;
        if cols.len() != sv.nrows() {
            return Err(Error::Dim(format!(
                "select_col_per_row got {} column picks for {} rows",
                cols.len(),
                sv.nrows()
            )));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= sv.ncols()) {
            return Err(Error::Dim(format!(
                "select_col_per_row column {bad} out of range ({} cols)",
                sv.ncols()
            )));
        }
        let mut value = Array2::<f32>::zeros((sv.nrows(), 1));
        for (r, &c) in cols.iter().enumerate() {
            value[(r, 0)] = sv[(r, c)];
        }
        let req = self.requires(si);
        self.push(
            value,
            Op::SelectColPerRow {
                src: si,
                cols: cols.to_vec(),
            },
            req,
            "select_col_per_row",
        )
    }

    /// Reverse pass from a scalar loss. Gradients accumulate into the tape's
    /// buffers; repeated calls without [`Tape::zero_grads`] add up.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        let li = self.check(loss)?;
        if self.nodes[li].value.dim() != (1, 1) {
            return Err(Error::Dim(format!(
                "backward needs a 1x1 loss, got {}x{}",
                self.nodes[li].value.nrows(),
                self.nodes[li].value.ncols()
            )));
        }
        // Upstream gradients local to this pass, so repeated backward calls
        // accumulate into `self.grads` without double-counting.
        let mut up: Vec<Option<Array2<f32>>> = vec![None; li + 1];
        up[li] = Some(Array2::ones((1, 1)));

        for i in (0..=li).rev() {
            let Some(g) = up[i].take() else { continue };
            if self.nodes[i].requires_grad {
                match &mut self.grads[i] {
                    Some(acc) => *acc += &g,
                    slot @ None => *slot = Some(g.clone()),
                }
            }
            self.propagate(i, &g, &mut up);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Array2<f32>, up: &mut Vec<Option<Array2<f32>>>) {
        let add = |up: &mut Vec<Option<Array2<f32>>>, idx: usize, delta: Array2<f32>| {
            match &mut up[idx] {
                Some(acc) => *acc += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                if self.requires(*a) {
                    add(up, *a, g.dot(&bv.t()));
                }
                if self.requires(*b) {
                    add(up, *b, av.t().dot(g));
                }
            }
            Op::AddBias(x, b) => {
                if self.requires(*x) {
                    add(up, *x, g.clone());
                }
                if self.requires(*b) {
                    let mut db = Array2::<f32>::zeros((1, g.ncols()));
                    for c in 0..g.ncols() {
                        db[(0, c)] = g.column(c).iter().map(|&v| v as f64).sum::<f64>() as f32;
                    }
                    add(up, *b, db);
                }
            }
            Op::Add(a, b) => {
                if self.requires(*a) {
                    add(up, *a, g.clone());
                }
                if self.requires(*b) {
                    add(up, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.requires(*a) {
                    add(up, *a, g.clone());
                }
                if self.requires(*b) {
                    add(up, *b, -g.clone());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                if self.requires(*a) {
                    add(up, *a, g * bv);
                }
                if self.requires(*b) {
                    add(up, *b, g * av);
                }
            }
            Op::Scale(x, c) => {
                if self.requires(*x) {
                    add(up, *x, g * *c);
                }
            }
            Op::AddScalar(x) => {
                if self.requires(*x) {
                    add(up, *x, g.clone());
                }
            }
            Op::Relu(x) => {
                if self.requires(*x) {
                    let y = &self.nodes[i].value;
                    let mut dx = g.clone();
                    dx.zip_mut_with(y, |d, &yv| {
                        if yv <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    add(up, *x, dx);
                }
            }
            Op::SoftmaxRows(x) => {
                if self.requires(*x) {
                    let y = &self.nodes[i].value;
                    let mut dx = Array2::<f32>::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let s: f64 = (0..y.ncols())
                            .map(|c| g[(r, c)] as f64 * y[(r, c)] as f64)
                            .sum();
                        for c in 0..y.ncols() {
                            dx[(r, c)] = y[(r, c)] * (g[(r, c)] - s as f32);
                        }
                    }
                    add(up, *x, dx);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (rows, cols) = xhat.dim();
                let gv = &self.nodes[*gamma].value;
                if self.requires(*beta) {
                    let mut db = Array2::<f32>::zeros((1, cols));
                    for c in 0..cols {
                        db[(0, c)] = g.column(c).iter().map(|&v| v as f64).sum::<f64>() as f32;
                    }
                    add(up, *beta, db);
                }
                if self.requires(*gamma) {
                    let mut dg = Array2::<f32>::zeros((1, cols));
                    for c in 0..cols {
                        dg[(0, c)] = (0..rows)
                            .map(|r| g[(r, c)] as f64 * xhat[(r, c)] as f64)
                            .sum::<f64>() as f32;
                    }
                    add(up, *gamma, dg);
                }
                if self.requires(*x) {
                    let mut dx = Array2::<f32>::zeros((rows, cols));
                    for c in 0..cols {
                        let scale = gv[(0, c)] * inv_std[c];
                        if *train {
                            let mean_g: f64 = (0..rows).map(|r| g[(r, c)] as f64).sum::<f64>()
                                / rows as f64;
                            let mean_gx: f64 = (0..rows)
                                .map(|r| g[(r, c)] as f64 * xhat[(r, c)] as f64)
                                .sum::<f64>()
                                / rows as f64;
                            for r in 0..rows {
                                dx[(r, c)] = scale
                                    * ((g[(r, c)] as f64
                                        - mean_g
                                        - xhat[(r, c)] as f64 * mean_gx)
                                        as f32);
                            }
                        } else {
                            for r in 0..rows {
                                dx[(r, c)] = scale * g[(r, c)];
                            }
                        }
                    }
                    add(up, *x, dx);
                }
            }
            Op::L2DistRows {
                a,
                b,
                grad_inv_dist,
            } => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let mut diff = av - bv;
                for (r, mut row) in diff.axis_iter_mut(Axis(0)).enumerate() {
                    let factor = g[(r, 0)] * grad_inv_dist[r];
                    row.mapv_inplace(|v| v * factor);
                }
                if self.requires(*a) {
                    add(up, *a, diff.clone());
                }
                if self.requires(*b) {
                    add(up, *b, -diff);
                }
            }
            Op::DotRows(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                if self.requires(*a) {
                    let mut da = bv.clone();
                    for (r, mut row) in da.axis_iter_mut(Axis(0)).enumerate() {
                        row.mapv_inplace(|v| v * g[(r, 0)]);
                    }
                    add(up, *a, da);
                }
                if self.requires(*b) {
                    let mut db = av.clone();
                    for (r, mut row) in db.axis_iter_mut(Axis(0)).enumerate() {
                        row.mapv_inplace(|v| v * g[(r, 0)]);
                    }
                    add(up, *b, db);
                }
            }
            Op::Sum(x) => {
                if self.requires(*x) {
                    let shape = self.nodes[*x].value.dim();
                    add(up, *x, Array2::from_elem(shape, g[(0, 0)]));
                }
            }
            Op::GatherRows { src, idx } => {
                if self.requires(*src) {
                    let mut dsrc = Array2::<f32>::zeros(self.nodes[*src].value.dim());
                    for (r, &s) in idx.iter().enumerate() {
                        let mut target = dsrc.row_mut(s);
                        target += &g.row(r);
                    }
                    add(up, *src, dsrc);
                }
            }
            Op::SelectColPerRow { src, cols } => {
                if self.requires(*src) {
                    let mut dsrc = Array2::<f32>::zeros(self.nodes[*src].value.dim());
                    for (r, &c) in cols.iter().enumerate() {
                        dsrc[(r, c)] += g[(r, 0)];
                    }
                    add(up, *src, dsrc);
                }
            }
        }
    }

    /// Accumulated gradient of a tensor, if any backward pass reached it.
    pub fn grad(&self, t: Tensor) -> Option<&Array2<f32>> {
        self.grads.get(t.idx).and_then(|g| g.as_ref())
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn dense_identity_weights() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0, 2.0]], true).unwrap();
        let w = tape.leaf(array![[1.0, 0.0], [0.0, 1.0]], true).unwrap();
        let b = tape.leaf(array![[0.0, 0.0]], true).unwrap();
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y), &array![[1.0, 2.0]]);
    }

    #[test]
    fn dense_hand_product() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0, 1.0]], true).unwrap();
        let w = tape.leaf(array![[2.0], [3.0]], true).unwrap();
        let b = tape.leaf(array![[1.0]], true).unwrap();
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y), &array![[6.0]]);
    }

    #[test]
    fn dense_weight_grad_is_xt_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0, 2.0], [3.0, 4.0]], false).unwrap();
        let w = tape.leaf(array![[1.0, -1.0], [0.5, 2.0]], true).unwrap();
        let b = tape.leaf(array![[0.0, 0.0]], false).unwrap();
        let y = tape.dense(x, w, b).unwrap();
        let loss = tape.sum(y).unwrap();
        tape.backward(loss).unwrap();
        let expected = array![[4.0, 4.0], [6.0, 6.0]]; // x^T . ones
        assert_eq!(tape.grad(w).unwrap(), &expected);
    }

    #[test]
    fn relu_splits_signs() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[-1.0, 2.0]], true).unwrap();
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y), &array![[0.0, 2.0]]);
        let loss = tape.sum(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &array![[0.0, 1.0]]);
    }

    #[test]
    fn softmax_symmetry() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[0.0, 0.0]], true).unwrap();
        let y = tape.softmax_rows(x).unwrap();
        assert_abs_diff_eq!(tape.value(y)[(0, 0)], 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(tape.value(y)[(0, 1)], 0.5, epsilon = 1e-7);
    }

    #[test]
    fn l2_distance_three_four_five() {
        let mut tape = Tape::new();
        let a = tape.leaf(array![[3.0, 4.0]], true).unwrap();
        let b = tape.leaf(array![[0.0, 0.0]], true).unwrap();
        let d = tape.l2_distance_rows(a, b).unwrap();
        assert_abs_diff_eq!(tape.value(d)[(0, 0)], 5.0, epsilon = 1e-6);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0, -2.0, 3.0]], true).unwrap();
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &array![[1.0, 1.0, 1.0]]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[2.0]], true).unwrap();
        let loss = tape.sum(x).unwrap();
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &array![[2.0]]);
        tape.zero_grads();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn foreign_tensor_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.leaf(array![[1.0]], true).unwrap();
        assert!(b.backward(x).is_err());
        assert!(b.sum(x).is_err());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0, 2.0]], true).unwrap();
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(array![[1.0, 2.0]], true).unwrap();
        let b = tape.leaf(array![[1.0], [2.0], [3.0]], true).unwrap();
        assert!(tape.matmul(a, b).is_err());
        assert!(tape.add(a, b).is_err());
    }

    #[test]
    fn batchnorm_batch_of_one_rejected_in_train_mode() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0, 2.0]], true).unwrap();
        let g = tape.leaf(array![[1.0, 1.0]], true).unwrap();
        let b = tape.leaf(array![[0.0, 0.0]], true).unwrap();
        let mut state = BnState::new(2);
        assert!(tape.batchnorm(x, g, b, &mut state, true).is_err());
        assert!(tape.batchnorm(x, g, b, &mut state, false).is_ok());
    }

    #[test]
    fn batchnorm_normalises_columns() {
        let mut tape = Tape::new();
        let x = tape
            .leaf(array![[1.0, 10.0], [2.0, 20.0], [3.0, 30.0], [4.0, 40.0]], true)
            .unwrap();
        let g = tape.leaf(array![[1.0, 1.0]], false).unwrap();
        let b = tape.leaf(array![[0.0, 0.0]], false).unwrap();
        let mut state = BnState::new(2);
        let y = tape.batchnorm(x, g, b, &mut state, true).unwrap();
        let yv = tape.value(y);
        for c in 0..2 {
            let mean: f64 = yv.column(c).iter().map(|&v| v as f64).sum::<f64>() / 4.0;
            let var: f64 = yv
                .column(c)
                .iter()
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>()
                / 4.0;
            assert!(mean.abs() <= 1e-5, "column mean {mean}");
            assert!((var - 1.0).abs() <= 1e-4, "column var {var}");
        }
    }

    #[test]
    fn gather_and_select_round() {
        let mut tape = Tape::new();
        let x = tape
            .leaf(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], true)
            .unwrap();
        let g = tape.gather_rows(x, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value(g), &array![[5.0, 6.0], [1.0, 2.0], [5.0, 6.0]]);
        let s = tape.select_col_per_row(g, &[1, 0, 0]).unwrap();
        assert_eq!(tape.value(s), &array![[6.0], [1.0], [5.0]]);
        let loss = tape.sum(s).unwrap();
        tape.backward(loss).unwrap();
        // x row 2 entered twice (columns 1 and 0), x row 0 once (column 0).
        assert_eq!(tape.grad(x).unwrap(), &array![[1.0, 0.0], [0.0, 0.0], [1.0, 1.0]]);
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut tape = Tape::new();
        assert!(tape.leaf(array![[f32::NAN]], true).is_err());
    }
}

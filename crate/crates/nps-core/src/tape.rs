//! Reverse-mode automatic differentiation over [`Array`] values.
//!
//! A [`Tape`] is a Wengert list: forward operations append nodes, `backward`
//! replays them in reverse. Parents always precede children, so the graph is
//! acyclic by construction and a single reverse sweep visits every node
//! exactly once (asserted via visit counters).
//!
//! A tape and its tensors form one single-threaded unit of work. Concurrent
//! training builds independent tapes per example and merges harvested
//! gradients by value in a fixed order.

use crate::array::{matmul_nn, matmul_nt, matmul_tn, Array};
use crate::error::{CoreError, Result};
use crate::optim::{GradStore, ParamId, ParamStore};
use crate::rng::Mix64;

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(u32);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var, f64),
    Scale(Var, f64),
    Matmul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Elu(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Softmax(Var, usize),
    Concat(Var, Var, usize),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    GatherRows(Var, Vec<u32>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    /// Stored mask is already scaled by 1/(1-p); backward multiplies by it.
    Dropout(Var, Vec<f64>),
    /// Forward value is a hard selection; backward passes the gradient to the
    /// soft surrogate parent unchanged.
    StraightThrough(Var),
}

pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Array>,
    grads: Vec<Option<Vec<f64>>>,
    requires: Vec<bool>,
    params: Vec<Option<ParamId>>,
    visits: Vec<u32>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            ops: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            requires: Vec::new(),
            params: Vec::new(),
            visits: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op, value: Array, requires: bool, param: Option<ParamId>) -> Var {
        let id = self.ops.len() as u32;
        self.ops.push(op);
        self.values.push(value);
        self.grads.push(None);
        self.requires.push(requires);
        self.params.push(param);
        self.visits.push(0);
        Var(id)
    }

    fn req(&self, v: Var) -> bool {
        self.requires[v.0 as usize]
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.values[v.0 as usize]
    }

    /// Gradient of the last backward root w.r.t. `v`; zeros if no gradient
    /// flowed to it.
    pub fn grad(&self, v: Var) -> Array {
        let val = &self.values[v.0 as usize];
        match &self.grads[v.0 as usize] {
            Some(g) => {
                let mut a = val.clone();
                a.data_mut().copy_from_slice(g);
                a
            }
            None => {
                let mut a = val.clone();
                a.data_mut().fill(0.0);
                a
            }
        }
    }

    // ── Leaves ──────────────────────────────────────────────────────

    /// Constant input; no gradient is tracked through it.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(Op::Leaf, value, false, None)
    }

    /// Differentiable leaf (not tied to a parameter store).
    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(Op::Leaf, value, true, None)
    }

    /// Stage a stored parameter onto this tape (copies the current value).
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(Op::Leaf, store.value(id).clone(), true, Some(id))
    }

    // ── Elementwise ─────────────────────────────────────────────────

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() == vb.rows() && va.cols() == vb.cols() {
            Ok(())
        } else {
            Err(CoreError::Dim { op, left: va.shape_string(), right: vb.shape_string() })
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data().iter())
            .map(|(x, y)| x + y)
            .collect();
        let mut out = self.value(a).clone();
        out.data_mut().copy_from_slice(&data);
        let req = self.req(a) || self.req(b);
        Ok(self.push(Op::Add(a, b), out, req, None))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data().iter())
            .map(|(x, y)| x - y)
            .collect();
        let mut out = self.value(a).clone();
        out.data_mut().copy_from_slice(&data);
        let req = self.req(a) || self.req(b);
        Ok(self.push(Op::Sub(a, b), out, req, None))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data().iter())
            .map(|(x, y)| x * y)
            .collect();
        let mut out = self.value(a).clone();
        out.data_mut().copy_from_slice(&data);
        let req = self.req(a) || self.req(b);
        Ok(self.push(Op::Mul(a, b), out, req, None))
    }

    /// Scalar broadcast: x + c.
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v += c);
        let req = self.req(a);
        self.push(Op::AddScalar(a, c), out, req, None)
    }

    /// Scalar broadcast: c * x.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= c);
        let req = self.req(a);
        self.push(Op::Scale(a, c), out, req, None)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v = f(*v));
        let req = self.req(a);
        self.push(op, out, req, None)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Elu(a), |x| if x > 0.0 { x } else { x.exp() - 1.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), stable_sigmoid)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|v| **v <= 0.0 || v.is_nan()) {
            return Err(CoreError::Domain { op: "log", detail: format!("input {bad} outside (0, inf)") });
        }
        Ok(self.unary(a, Op::Log(a), f64::ln))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|v| **v > 709.0 || v.is_nan()) {
            return Err(CoreError::Domain { op: "exp", detail: format!("input {bad} would overflow") });
        }
        Ok(self.unary(a, Op::Exp(a), f64::exp))
    }

    // ── Linear algebra ──────────────────────────────────────────────

    /// Matrix product; rank-1 operands are treated as 1 x n rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(CoreError::Dim { op: "matmul", left: va.shape_string(), right: vb.shape_string() });
        }
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        let mut out = Array::zeros(m, n);
        matmul_nn(out.data_mut(), va.data(), vb.data(), m, k, n);
        let req = self.req(a) || self.req(b);
        Ok(self.push(Op::Matmul(a, b), out, req, None))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transposed();
        let req = self.req(a);
        self.push(Op::Transpose(a), out, req, None)
    }

    // ── Structured ──────────────────────────────────────────────────

    /// Numerically stabilized softmax. Axis 1 normalizes each row, axis 0
    /// each column; rank-1 input is one distribution.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a);
        if v.data().iter().any(|x| x.is_nan()) {
            return Err(CoreError::Domain { op: "softmax", detail: "NaN in input".into() });
        }
        if axis > 1 {
            return Err(CoreError::Param { op: "softmax", detail: format!("axis {axis} out of range") });
        }
        let mut out = v.clone();
        if axis == 1 || v.rank() == 1 {
            let cols = out.cols();
            for r in 0..out.rows() {
                softmax_row_inplace(&mut out.data_mut()[r * cols..(r + 1) * cols]);
            }
        } else {
            let (rows, cols) = (out.rows(), out.cols());
            for c in 0..cols {
                let mut col: Vec<f64> = (0..rows).map(|r| out.at(r, c)).collect();
                softmax_row_inplace(&mut col);
                for (r, val) in col.iter().enumerate() {
                    out.set(r, c, *val);
                }
            }
        }
        let req = self.req(a);
        Ok(self.push(Op::Softmax(a, axis), out, req, None))
    }

    /// Concatenate along `axis` (0 = stack rows, 1 = extend columns).
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let out = match axis {
            0 if va.rank() == 1 && vb.rank() == 1 => {
                // Vector concatenation.
                let mut data = Vec::with_capacity(va.len() + vb.len());
                data.extend_from_slice(va.data());
                data.extend_from_slice(vb.data());
                Array::vector(data)
            }
            0 => {
                if va.cols() != vb.cols() {
                    return Err(CoreError::Dim { op: "concat", left: va.shape_string(), right: vb.shape_string() });
                }
                let mut data = Vec::with_capacity(va.len() + vb.len());
                data.extend_from_slice(va.data());
                data.extend_from_slice(vb.data());
                Array::matrix(va.rows() + vb.rows(), va.cols(), data)
            }
            1 => {
                if va.rows() != vb.rows() {
                    return Err(CoreError::Dim { op: "concat", left: va.shape_string(), right: vb.shape_string() });
                }
                let rows = va.rows();
                let mut data = Vec::with_capacity(va.len() + vb.len());
                for r in 0..rows {
                    data.extend_from_slice(va.row(r));
                    data.extend_from_slice(vb.row(r));
                }
                Array::matrix(rows, va.cols() + vb.cols(), data)
            }
            _ => return Err(CoreError::Param { op: "concat", detail: format!("axis {axis} out of range") }),
        };
        let req = self.req(a) || self.req(b);
        Ok(self.push(Op::Concat(a, b, axis), out, req, None))
    }

    /// Columns [start, end) of every row.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        if end > v.cols() || start >= end {
            return Err(CoreError::Usage {
                op: "slice_cols",
                detail: format!("range {start}..{end} out of bounds for {}", v.shape_string()),
            });
        }
        let rows = v.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&v.row(r)[start..end]);
        }
        let out = Array::matrix(rows, end - start, data);
        let req = self.req(a);
        Ok(self.push(Op::SliceCols(a, start, end), out, req, None))
    }

    /// Rows [start, end).
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        if end > v.rows() || start >= end {
            return Err(CoreError::Usage {
                op: "slice_rows",
                detail: format!("range {start}..{end} out of bounds for {}", v.shape_string()),
            });
        }
        let cols = v.cols();
        let data = v.data()[start * cols..end * cols].to_vec();
        let out = Array::matrix(end - start, cols, data);
        let req = self.req(a);
        Ok(self.push(Op::SliceRows(a, start, end), out, req, None))
    }

    /// Row gather with constant indices; backward scatter-adds.
    pub fn gather_rows(&mut self, a: Var, indices: &[u32]) -> Result<Var> {
        let v = self.value(a);
        let cols = v.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i as usize >= v.rows() {
                return Err(CoreError::Usage {
                    op: "gather_rows",
                    detail: format!("row {i} out of bounds for {}", v.shape_string()),
                });
            }
            data.extend_from_slice(v.row(i as usize));
        }
        let out = Array::matrix(indices.len(), cols, data);
        let req = self.req(a);
        Ok(self.push(Op::GatherRows(a, indices.to_vec()), out, req, None))
    }

    /// Reinterpret the row grouping without moving data.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(a).clone().reshaped(rows, cols)?;
        let req = self.req(a);
        Ok(self.push(Op::Reshape(a), out, req, None))
    }

    // ── Reductions ──────────────────────────────────────────────────

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let req = self.req(a);
        self.push(Op::Sum(a), Array::scalar(s), req, None)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: f64 = v.data().iter().sum();
        let n = v.len() as f64;
        let req = self.req(a);
        self.push(Op::Mean(a), Array::scalar(s / n), req, None)
    }

    // ── Stochastic / discrete ───────────────────────────────────────

    /// During training each element is zeroed with probability `p` and
    /// survivors are scaled by 1/(1-p); in evaluation it is the identity.
    pub fn dropout(&mut self, a: Var, p: f64, training: bool, rng: &mut Mix64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(CoreError::Param { op: "dropout", detail: format!("p={p} outside [0, 1)") });
        }
        if !training || p == 0.0 {
            // Identity with an all-ones mask keeps the backward rule uniform.
            let mask = vec![1.0; self.value(a).len()];
            let out = self.value(a).clone();
            let req = self.req(a);
            return Ok(self.push(Op::Dropout(a, mask), out, req, None));
        }
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.next_f64() < p { 0.0 } else { keep_scale })
            .collect();
        let mut out = self.value(a).clone();
        for (v, m) in out.data_mut().iter_mut().zip(mask.iter()) {
            *v *= m;
        }
        let req = self.req(a);
        Ok(self.push(Op::Dropout(a, mask), out, req, None))
    }

    /// Straight-through node: forward value is `hard` (typically a one-hot),
    /// backward routes the gradient to `soft` unchanged.
    pub fn straight_through(&mut self, soft: Var, hard: Array) -> Result<Var> {
        let vs = self.value(soft);
        if vs.rows() != hard.rows() || vs.cols() != hard.cols() {
            return Err(CoreError::Dim { op: "straight_through", left: vs.shape_string(), right: hard.shape_string() });
        }
        let req = self.req(soft);
        Ok(self.push(Op::StraightThrough(soft), hard, req, None))
    }

    // ── Composites ──────────────────────────────────────────────────

    /// x W + b, with the bias broadcast over rows via an explicit ones
    /// column (scalar-only broadcasting is the tape rule).
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        let rows = self.value(xw).rows();
        let ones = self.constant(Array::ones(rows, 1));
        let bias = self.matmul(ones, b)?;
        self.add(xw, bias)
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Populate gradients of every differentiable node reachable from
    /// `loss`. Repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(CoreError::Usage {
                op: "backward",
                detail: format!("loss must be scalar, got {}", self.value(loss).shape_string()),
            });
        }
        let n = self.ops.len();
        let mut seed: Vec<Option<Vec<f64>>> = vec![None; n];
        seed[loss.0 as usize] = Some(vec![1.0]);
        let mut visited = vec![false; n];

        for i in (0..n).rev() {
            let g = match seed[i].take() {
                Some(g) => g,
                None => continue,
            };
            assert!(!visited[i], "backward visited node {i} twice");
            visited[i] = true;
            self.visits[i] += 1;
            // Record the gradient on the node itself.
            match &mut self.grads[i] {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(g.iter()) {
                        *a += b;
                    }
                }
                None => self.grads[i] = Some(g.clone()),
            }
            if !self.requires[i] {
                continue;
            }
            self.propagate(i, &g, &mut seed);
        }
        Ok(())
    }

    /// Push the local vector-Jacobian product of node `i` into `seed`.
    fn propagate(&self, i: usize, g: &[f64], seed: &mut [Option<Vec<f64>>]) {
        let add_to = |seed: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>| {
            if !self.requires[v.0 as usize] {
                return;
            }
            match &mut seed[v.0 as usize] {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(contrib.iter()) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        match &self.ops[i] {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_to(seed, *a, g.to_vec());
                add_to(seed, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                add_to(seed, *a, g.to_vec());
                add_to(seed, *b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                add_to(seed, *a, g.iter().zip(vb.iter()).map(|(x, y)| x * y).collect());
                add_to(seed, *b, g.iter().zip(va.iter()).map(|(x, y)| x * y).collect());
            }
            Op::AddScalar(a, _) => add_to(seed, *a, g.to_vec()),
            Op::Scale(a, c) => add_to(seed, *a, g.iter().map(|x| c * x).collect()),
            Op::Matmul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.requires[a.0 as usize] {
                    let mut da = vec![0.0; m * k];
                    matmul_nt(&mut da, g, vb.data(), m, n, k);
                    add_to(seed, *a, da);
                }
                if self.requires[b.0 as usize] {
                    let mut db = vec![0.0; k * n];
                    matmul_tn(&mut db, va.data(), g, m, k, n);
                    add_to(seed, *b, db);
                }
            }
            Op::Transpose(a) => {
                let v = self.value(*a);
                let (rows, cols) = (v.rows(), v.cols());
                let mut da = vec![0.0; rows * cols];
                for r in 0..cols {
                    for c in 0..rows {
                        da[c * cols + r] = g[r * rows + c];
                    }
                }
                add_to(seed, *a, da);
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                add_to(seed, *a, g.iter().zip(x.iter()).map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 }).collect());
            }
            Op::Elu(a) => {
                let x = self.value(*a).data();
                let y = self.values[i].data();
                let da = g
                    .iter()
                    .zip(x.iter().zip(y.iter()))
                    .map(|(gv, (xv, yv))| if *xv > 0.0 { *gv } else { gv * (yv + 1.0) })
                    .collect();
                add_to(seed, *a, da);
            }
            Op::Sigmoid(a) => {
                let y = self.values[i].data();
                add_to(seed, *a, g.iter().zip(y.iter()).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect());
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                add_to(seed, *a, g.iter().zip(x.iter()).map(|(gv, xv)| gv / xv).collect());
            }
            Op::Exp(a) => {
                let y = self.values[i].data();
                add_to(seed, *a, g.iter().zip(y.iter()).map(|(gv, yv)| gv * yv).collect());
            }
            Op::Softmax(a, axis) => {
                let y = self.values[i].clone();
                let (rows, cols) = (y.rows(), y.cols());
                let mut da = vec![0.0; rows * cols];
                if *axis == 1 || y.rank() == 1 {
                    for r in 0..rows {
                        let yr = y.row(r);
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            da[r * cols + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                } else {
                    for c in 0..cols {
                        let mut dot = 0.0;
                        for r in 0..rows {
                            dot += y.at(r, c) * g[r * cols + c];
                        }
                        for r in 0..rows {
                            da[r * cols + c] = y.at(r, c) * (g[r * cols + c] - dot);
                        }
                    }
                }
                add_to(seed, *a, da);
            }
            Op::Concat(a, b, axis) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                match axis {
                    0 => {
                        add_to(seed, *a, g[..va.len()].to_vec());
                        add_to(seed, *b, g[va.len()..].to_vec());
                    }
                    _ => {
                        let rows = va.rows();
                        let (ca, cb) = (va.cols(), vb.cols());
                        let mut da = vec![0.0; va.len()];
                        let mut db = vec![0.0; vb.len()];
                        for r in 0..rows {
                            let base = r * (ca + cb);
                            da[r * ca..(r + 1) * ca].copy_from_slice(&g[base..base + ca]);
                            db[r * cb..(r + 1) * cb].copy_from_slice(&g[base + ca..base + ca + cb]);
                        }
                        add_to(seed, *a, da);
                        add_to(seed, *b, db);
                    }
                }
            }
            Op::SliceCols(a, start, end) => {
                let v = self.value(*a);
                let (rows, cols) = (v.rows(), v.cols());
                let w = end - start;
                let mut da = vec![0.0; rows * cols];
                for r in 0..rows {
                    da[r * cols + start..r * cols + end].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                add_to(seed, *a, da);
            }
            Op::SliceRows(a, start, end) => {
                let v = self.value(*a);
                let cols = v.cols();
                let mut da = vec![0.0; v.len()];
                da[start * cols..end * cols].copy_from_slice(g);
                add_to(seed, *a, da);
            }
            Op::GatherRows(a, indices) => {
                let v = self.value(*a);
                let cols = v.cols();
                let mut da = vec![0.0; v.len()];
                for (q, &src_row) in indices.iter().enumerate() {
                    let dst = &mut da[src_row as usize * cols..(src_row as usize + 1) * cols];
                    let grow = &g[q * cols..(q + 1) * cols];
                    for (d, gv) in dst.iter_mut().zip(grow.iter()) {
                        *d += gv;
                    }
                }
                add_to(seed, *a, da);
            }
            Op::Reshape(a) => add_to(seed, *a, g.to_vec()),
            Op::Sum(a) => {
                let n = self.value(*a).len();
                add_to(seed, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                add_to(seed, *a, vec![g[0] / n as f64; n]);
            }
            Op::Dropout(a, mask) => {
                add_to(seed, *a, g.iter().zip(mask.iter()).map(|(gv, m)| gv * m).collect());
            }
            Op::StraightThrough(soft) => add_to(seed, *soft, g.to_vec()),
        }
    }

    /// Fold the gradients of every staged parameter into `grads`.
    pub fn accumulate_param_grads(&self, grads: &mut GradStore) {
        for (i, pid) in self.params.iter().enumerate() {
            if let Some(pid) = pid {
                match &self.grads[i] {
                    Some(g) => grads.accumulate(*pid, g),
                    None => grads.touch(*pid),
                }
            }
        }
    }

    /// Highest visit count over all nodes (1 after a single backward).
    pub fn max_visits(&self) -> u32 {
        self.visits.iter().copied().max().unwrap_or(0)
    }
}

#[inline]
fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row_inplace(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

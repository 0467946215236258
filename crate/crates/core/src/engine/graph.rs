//! Reverse-mode computation graph.
//!
//! A [`Graph`] is a tape: every operation appends a node whose inputs were
//! created before it, so creation order is a topological order and
//! [`Graph::backward`] is a single reverse sweep.
//!
//! All values are viewed as matrices. Sequences are stored feature-major:
//! a sequence of `L` vectors of width `k` is a `k x L` matrix whose column `j`
//! is token `j`.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamId, ParamSet};
use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn node_id(self) -> usize {
        self.0
    }
}

/// Governs every dropout site, prediction dropout included.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Down each column (over rows).
    Rows,
    /// Along each row (over columns).
    Cols,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    Transpose(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Embedding(ParamId, Vec<usize>),
    Dropout(Var, Vec<f64>),
    Softmax(Var, Axis),
    Maximum(Var, Var),
    LnEps(Var, f64),
    Select(Var, usize),
}

enum Storage {
    Owned(Vec<f64>),
    Param(ParamId),
}

struct Node {
    rows: usize,
    cols: usize,
    value: Storage,
    op: Op,
    requires_grad: bool,
}

/// A single-threaded tape borrowing an immutable parameter snapshot.
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    mode: Mode,
    rng: ChaCha8Rng,
    consumed: bool,
}

fn matmul_raw(a: &[f64], b: &[f64], p: usize, q: usize, r: usize, out: &mut [f64]) {
    for i in 0..p {
        let row = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * r..(k + 1) * r];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Indices of every softmax slice along `axis` of a `rows x cols` matrix.
fn slices(rows: usize, cols: usize, axis: Axis) -> Vec<Vec<usize>> {
    match axis {
        Axis::Rows => (0..cols)
            .map(|c| (0..rows).map(|r| r * cols + c).collect())
            .collect(),
        Axis::Cols => (0..rows)
            .map(|r| (0..cols).map(|c| r * cols + c).collect())
            .collect(),
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet, mode: Mode, seed: u64) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            consumed: false,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node so the graph can record a new forward pass.
    pub fn reset(&mut self, seed: u64) {
        self.nodes.clear();
        self.param_vars.clear();
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.consumed = false;
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].value {
            Storage::Owned(d) => d,
            Storage::Param(id) => self.params.get(*id).data(),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    /// Copies a node's value out as an owned 2-D tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        let (r, c) = self.shape(v);
        Tensor::matrix(r, c, self.value(v).to_vec()).expect("node shape")
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, data.len());
        self.nodes.push(Node {
            rows,
            cols,
            value: Storage::Owned(data),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    // ----- leaves -------------------------------------------------------

    pub fn constant(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.dims2();
        self.push(r, c, t.data().to_vec(), Op::Constant, false)
    }

    pub fn constant_raw(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if rows * cols != data.len() || rows == 0 || cols == 0 {
            return Err(dim_err!("constant {rows}x{cols} with {} values", data.len()));
        }
        Ok(self.push(rows, cols, data, Op::Constant, false))
    }

    /// Leaf that tracks gradients without being a parameter; used by
    /// gradient checks on free inputs.
    pub fn input(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.dims2();
        self.push(r, c, t.data().to_vec(), Op::Constant, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let (rows, cols) = self.params.get(id).dims2();
        self.nodes.push(Node {
            rows,
            cols,
            value: Storage::Param(id),
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    // ----- linear algebra ----------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q) = self.shape(a);
        let (q2, r) = self.shape(b);
        if q != q2 {
            return Err(dim_err!("matmul of {p}x{q} by {q2}x{r}"));
        }
        let mut out = vec![0.0; p * r];
        matmul_raw(self.value(a), self.value(b), p, q, r, &mut out);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(p, r, out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = transpose_raw(self.value(a), r, c);
        let rg = self.requires(a);
        self.push(c, r, out, Op::Transpose(a), rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(dim_err!("{what} of {}x{} and {}x{}", sa.0, sa.1, sb.0, sb.1));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "add")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(r, c, out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "sub")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(r, c, out, Op::Sub(a, b), rg))
    }

    /// `a + b` where `b` is a column vector broadcast over the columns of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let (br, bc) = self.shape(b);
        if br != r || bc != 1 {
            return Err(dim_err!("bias {br}x{bc} for {r}x{c}"));
        }
        let bias = self.value(b);
        let out = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, x)| x + bias[i / c])
            .collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(r, c, out, Op::AddBias(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "mul")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(r, c, out, Op::Mul(a, b), rg))
    }

    /// `scale * a + offset`.
    pub fn affine(&mut self, a: Var, scale: f64, offset: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| scale * x + offset).collect();
        let rg = self.requires(a);
        self.push(r, c, out, Op::Affine(a, scale), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "maximum")?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| if x >= y { *x } else { *y })
            .collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(r, c, out, Op::Maximum(a, b), rg))
    }

    // ----- pointwise nonlinearities ------------------------------------

    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x.max(0.0)).collect();
        let rg = self.requires(a);
        self.push(r, c, out, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        let rg = self.requires(a);
        self.push(r, c, out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        let rg = self.requires(a);
        self.push(r, c, out, Op::Sigmoid(a), rg)
    }

    /// `ln(a + eps)`.
    pub fn ln_eps(&mut self, a: Var, eps: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| (x + eps).ln()).collect();
        let rg = self.requires(a);
        self.push(r, c, out, Op::LnEps(a, eps), rg)
    }

    // ----- reductions and reshaping ------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.requires(a);
        self.push(1, 1, vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.requires(a);
        self.push(1, 1, vec![s], Op::Mean(a), rg)
    }

    /// Element at flat index `idx` as a `1 x 1` node.
    pub fn select(&mut self, a: Var, idx: usize) -> Result<Var> {
        let n = self.value(a).len();
        if idx >= n {
            return Err(dim_err!("select index {idx} out of {n} elements"));
        }
        let v = self.value(a)[idx];
        let rg = self.requires(a);
        Ok(self.push(1, 1, vec![v], Op::Select(a, idx), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if len == 0 || start + len > r {
            return Err(dim_err!("row slice {start}..{} of {r}x{c}", start + len));
        }
        let out = self.value(a)[start * c..(start + len) * c].to_vec();
        let rg = self.requires(a);
        Ok(self.push(len, c, out, Op::SliceRows(a, start), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if len == 0 || start + len > c {
            return Err(dim_err!("column slice {start}..{} of {r}x{c}", start + len));
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(r * len);
        for row in 0..r {
            out.extend_from_slice(&v[row * c + start..row * c + start + len]);
        }
        let rg = self.requires(a);
        Ok(self.push(r, len, out, Op::SliceCols(a, start), rg))
    }

    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        self.slice_cols(a, j, 1)
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        match axis {
            Axis::Rows => self.concat_rows(parts),
            Axis::Cols => self.concat_cols(parts),
        }
    }

    /// Stacks matrices vertically; all parts share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| dim_err!("concat of nothing"))?;
        let c = self.shape(*first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pc != c {
                return Err(dim_err!("row concat of {pr}x{pc} onto width {c}"));
            }
            rows += pr;
            out.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(rows, c, out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Places matrices side by side; all parts share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| dim_err!("concat of nothing"))?;
        let r = self.shape(*first).0;
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pr != r {
                return Err(dim_err!("column concat of {pr}x{pc} onto height {r}"));
            }
            cols += pc;
        }
        let mut out = Vec::with_capacity(r * cols);
        for row in 0..r {
            for &p in parts {
                let pc = self.shape(p).1;
                out.extend_from_slice(&self.value(p)[row * pc..(row + 1) * pc]);
            }
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(r, cols, out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Gathers rows `ids` of a `V x k` table as the columns of a `k x L`
    /// matrix.
    pub fn embedding(&mut self, table: ParamId, ids: &[usize]) -> Result<Var> {
        let t = self.params.get(table);
        let (v, k) = t.dims2();
        if ids.is_empty() {
            return Err(dim_err!("embedding lookup of an empty sequence"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(dim_err!("embedding id {bad} out of table with {v} rows"));
        }
        let l = ids.len();
        let data = t.data();
        let mut out = vec![0.0; k * l];
        for (j, &id) in ids.iter().enumerate() {
            for r in 0..k {
                out[r * l + j] = data[id * k + r];
            }
        }
        Ok(self.push(k, l, out, Op::Embedding(table, ids.to_vec()), true))
    }

    /// Inverted dropout; identity in evaluation mode or at rate 0.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = self.value(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let (r, c) = self.shape(a);
        let rg = self.requires(a);
        Ok(self.push(r, c, out, Op::Dropout(a, mask), rg))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        self.softmax_impl(a, axis, None)
    }

    /// Softmax that assigns exactly zero probability where `keep` is false,
    /// equivalent to setting those scores to negative infinity. Each slice
    /// must keep at least one entry.
    pub fn masked_softmax(&mut self, a: Var, axis: Axis, keep: &[bool]) -> Result<Var> {
        if keep.len() != self.value(a).len() {
            return Err(dim_err!(
                "softmax mask of {} entries for {} values",
                keep.len(),
                self.value(a).len()
            ));
        }
        self.softmax_impl(a, axis, Some(keep))
    }

    fn softmax_impl(&mut self, a: Var, axis: Axis, keep: Option<&[bool]>) -> Result<Var> {
        let x = self.value(a);
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("softmax input contains NaN".into()));
        }
        let (r, c) = self.shape(a);
        let mut out = vec![0.0; x.len()];
        for idx in slices(r, c, axis) {
            let live = |i: &usize| keep.is_none_or(|k| k[*i]);
            let max = idx
                .iter()
                .filter(|i| live(i))
                .map(|&i| x[i])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::Numeric("softmax over an empty slice".into()));
            }
            let mut z = 0.0;
            for &i in idx.iter().filter(|i| live(i)) {
                let e = (x[i] - max).exp();
                out[i] = e;
                z += e;
            }
            for &i in idx.iter().filter(|i| live(i)) {
                out[i] /= z;
            }
        }
        let rg = self.requires(a);
        Ok(self.push(r, c, out, Op::Softmax(a, axis), rg))
    }

    // ----- backward ----------------------------------------------------

    /// Accumulates d(loss)/d(param) for every parameter reachable from
    /// `loss`. The graph must be [`reset`](Self::reset) before reuse.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let (grads, param_grads) = self.backward_full(loss)?;
        drop(grads);
        Ok(param_grads)
    }

    /// Like [`backward`](Self::backward) but also returns the gradient of
    /// every `input` leaf, indexed by node.
    pub fn backward_with_inputs(&mut self, loss: Var, inputs: &[Var]) -> Result<(Gradients, Vec<Vec<f64>>)> {
        let (grads, param_grads) = self.backward_full(loss)?;
        let wrt = inputs
            .iter()
            .map(|v| {
                grads[v.0]
                    .clone()
                    .unwrap_or_else(|| vec![0.0; self.value(*v).len()])
            })
            .collect();
        Ok((param_grads, wrt))
    }

    fn backward_full(&mut self, loss: Var) -> Result<(Vec<Option<Vec<f64>>>, Gradients)> {
        if self.consumed {
            return Err(Error::Contract("graph already differentiated; call reset first".into()));
        }
        if self.shape(loss) != (1, 1) {
            let (r, c) = self.shape(loss);
            return Err(Error::Contract(format!("backward from a {r}x{c} tensor; loss must be scalar")));
        }
        if !self.requires(loss) {
            return Err(Error::Contract("loss does not depend on anything differentiable".into()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut param_grads = Gradients::new(self.params.len());

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let (rows, cols) = (node.rows, node.cols);
            match &node.op {
                Op::Constant => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Param(pid) => {
                    let slot = param_grads.slot_mut(*pid, g.len());
                    slot.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
                }
                Op::MatMul(a, b) => {
                    let (p, q) = self.shape(*a);
                    let r = cols;
                    if self.requires(*a) {
                        // dA = dC * B^T
                        let bt = transpose_raw(self.value(*b), q, r);
                        let mut da = vec![0.0; p * q];
                        matmul_raw(&g, &bt, p, r, q, &mut da);
                        self.acc(&mut grads, *a, &da);
                    }
                    if self.requires(*b) {
                        // dB = A^T * dC
                        let at = transpose_raw(self.value(*a), p, q);
                        let mut db = vec![0.0; q * r];
                        matmul_raw(&at, &g, q, p, r, &mut db);
                        self.acc(&mut grads, *b, &db);
                    }
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, &g);
                    self.acc(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    self.acc(&mut grads, *b, &neg);
                }
                Op::AddBias(a, b) => {
                    self.acc(&mut grads, *a, &g);
                    let db: Vec<f64> = (0..rows).map(|r| g[r * cols..(r + 1) * cols].iter().sum()).collect();
                    self.acc(&mut grads, *b, &db);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = g.iter().zip(self.value(*b)).map(|(g, y)| g * y).collect();
                    let db: Vec<f64> = g.iter().zip(self.value(*a)).map(|(g, x)| g * x).collect();
                    self.acc(&mut grads, *a, &da);
                    self.acc(&mut grads, *b, &db);
                }
                Op::Affine(a, s) => {
                    let da: Vec<f64> = g.iter().map(|v| v * s).collect();
                    self.acc(&mut grads, *a, &da);
                }
                Op::Maximum(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut da = vec![0.0; g.len()];
                    let mut db = vec![0.0; g.len()];
                    for i in 0..g.len() {
                        if va[i] >= vb[i] {
                            da[i] = g[i];
                        } else {
                            db[i] = g[i];
                        }
                    }
                    self.acc(&mut grads, *a, &da);
                    self.acc(&mut grads, *b, &db);
                }
                Op::Relu(a) => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.value(*a))
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.acc(&mut grads, *a, &da);
                }
                Op::Tanh(a) => {
                    let y = self.value(Var(id));
                    let da: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                    self.acc(&mut grads, *a, &da);
                }
                Op::Sigmoid(a) => {
                    let y = self.value(Var(id));
                    let da: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                    self.acc(&mut grads, *a, &da);
                }
                Op::LnEps(a, eps) => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.value(*a))
                        .map(|(g, x)| g / (x + eps))
                        .collect();
                    self.acc(&mut grads, *a, &da);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    self.acc(&mut grads, *a, &vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    self.acc(&mut grads, *a, &vec![g[0] / n as f64; n]);
                }
                Op::Select(a, idx) => {
                    let mut da = vec![0.0; self.value(*a).len()];
                    da[*idx] = g[0];
                    self.acc(&mut grads, *a, &da);
                }
                Op::Transpose(a) => {
                    let da = transpose_raw(&g, rows, cols);
                    self.acc(&mut grads, *a, &da);
                }
                Op::SliceRows(a, start) => {
                    let (ar, ac) = self.shape(*a);
                    let mut da = vec![0.0; ar * ac];
                    da[start * ac..start * ac + g.len()].copy_from_slice(&g);
                    self.acc(&mut grads, *a, &da);
                }
                Op::SliceCols(a, start) => {
                    let (ar, ac) = self.shape(*a);
                    let mut da = vec![0.0; ar * ac];
                    for r in 0..ar {
                        da[r * ac + start..r * ac + start + cols].copy_from_slice(&g[r * cols..(r + 1) * cols]);
                    }
                    self.acc(&mut grads, *a, &da);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        self.acc(&mut grads, p, &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut col0 = 0;
                    for &p in parts {
                        let (pr, pc) = self.shape(p);
                        let mut dp = vec![0.0; pr * pc];
                        for r in 0..pr {
                            dp[r * pc..(r + 1) * pc].copy_from_slice(&g[r * cols + col0..r * cols + col0 + pc]);
                        }
                        self.acc(&mut grads, p, &dp);
                        col0 += pc;
                    }
                }
                Op::Embedding(table, ids) => {
                    let t = self.params.get(*table);
                    let (v, k) = t.dims2();
                    let slot = param_grads.slot_mut(*table, v * k);
                    let l = ids.len();
                    for (j, &row) in ids.iter().enumerate() {
                        for r in 0..k {
                            slot[row * k + r] += g[r * l + j];
                        }
                    }
                }
                Op::Dropout(a, mask) => {
                    let da: Vec<f64> = g.iter().zip(mask).map(|(g, m)| g * m).collect();
                    self.acc(&mut grads, *a, &da);
                }
                Op::Softmax(a, axis) => {
                    let y = self.value(Var(id));
                    let mut da = vec![0.0; y.len()];
                    for idx in slices(rows, cols, *axis) {
                        let dot: f64 = idx.iter().map(|&i| g[i] * y[i]).sum();
                        for &i in &idx {
                            da[i] = y[i] * (g[i] - dot);
                        }
                    }
                    self.acc(&mut grads, *a, &da);
                }
            }
        }
        Ok((grads, param_grads))
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], target: Var, g: &[f64]) {
        if !self.requires(target) {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => existing.iter_mut().zip(g).for_each(|(e, v)| *e += v),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }
}

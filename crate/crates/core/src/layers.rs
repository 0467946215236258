//! Reusable layers: position-wise FFN, LSTM/BiLSTM, maxout, GRU cell and
//! the one-layer `ReLU(Wx)` attention transform.
//!
//! Every layer stores [`ParamId`]s into a shared [`ParamSet`] and records its
//! forward pass on a [`Graph`]. Sequences are `features x length`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::engine::{Graph, ParamId, ParamSet, Tensor, Var};
use crate::error::{dim_err, Error, Result};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) matrix of shape `rows x fan_in`.
pub fn uniform_fan_in<R: Rng>(rng: &mut R, rows: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * fan_in).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::matrix(rows, fan_in, data).expect("shape")
}

pub fn gaussian<R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Random `n x n` orthogonal matrix (QR of a Gaussian matrix with the sign
/// of R's diagonal folded into Q).
pub fn orthogonal<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let m = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = m.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let sign = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
            out[i * n + j] = q[(i, j)] * sign;
        }
    }
    out
}

/// `blocks` orthogonal `n x n` matrices stacked vertically.
fn stacked_orthogonal<R: Rng>(rng: &mut R, blocks: usize, n: usize) -> Tensor {
    let data = (0..blocks).flat_map(|_| orthogonal(rng, n)).collect();
    Tensor::matrix(blocks * n, n, data).expect("shape")
}

fn check_rows(g: &Graph, x: Var, want: usize, what: &str) -> Result<()> {
    let (r, c) = g.shape(x);
    if r != want {
        return Err(dim_err!("{what} expects {want} input rows, got {r}x{c}"));
    }
    Ok(())
}

/// `ReLU(W x)`, position-wise.
pub fn attention_transform(g: &mut Graph, w: Var, x: Var) -> Result<Var> {
    let z = g.matmul(w, x)?;
    Ok(g.relu(z))
}

/// `FFN(x) = W2 ReLU(W1 x + b1) + b2`.
#[derive(Clone, Debug)]
pub struct FfnParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl FfnParams {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(FfnParams {
            w1: params.insert(format!("{prefix}.w1"), uniform_fan_in(rng, hidden, input))?,
            b1: params.insert(format!("{prefix}.b1"), Tensor::zeros(&[hidden]))?,
            w2: params.insert(format!("{prefix}.w2"), uniform_fan_in(rng, output, hidden))?,
            b2: params.insert(format!("{prefix}.b2"), Tensor::zeros(&[output]))?,
            input,
            hidden,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        check_rows(g, x, self.input, "ffn")?;
        let (w1, b1, w2, b2) = (g.param(self.w1), g.param(self.b1), g.param(self.w2), g.param(self.b2));
        let h = g.matmul(w1, x)?;
        let h = g.add_bias(h, b1)?;
        let h = g.relu(h);
        let o = g.matmul(w2, h)?;
        g.add_bias(o, b2)
    }
}

/// One LSTM direction. Gate rows are laid out `[input, forget, cell, output]`.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn new<R: Rng>(params: &mut ParamSet, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        Ok(LstmParams {
            w_x: params.insert(format!("{prefix}.w_x"), uniform_fan_in(rng, 4 * hidden, input))?,
            w_h: params.insert(format!("{prefix}.w_h"), stacked_orthogonal(rng, 4, hidden))?,
            b: params.insert(format!("{prefix}.b"), Tensor::vector(bias))?,
            input,
            hidden,
        })
    }

    /// Runs the cell over `x` in the given column order and returns the
    /// hidden states re-ordered to match the input positions.
    pub fn run(&self, g: &mut Graph, x: Var, reverse: bool) -> Result<Var> {
        check_rows(g, x, self.input, "lstm")?;
        let h = self.hidden;
        let len = g.shape(x).1;
        let (wx, wh, b) = (g.param(self.w_x), g.param(self.w_h), g.param(self.b));
        let xg = g.matmul(wx, x)?;
        let xg = g.add_bias(xg, b)?;
        let mut states: Vec<Option<Var>> = vec![None; len];
        let mut prev: Option<(Var, Var)> = None;
        let order: Vec<usize> = if reverse { (0..len).rev().collect() } else { (0..len).collect() };
        for t in order {
            let mut gates = g.column(xg, t)?;
            if let Some((h_prev, _)) = prev {
                let rec = g.matmul(wh, h_prev)?;
                gates = g.add(gates, rec)?;
            }
            let i = g.slice_rows(gates, 0, h)?;
            let f = g.slice_rows(gates, h, h)?;
            let c_hat = g.slice_rows(gates, 2 * h, h)?;
            let o = g.slice_rows(gates, 3 * h, h)?;
            let i = g.sigmoid(i);
            let o = g.sigmoid(o);
            let c_hat = g.tanh(c_hat);
            let mut c = g.mul(i, c_hat)?;
            if let Some((_, c_prev)) = prev {
                let f = g.sigmoid(f);
                let keep = g.mul(f, c_prev)?;
                c = g.add(c, keep)?;
            }
            let tc = g.tanh(c);
            let h_t = g.mul(o, tc)?;
            states[t] = Some(h_t);
            prev = Some((h_t, c));
        }
        let cols: Vec<Var> = states.into_iter().map(|s| s.expect("every step visited")).collect();
        g.concat_cols(&cols)
    }
}

/// Bidirectional LSTM; output rows are `[forward; backward]`.
#[derive(Clone, Debug)]
pub struct BiLstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BiLstmParams {
    pub fn new<R: Rng>(params: &mut ParamSet, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(BiLstmParams {
            fwd: LstmParams::new(params, &format!("{prefix}.fwd"), input, hidden, rng)?,
            bwd: LstmParams::new(params, &format!("{prefix}.bwd"), input, hidden, rng)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    /// `in x L -> 2h x L`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let f = self.fwd.run(g, x, false)?;
        let b = self.bwd.run(g, x, true)?;
        g.concat_rows(&[f, b])
    }
}

/// Elementwise max over `k` affine pieces. Ties pick the lowest piece.
#[derive(Clone, Debug)]
pub struct MaxoutParams {
    pub w: ParamId,
    pub b: ParamId,
    pub pieces: usize,
    pub input: usize,
    pub output: usize,
}

impl MaxoutParams {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        output: usize,
        pieces: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if pieces < 2 {
            return Err(Error::Config(format!("maxout needs at least 2 pieces, got {pieces}")));
        }
        Ok(MaxoutParams {
            w: params.insert(format!("{prefix}.w"), uniform_fan_in(rng, pieces * output, input))?,
            b: params.insert(format!("{prefix}.b"), Tensor::zeros(&[pieces * output]))?,
            pieces,
            input,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        check_rows(g, x, self.input, "maxout")?;
        let (w, b) = (g.param(self.w), g.param(self.b));
        let z = g.matmul(w, x)?;
        let z = g.add_bias(z, b)?;
        let mut out = g.slice_rows(z, 0, self.output)?;
        for k in 1..self.pieces {
            let piece = g.slice_rows(z, k * self.output, self.output)?;
            out = g.maximum(out, piece)?;
        }
        Ok(out)
    }
}

/// GRU cell with gate rows laid out `[update, reset, candidate]`:
///
/// ```text
/// z  = sigmoid(Wz x + Uz s + bz)
/// r  = sigmoid(Wr x + Ur s + br)
/// s~ = tanh(Wc x + Uc (r * s) + bc)
/// s' = (1 - z) * s + z * s~
/// ```
#[derive(Clone, Debug)]
pub struct GruParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub state: usize,
}

impl GruParams {
    pub fn new<R: Rng>(params: &mut ParamSet, prefix: &str, input: usize, state: usize, rng: &mut R) -> Result<Self> {
        Ok(GruParams {
            w_x: params.insert(format!("{prefix}.w_x"), uniform_fan_in(rng, 3 * state, input))?,
            w_h: params.insert(format!("{prefix}.w_h"), stacked_orthogonal(rng, 3, state))?,
            b: params.insert(format!("{prefix}.b"), Tensor::zeros(&[3 * state]))?,
            input,
            state,
        })
    }

    pub fn step(&self, g: &mut Graph, s_prev: Var, x: Var) -> Result<Var> {
        check_rows(g, x, self.input, "gru input")?;
        check_rows(g, s_prev, self.state, "gru state")?;
        let s = self.state;
        let (wx, wh, b) = (g.param(self.w_x), g.param(self.w_h), g.param(self.b));
        let xg = g.matmul(wx, x)?;
        let xg = g.add_bias(xg, b)?;
        let u_zr = g.slice_rows(wh, 0, 2 * s)?;
        let u_c = g.slice_rows(wh, 2 * s, s)?;
        let hg = g.matmul(u_zr, s_prev)?;
        let xzr = g.slice_rows(xg, 0, 2 * s)?;
        let zr = g.add(xzr, hg)?;
        let zr = g.sigmoid(zr);
        let z = g.slice_rows(zr, 0, s)?;
        let r = g.slice_rows(zr, s, s)?;
        let rs = g.mul(r, s_prev)?;
        let hc = g.matmul(u_c, rs)?;
        let xc = g.slice_rows(xg, 2 * s, s)?;
        let cand = g.add(xc, hc)?;
        let cand = g.tanh(cand);
        // s' = s + z * (cand - s)
        let diff = g.sub(cand, s_prev)?;
        let upd = g.mul(z, diff)?;
        g.add(s_prev, upd)
    }
}

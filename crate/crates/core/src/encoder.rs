//! Lexicon FFNs, the shared two-layer contextual BiLSTM, and working-memory
//! generation.
//!
//! Shapes at hidden size `d`: lexicon `d`, contextual `H` `2d`, fused
//! passage `U` `4d`, memory `M` `2d`.

use rand::Rng;

use crate::engine::{Axis, Graph, ParamId, ParamSet, Var};
use crate::error::{dim_err, Result};
use crate::layers::{attention_transform, uniform_fan_in, BiLstmParams, FfnParams, MaxoutParams};

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub ffn_q: FfnParams,
    pub ffn_p: FfnParams,
    pub ctx1: BiLstmParams,
    pub ctx1_maxout: MaxoutParams,
    pub ctx2: BiLstmParams,
    pub ctx2_maxout: MaxoutParams,
    pub attn_w3: ParamId,
    pub self_attn_w: ParamId,
    pub mem: BiLstmParams,
    pub d: usize,
    pub cove_dim: usize,
}

pub struct EncoderDims {
    pub question_in: usize,
    pub passage_in: usize,
    pub d: usize,
    pub ffn_hidden: usize,
    pub attn_dim: usize,
    pub maxout_pieces: usize,
    /// Width of the optional CoVe stream; 0 disables it.
    pub cove_dim: usize,
}

impl EncoderParams {
    pub fn new<R: Rng>(params: &mut ParamSet, dims: &EncoderDims, rng: &mut R) -> Result<Self> {
        let d = dims.d;
        let k = dims.maxout_pieces;
        Ok(EncoderParams {
            ffn_q: FfnParams::new(params, "enc.ffn_q", dims.question_in, dims.ffn_hidden, d, rng)?,
            ffn_p: FfnParams::new(params, "enc.ffn_p", dims.passage_in, dims.ffn_hidden, d, rng)?,
            ctx1: BiLstmParams::new(params, "enc.ctx1", d + dims.cove_dim, d, rng)?,
            ctx1_maxout: MaxoutParams::new(params, "enc.ctx1_maxout", 2 * d, d, k, rng)?,
            ctx2: BiLstmParams::new(params, "enc.ctx2", d + dims.cove_dim, d, rng)?,
            ctx2_maxout: MaxoutParams::new(params, "enc.ctx2_maxout", 2 * d, d, k, rng)?,
            attn_w3: params.insert("enc.attn_w3", uniform_fan_in(rng, dims.attn_dim, 2 * d))?,
            self_attn_w: params.insert("enc.self_attn_w", uniform_fan_in(rng, dims.attn_dim, 4 * d))?,
            mem: BiLstmParams::new(params, "enc.mem", 8 * d, d, rng)?,
            d,
            cove_dim: dims.cove_dim,
        })
    }

    fn with_cove(&self, g: &mut Graph, x: Var, cove: Option<Var>) -> Result<Var> {
        match cove {
            None if self.cove_dim == 0 => Ok(x),
            Some(c) if self.cove_dim > 0 => {
                let (cr, cc) = g.shape(c);
                let len = g.shape(x).1;
                if cr != self.cove_dim || cc != len {
                    return Err(dim_err!("CoVe stream {cr}x{cc} for a sequence of length {len}"));
                }
                g.concat_rows(&[x, c])
            }
            None => Err(dim_err!("encoder expects a {}-row CoVe stream", self.cove_dim)),
            Some(_) => Err(dim_err!("CoVe stream given but the encoder was built without one")),
        }
    }

    /// One sequence through both contextual layers: `[maxout1; maxout2]`.
    fn contextual_one(&self, g: &mut Graph, e: Var, cove: Option<Var>, dropout: f64) -> Result<Var> {
        let x1 = self.with_cove(g, e, cove)?;
        let x1 = g.dropout(x1, dropout)?;
        let h1 = self.ctx1.forward(g, x1)?;
        let h1 = self.ctx1_maxout.forward(g, h1)?;
        let x2 = self.with_cove(g, h1, cove)?;
        let x2 = g.dropout(x2, dropout)?;
        let h2 = self.ctx2.forward(g, x2)?;
        let h2 = self.ctx2_maxout.forward(g, h2)?;
        g.concat_rows(&[h1, h2])
    }

    /// Maps lexicon vectors to the shared `d`-dimensional space.
    pub fn lexicon_encode(&self, g: &mut Graph, question_lex: Var, passage_lex: Var) -> Result<(Var, Var)> {
        let eq = self.ffn_q.forward(g, question_lex)?;
        let ep = self.ffn_p.forward(g, passage_lex)?;
        Ok((eq, ep))
    }

    /// `(Hq, Hp)`, both with `2d` rows; the same weights encode both.
    pub fn contextual_encode(
        &self,
        g: &mut Graph,
        eq: Var,
        ep: Var,
        cove_q: Option<Var>,
        cove_p: Option<Var>,
        dropout: f64,
    ) -> Result<(Var, Var)> {
        let hq = self.contextual_one(g, eq, cove_q, dropout)?;
        let hp = self.contextual_one(g, ep, cove_p, dropout)?;
        Ok((hq, hp))
    }

    /// Question-to-passage attention `C` (`m x n`); each column is a
    /// softmax over question tokens.
    pub fn cross_attention(&self, g: &mut Graph, hq: Var, hp: Var, dropout: f64) -> Result<Attention> {
        let w3 = g.param(self.attn_w3);
        let tq = attention_transform(g, w3, hq)?;
        let tp = attention_transform(g, w3, hp)?;
        let tq_t = g.transpose(tq);
        let scores = g.matmul(tq_t, tp)?;
        let normalized = g.softmax(scores, Axis::Rows)?;
        let out = g.dropout(normalized, dropout)?;
        Ok(Attention { normalized, out })
    }

    /// `U = [Hp; Hq C]`.
    pub fn gather_passage(&self, g: &mut Graph, hp: Var, hq: Var, c: Var) -> Result<Var> {
        let aware = g.matmul(hq, c)?;
        g.concat_rows(&[hp, aware])
    }

    /// Passage self-attention with the diagonal removed before
    /// normalization; `Û = U A`. A single-token passage has nothing else to
    /// attend to and gets an all-zero `Û`.
    pub fn self_attention(&self, g: &mut Graph, up: Var, dropout: f64) -> Result<SelfAttention> {
        let (rows, n) = g.shape(up);
        if n == 1 {
            log::debug!("single-token passage: self-attention output set to zero");
            let up_hat = g.constant_raw(rows, 1, vec![0.0; rows])?;
            return Ok(SelfAttention { up_hat, attention: None });
        }
        let w = g.param(self.self_attn_w);
        let t = attention_transform(g, w, up)?;
        let t_t = g.transpose(t);
        let scores = g.matmul(t_t, t)?;
        let keep: Vec<bool> = (0..n * n).map(|i| i / n != i % n).collect();
        let normalized = g.masked_softmax(scores, Axis::Rows, &keep)?;
        let a = g.dropout(normalized, dropout)?;
        let up_hat = g.matmul(up, a)?;
        Ok(SelfAttention {
            up_hat,
            attention: Some(normalized),
        })
    }

    /// `M = BiLSTM([U; Û])`.
    pub fn build_memory(&self, g: &mut Graph, up: Var, up_hat: Var, dropout: f64) -> Result<Var> {
        let x = g.concat_rows(&[up, up_hat])?;
        let x = g.dropout(x, dropout)?;
        self.mem.forward(g, x)
    }
}

pub struct Attention {
    /// Post-softmax, pre-dropout.
    pub normalized: Var,
    pub out: Var,
}

pub struct SelfAttention {
    pub up_hat: Var,
    /// Pre-dropout attention matrix; `None` for single-token passages.
    pub attention: Option<Var>,
}

/// Everything the answer module reads, plus intermediate attention maps.
pub struct WorkingMemory {
    pub m: Var,
    pub hq: Var,
    pub hp: Var,
    pub attention_c: Var,
    pub self_attention: Option<Var>,
}

//! Multi-step answer module with stochastic prediction dropout.
//!
//! Starting from a question summary `s0`, a GRU refines the state over `T`
//! steps, each step attending over the memory `M`. Every step emits its own
//! begin/end distributions through bilinear scoring:
//!
//! ```text
//! s0        = sum_j alpha_j Hq_j,           alpha = softmax_j(w4 . Hq_j)
//! x_t       = sum_j beta_j M_j,             beta  = softmax(s_{t-1} W5 M)
//! s_t       = GRU(s_{t-1}, x_t)                                   (t >= 1)
//! P_t^begin = softmax(s_t W6 M)
//! P_t^end   = softmax([s_t; sum_j P_t,j^begin M_j] W7 M)
//! ```
//!
//! The final distributions average the per-step ones. During training whole
//! steps are dropped from the average at random, always keeping at least
//! one; at evaluation time every step is kept.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Axis, Graph, ParamId, ParamSet, Tensor, Var};
use crate::error::{dim_err, Error, Result};
use crate::layers::{uniform_fan_in, GruParams};

/// Which answer module to run. Only the answer module differs between
/// variants; the lower layers are identical.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerVariant {
    /// `T` steps, prediction dropout in training, average at decode.
    San,
    /// Predict from `s0` only.
    Onestep,
    /// `T` steps, use only the last step.
    MemnetFinal,
    /// `T` steps, plain average, no prediction dropout.
    MemnetAvg,
}

impl AnswerVariant {
    pub const ALL: [AnswerVariant; 4] = [
        AnswerVariant::San,
        AnswerVariant::Onestep,
        AnswerVariant::MemnetFinal,
        AnswerVariant::MemnetAvg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnswerVariant::San => "san",
            AnswerVariant::Onestep => "onestep",
            AnswerVariant::MemnetFinal => "memnet_final",
            AnswerVariant::MemnetAvg => "memnet_avg",
        }
    }

    /// Step count actually run for a configured `T`.
    pub fn effective_steps(self, steps: usize) -> usize {
        match self {
            AnswerVariant::Onestep => 1,
            _ => steps,
        }
    }
}

impl fmt::Display for AnswerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnswerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reasonet" | "dynamic" => Err(Error::Unsupported(format!(
                "{s}: dynamic step counts learned with reinforcement learning are not implemented"
            ))),
            _ => AnswerVariant::ALL
                .iter()
                .copied()
                .find(|v| v.as_str() == s)
                .ok_or_else(|| Error::Config(format!("unknown answer variant {s:?}"))),
        }
    }
}

/// Whether begin and end predictions share one step mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    #[default]
    Shared,
    Independent,
}

/// Training objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// NLL of the (post-dropout) averaged distributions.
    #[default]
    AverageNll,
    /// Mean over kept steps of each step's NLL.
    PerStepNll,
}

#[derive(Clone, Debug)]
pub struct AnswerParams {
    pub w4: ParamId,
    pub w5: ParamId,
    pub w6: ParamId,
    pub w7: ParamId,
    pub gru: GruParams,
    pub d: usize,
}

impl AnswerParams {
    /// Parameters for memory width `2d`.
    pub fn new<R: Rng>(params: &mut ParamSet, d: usize, rng: &mut R) -> Result<Self> {
        let s = 2 * d;
        Ok(AnswerParams {
            w4: params.insert("ans.w4", uniform_fan_in(rng, s, 1))?,
            w5: params.insert("ans.w5", uniform_fan_in(rng, s, s))?,
            w6: params.insert("ans.w6", uniform_fan_in(rng, s, s))?,
            w7: params.insert("ans.w7", uniform_fan_in(rng, 2 * s, s))?,
            gru: GruParams::new(params, "ans.gru", s, s, rng)?,
            d,
        })
    }
}

/// `s0 = Hq alpha`, `alpha = softmax(w4^T Hq)`.
pub fn initial_state(g: &mut Graph, p: &AnswerParams, hq: Var) -> Result<Var> {
    let (rows, _) = g.shape(hq);
    if rows != 2 * p.d {
        return Err(dim_err!("question encoding has {rows} rows, expected {}", 2 * p.d));
    }
    let w4 = g.param(p.w4);
    let w4_t = g.transpose(w4);
    let scores = g.matmul(w4_t, hq)?;
    let alpha = g.softmax(scores, Axis::Cols)?;
    let alpha_t = g.transpose(alpha);
    g.matmul(hq, alpha_t)
}

/// `softmax(s^T W M)` as a `1 x n` row.
fn bilinear(g: &mut Graph, s: Var, w: Var, m: Var) -> Result<Var> {
    let s_t = g.transpose(s);
    let sw = g.matmul(s_t, w)?;
    let scores = g.matmul(sw, m)?;
    g.softmax(scores, Axis::Cols)
}

/// Begin and end distributions of one step from state `s`.
pub fn step_prediction(g: &mut Graph, p: &AnswerParams, s: Var, m: Var) -> Result<(Var, Var)> {
    let w6 = g.param(p.w6);
    let w7 = g.param(p.w7);
    let begin = bilinear(g, s, w6, m)?;
    let begin_t = g.transpose(begin);
    let ctx = g.matmul(m, begin_t)?;
    let s_ctx = g.concat_rows(&[s, ctx])?;
    let end = bilinear(g, s_ctx, w7, m)?;
    Ok((begin, end))
}

/// Per-step distributions of a `steps`-step reasoning pass.
pub struct StepOutputs {
    pub states: Vec<Var>,
    pub begin: Vec<Var>,
    pub end: Vec<Var>,
}

pub fn reason_steps(g: &mut Graph, p: &AnswerParams, s0: Var, m: Var, steps: usize) -> Result<StepOutputs> {
    if steps == 0 {
        return Err(Error::Config("the answer module needs at least one step".into()));
    }
    let (rows, _) = g.shape(m);
    if rows != 2 * p.d {
        return Err(dim_err!("memory has {rows} rows, expected {}", 2 * p.d));
    }
    let mut out = StepOutputs {
        states: Vec::with_capacity(steps),
        begin: Vec::with_capacity(steps),
        end: Vec::with_capacity(steps),
    };
    let mut s = s0;
    for t in 0..steps {
        if t > 0 {
            let w5 = g.param(p.w5);
            let beta = bilinear(g, s, w5, m)?;
            let beta_t = g.transpose(beta);
            let x = g.matmul(m, beta_t)?;
            s = p.gru.step(g, s, x)?;
        }
        let (b, e) = step_prediction(g, p, s, m)?;
        out.states.push(s);
        out.begin.push(b);
        out.end.push(e);
    }
    Ok(out)
}

/// Bernoulli(1 - rate) keep decisions for `steps` steps, redrawn until at
/// least one step is kept.
pub fn draw_step_mask<R: Rng>(rng: &mut R, steps: usize, rate: f64) -> Vec<bool> {
    assert!(steps >= 1 && (0.0..1.0).contains(&rate), "steps >= 1 and rate in [0, 1)");
    loop {
        let mask: Vec<bool> = (0..steps).map(|_| rng.random::<f64>() >= rate).collect();
        if mask.iter().any(|&k| k) {
            return mask;
        }
    }
}

/// Mean of the kept distributions. Dropped steps receive no gradient.
pub fn average_kept(g: &mut Graph, dists: &[Var], mask: &[bool]) -> Result<Var> {
    if dists.len() != mask.len() || dists.is_empty() {
        return Err(dim_err!("{} distributions with a mask of {}", dists.len(), mask.len()));
    }
    let kept: Vec<Var> = dists.iter().zip(mask).filter(|(_, &k)| k).map(|(d, _)| *d).collect();
    let mut acc = *kept
        .first()
        .ok_or_else(|| Error::Contract("step mask keeps no step".into()))?;
    for &d in &kept[1..] {
        acc = g.add(acc, d)?;
    }
    Ok(g.scale(acc, 1.0 / kept.len() as f64))
}

/// Averages step distributions; in training mode steps are dropped at
/// `rate` first.
pub fn stochastic_average(g: &mut Graph, dists: &[Var], rate: f64) -> Result<(Var, Vec<bool>)> {
    if dists.is_empty() {
        return Err(Error::Config("the answer module needs at least one step".into()));
    }
    let mask = if g.is_training() && rate > 0.0 {
        draw_step_mask(g.rng(), dists.len(), rate)
    } else {
        vec![true; dists.len()]
    };
    let avg = average_kept(g, dists, &mask)?;
    Ok((avg, mask))
}

/// Full answer-module output for one example.
pub struct AnswerOutput {
    pub steps: StepOutputs,
    pub avg_begin: Var,
    pub avg_end: Var,
    pub begin_mask: Vec<bool>,
    pub end_mask: Vec<bool>,
}

pub struct AnswerSettings {
    pub variant: AnswerVariant,
    pub steps: usize,
    pub prediction_dropout: f64,
    pub mask_mode: MaskMode,
}

pub fn answer_forward(g: &mut Graph, p: &AnswerParams, hq: Var, m: Var, cfg: &AnswerSettings) -> Result<AnswerOutput> {
    let steps = cfg.variant.effective_steps(cfg.steps);
    let s0 = initial_state(g, p, hq)?;
    let outs = reason_steps(g, p, s0, m, steps)?;
    let (avg_begin, avg_end, begin_mask, end_mask) = match cfg.variant {
        AnswerVariant::MemnetFinal => {
            let mut mask = vec![false; steps];
            mask[steps - 1] = true;
            (outs.begin[steps - 1], outs.end[steps - 1], mask.clone(), mask)
        }
        AnswerVariant::MemnetAvg | AnswerVariant::Onestep => {
            let mask = vec![true; steps];
            let b = average_kept(g, &outs.begin, &mask)?;
            let e = average_kept(g, &outs.end, &mask)?;
            (b, e, mask.clone(), mask)
        }
        AnswerVariant::San => {
            let (b, bm) = stochastic_average(g, &outs.begin, cfg.prediction_dropout)?;
            let (e, em) = match cfg.mask_mode {
                MaskMode::Shared => (average_kept(g, &outs.end, &bm)?, bm.clone()),
                MaskMode::Independent => stochastic_average(g, &outs.end, cfg.prediction_dropout)?,
            };
            (b, e, bm, em)
        }
    };
    Ok(AnswerOutput {
        steps: outs,
        avg_begin,
        avg_end,
        begin_mask,
        end_mask,
    })
}

/// Single-step predictor written without the step loop or averaging: the
/// reference that a one-step, dropout-free answer module must reproduce.
pub fn standard_one_step(g: &mut Graph, p: &AnswerParams, hq: Var, m: Var) -> Result<(Var, Var)> {
    let s0 = initial_state(g, p, hq)?;
    step_prediction(g, p, s0, m)
}

/// `-ln(P_begin[start] + eps) - ln(P_end[end] + eps)`.
pub const LOSS_EPS: f64 = 1e-12;

pub fn span_loss(g: &mut Graph, begin: Var, end: Var, gold_start: usize, gold_end: usize) -> Result<Var> {
    let n = g.shape(begin).1;
    if gold_start >= n || gold_end >= n || g.shape(end).1 != n {
        return Err(Error::Data(format!(
            "gold span ({gold_start}, {gold_end}) outside a passage of {n} tokens"
        )));
    }
    let pb = g.select(begin, gold_start)?;
    let pe = g.select(end, gold_end)?;
    let lb = g.ln_eps(pb, LOSS_EPS);
    let le = g.ln_eps(pe, LOSS_EPS);
    let s = g.add(lb, le)?;
    Ok(g.scale(s, -1.0))
}

/// Objective for one forward pass according to `mode`.
pub fn answer_loss(g: &mut Graph, out: &AnswerOutput, gold: (usize, usize), mode: LossMode) -> Result<Var> {
    match mode {
        LossMode::AverageNll => span_loss(g, out.avg_begin, out.avg_end, gold.0, gold.1),
        LossMode::PerStepNll => {
            let mut terms = Vec::new();
            for (t, (&b, &e)) in out.steps.begin.iter().zip(&out.steps.end).enumerate() {
                if out.begin_mask[t] {
                    let n = g.shape(b).1;
                    if gold.0 >= n {
                        return Err(Error::Data(format!("gold start {} outside {n} tokens", gold.0)));
                    }
                    let p = g.select(b, gold.0)?;
                    terms.push(g.ln_eps(p, LOSS_EPS));
                }
                if out.end_mask[t] {
                    let n = g.shape(e).1;
                    if gold.1 >= n {
                        return Err(Error::Data(format!("gold end {} outside {n} tokens", gold.1)));
                    }
                    let p = g.select(e, gold.1)?;
                    terms.push(g.ln_eps(p, LOSS_EPS));
                }
            }
            let nb = out.begin_mask.iter().filter(|&&k| k).count() as f64;
            let ne = out.end_mask.iter().filter(|&&k| k).count() as f64;
            // begin and end terms each averaged over their own kept steps
            let mut acc_b = None;
            let mut acc_e = None;
            let mut it = terms.into_iter();
            for (t, _) in out.steps.begin.iter().enumerate() {
                if out.begin_mask[t] {
                    let v = it.next().expect("begin term");
                    acc_b = Some(match acc_b {
                        None => v,
                        Some(a) => g.add(a, v)?,
                    });
                }
                if out.end_mask[t] {
                    let v = it.next().expect("end term");
                    acc_e = Some(match acc_e {
                        None => v,
                        Some(a) => g.add(a, v)?,
                    });
                }
            }
            let b = g.scale(acc_b.expect("kept begin step"), -1.0 / nb);
            let e = g.scale(acc_e.expect("kept end step"), -1.0 / ne);
            g.add(b, e)
        }
    }
}

/// A decoded answer span, inclusive on both ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedSpan {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

fn legal_spans(begin: &[f64], end: &[f64], max_span_len: usize) -> Vec<DecodedSpan> {
    let n = begin.len().min(end.len());
    let mut out = Vec::new();
    for i in 0..n {
        for j in i..n.min(i + max_span_len.max(1)) {
            out.push(DecodedSpan {
                start: i,
                end: j,
                score: begin[i] * end[j],
            });
        }
    }
    out
}

/// Highest `begin[i] * end[j]` over `i <= j < i + max_span_len`; ties go to
/// the smaller `i`, then the smaller `j`.
pub fn decode_span(begin: &[f64], end: &[f64], max_span_len: usize) -> DecodedSpan {
    let mut best = DecodedSpan {
        start: 0,
        end: 0,
        score: f64::NEG_INFINITY,
    };
    for s in legal_spans(begin, end, max_span_len) {
        if s.score > best.score {
            best = s;
        }
    }
    best
}

/// Top `k` legal spans by score, with the same tie-break as
/// [`decode_span`]. Returns every legal span when there are fewer than `k`.
pub fn kbest_spans(begin: &[f64], end: &[f64], k: usize, max_span_len: usize) -> Vec<DecodedSpan> {
    let mut all = legal_spans(begin, end, max_span_len);
    all.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.start.cmp(&b.start))
            .then(a.end.cmp(&b.end))
    });
    all.truncate(k);
    all
}

/// Row vector node as a plain distribution.
pub fn distribution(g: &Graph, v: Var) -> Vec<f64> {
    g.value(v).to_vec()
}

/// Convenience for tests and callers holding plain tensors.
pub fn as_row(t: &Tensor) -> Vec<f64> {
    t.data().to_vec()
}

//! Finite-difference sweeps shared by the gradient tests and the
//! acceptance run. Each entry is `(name, worst relative error)`.

use rand::Rng;

use san::answer::{average_kept, initial_state, reason_steps, span_loss, AnswerParams};
use san::encoder::{EncoderDims, EncoderParams};
use san::engine::{Axis, Graph, ParamSet, Tensor, Var};
use san::layers::{attention_transform, BiLstmParams, FfnParams, GruParams, MaxoutParams};
use san::lexicon::LexiconInput;

use super::*;

/// Values bounded away from zero so kinks (relu, max) are never straddled.
fn away_from_zero(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = r.random_range(0.05..1.0);
            if r.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

pub fn op_sweep(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let (p, q, k) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..5));
    let a = random_tensor(&mut r, p, q);
    let b = random_tensor(&mut r, q, k);
    let c = random_tensor(&mut r, p, q);
    let bias = random_tensor(&mut r, p, 1);
    let nz = away_from_zero(&mut r, p, q);
    let pos = Tensor::matrix(p, q, (0..p * q).map(|_| r.random_range(0.1..2.0)).collect()).unwrap();
    let v7 = random_tensor(&mut r, 1, 7);
    let wide = random_tensor(&mut r, 4, 5);
    let mut out: Vec<(&'static str, f64)> = Vec::new();
    macro_rules! check {
        ($name:expr, [$($t:expr),*], |$g:ident, $v:ident| $body:expr) => {
            out.push(($name, check_inputs(&[$($t.clone()),*], |$g: &mut Graph, $v: &[Var]| {
                let o = $body;
                probe($g, o)
            })));
        };
    }
    check!("matmul", [a, b], |g, v| g.matmul(v[0], v[1]).unwrap());
    out.push((
        "matmul_sum",
        check_inputs(&[a.clone(), b.clone()], |g, v| {
            let m = g.matmul(v[0], v[1]).unwrap();
            g.sum(m)
        }),
    ));
    check!("transpose", [a], |g, v| g.transpose(v[0]));
    check!("add", [a, c], |g, v| g.add(v[0], v[1]).unwrap());
    check!("sub", [a, c], |g, v| g.sub(v[0], v[1]).unwrap());
    check!("add_bias", [a, bias], |g, v| g.add_bias(v[0], v[1]).unwrap());
    check!("mul", [a, c], |g, v| g.mul(v[0], v[1]).unwrap());
    check!("affine", [a], |g, v| g.affine(v[0], -1.7, 0.3));
    check!("scale", [a], |g, v| g.scale(v[0], 2.5));
    check!("maximum", [nz, a], |g, v| g.maximum(v[0], v[1]).unwrap());
    check!("relu", [nz], |g, v| g.relu(v[0]));
    check!("tanh", [a], |g, v| g.tanh(v[0]));
    check!("sigmoid", [a], |g, v| g.sigmoid(v[0]));
    check!("ln_eps", [pos], |g, v| g.ln_eps(v[0], 1e-12));
    out.push(("sum", check_inputs(&[a.clone()], |g, v| g.sum(v[0]))));
    out.push(("mean", check_inputs(&[a.clone()], |g, v| g.mean(v[0]))));
    out.push(("select", check_inputs(&[wide.clone()], |g, v| g.select(v[0], 7).unwrap())));
    check!("slice_rows", [wide], |g, v| g.slice_rows(v[0], 1, 2).unwrap());
    check!("slice_cols", [wide], |g, v| g.slice_cols(v[0], 2, 3).unwrap());
    check!("column", [wide], |g, v| g.column(v[0], 3).unwrap());
    check!("concat_rows", [a, c], |g, v| g.concat_rows(&[v[0], v[1]]).unwrap());
    check!("concat_cols", [a, c], |g, v| g.concat_cols(&[v[0], v[1]]).unwrap());
    check!("softmax_cols", [v7], |g, v| g.softmax(v[0], Axis::Cols).unwrap());
    check!("softmax_rows", [wide], |g, v| g.softmax(v[0], Axis::Rows).unwrap());
    check!("masked_softmax", [wide], |g, v| {
        let keep: Vec<bool> = (0..20).map(|i| i % 5 != i / 5).collect();
        g.masked_softmax(v[0], Axis::Rows, &keep).unwrap()
    });
    check!("dropout", [wide], |g, v| g.dropout(v[0], 0.4).unwrap());

    let mut params = ParamSet::new();
    let table = params.insert("table", random_tensor(&mut r, 5, 3)).unwrap();
    out.push((
        "embedding",
        check_params(&params, |g| {
            let e = g.embedding(table, &[4, 1, 1, 0]).unwrap();
            probe(g, e)
        }),
    ));
    out
}

pub fn layer_sweep(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let mut out = Vec::new();

    let mut p = ParamSet::new();
    let ffn = FfnParams::new(&mut p, "ffn", 3, 4, 2, &mut r).unwrap();
    // non-zero biases so relu kinks are unlikely to sit at the probe point
    for id in [ffn.b1, ffn.b2] {
        let n = p.get(id).numel();
        p.get_mut(id).data_mut().copy_from_slice(&(0..n).map(|i| 0.1 + 0.07 * i as f64).collect::<Vec<_>>());
    }
    let x = random_tensor(&mut r, 3, 4);
    out.push(("ffn", check_params(&p, |g| {
        let xv = g.constant(&x);
        let o = ffn.forward(g, xv).unwrap();
        probe(g, o)
    })));
    out.push(("ffn_input", check_inputs_with(&p, &[x.clone()], |g, v| {
        let o = ffn.forward(g, v[0]).unwrap();
        probe(g, o)
    })));

    let mut p = ParamSet::new();
    let lstm = BiLstmParams::new(&mut p, "lstm", 3, 2, &mut r).unwrap();
    let x = random_tensor(&mut r, 3, 3);
    out.push(("bilstm", check_params(&p, |g| {
        let xv = g.input(&x);
        let o = lstm.forward(g, xv).unwrap();
        probe(g, o)
    })));
    out.push(("bilstm_input", check_inputs_with(&p, &[x.clone()], |g, v| {
        let o = lstm.forward(g, v[0]).unwrap();
        probe(g, o)
    })));

    let mut p = ParamSet::new();
    let mx = MaxoutParams::new(&mut p, "mx", 4, 3, 2, &mut r).unwrap();
    let x = random_tensor(&mut r, 4, 3);
    out.push(("maxout", check_params(&p, |g| {
        let xv = g.constant(&x);
        let o = mx.forward(g, xv).unwrap();
        probe(g, o)
    })));

    let mut p = ParamSet::new();
    let gru = GruParams::new(&mut p, "gru", 4, 4, &mut r).unwrap();
    let s0 = random_tensor(&mut r, 4, 1);
    let xs: Vec<Tensor> = (0..3).map(|_| random_tensor(&mut r, 4, 1)).collect();
    let chain = |g: &mut Graph, s: Var| {
        let mut s = s;
        for x in &xs {
            let xv = g.constant(x);
            s = gru.step(g, s, xv).unwrap();
        }
        probe(g, s)
    };
    out.push(("gru_3_steps", check_params(&p, |g| {
        let s = g.constant(&s0);
        chain(g, s)
    })));
    out.push(("gru_state", check_inputs_with(&p, &[s0.clone()], |g, v| chain(g, v[0]))));

    let w = random_tensor(&mut r, 3, 4);
    let x = away_from_zero(&mut r, 4, 3);
    out.push(("attention_transform", check_inputs(&[w, x], |g, v| {
        let o = attention_transform(g, v[0], v[1]).unwrap();
        probe(g, o)
    })));
    out
}

fn encoder_params(r: &mut ChaCha8Rng, d: usize, q_in: usize, p_in: usize) -> (ParamSet, EncoderParams) {
    let mut p = ParamSet::new();
    let dims = EncoderDims {
        question_in: q_in,
        passage_in: p_in,
        d,
        ffn_hidden: d,
        attn_dim: d,
        maxout_pieces: 2,
        cove_dim: 0,
    };
    let enc = EncoderParams::new(&mut p, &dims, r).unwrap();
    (p, enc)
}

/// Contextual encoding end to end (m = n = 3) and the memory layers
/// composed (n = 4).
pub fn encoder_sweep(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let (p, enc) = encoder_params(&mut r, 2, 3, 5);
    let eq = random_tensor(&mut r, 2, 3);
    let ep = random_tensor(&mut r, 2, 3);
    let ctx = check_params(&p, |g| {
        let (q, pp) = (g.constant(&eq), g.constant(&ep));
        let (hq, hp) = enc.contextual_encode(g, q, pp, None, None, 0.0).unwrap();
        let both = g.concat_cols(&[hq, hp]).unwrap();
        probe(g, both)
    });
    let qlex = random_tensor(&mut r, 3, 3);
    let plex = random_tensor(&mut r, 5, 4);
    let memory = check_params(&p, |g| {
        let (q, pp) = (g.constant(&qlex), g.constant(&plex));
        let (eq, ep) = enc.lexicon_encode(g, q, pp).unwrap();
        let (hq, hp) = enc.contextual_encode(g, eq, ep, None, None, 0.0).unwrap();
        let c = enc.cross_attention(g, hq, hp, 0.0).unwrap();
        let up = enc.gather_passage(g, hp, hq, c.out).unwrap();
        let sa = enc.self_attention(g, up, 0.0).unwrap();
        let m = enc.build_memory(g, up, sa.up_hat, 0.0).unwrap();
        probe(g, m)
    });
    vec![("contextual_encode", ctx), ("memory_eqs", memory)]
}

/// Answer module: loss through a fixed-mask average of three steps.
pub fn answer_sweep(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let d = 2;
    let mut p = ParamSet::new();
    let ans = AnswerParams::new(&mut p, d, &mut r).unwrap();
    let hq = random_tensor(&mut r, 2 * d, 3);
    let m = random_tensor(&mut r, 2 * d, 4);
    let mask = [true, false, true];
    let err = check_params(&p, |g| {
        let (hqv, mv) = (g.constant(&hq), g.constant(&m));
        let s0 = initial_state(g, &ans, hqv).unwrap();
        let steps = reason_steps(g, &ans, s0, mv, 3).unwrap();
        let b = average_kept(g, &steps.begin, &mask).unwrap();
        let e = average_kept(g, &steps.end, &mask).unwrap();
        span_loss(g, b, e, 1, 2).unwrap()
    });
    let input_err = check_inputs_with(&p, &[hq.clone(), m.clone()], |g, v| {
        let s0 = initial_state(g, &ans, v[0]).unwrap();
        let steps = reason_steps(g, &ans, s0, v[1], 3).unwrap();
        let b = average_kept(g, &steps.begin, &mask).unwrap();
        let e = average_kept(g, &steps.end, &mask).unwrap();
        span_loss(g, b, e, 1, 2).unwrap()
    });
    vec![("answer_params", err), ("answer_inputs", input_err)]
}

/// Every parameter of the full network on the 6-token toy example, with
/// hidden and prediction dropout active (masks fixed by the graph seed).
pub fn full_model_check() -> f64 {
    let ex = toy_example();
    let model = model_for(tiny_config(), std::slice::from_ref(&ex), 3);
    let input = model.input(&ex, None).unwrap();
    let gold = (ex.answer_start, ex.answer_end);
    check_params(&model.params, |g| model.loss(g, &input, gold).unwrap())
}

pub fn lexicon_input(ex: &san::data::AnnotatedExample, vocab: &san::data::Vocab) -> LexiconInput {
    LexiconInput::from_example(ex, vocab).unwrap()
}

//! Test oracles written independently of the library: finite differences,
//! naive loops, brute-force enumeration and small model builders.
#![allow(dead_code)]

pub mod suite;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use san::data::{AnnotatedExample, AnnotatedToken, QType, Vocab};
use san::engine::{Graph, Mode, ParamSet, Tensor, Var};
use san::model::{ModelConfig, San};

pub const FD_EPS: f64 = 1e-5;

/// Relative error with the denominator floored at 1e-3, so that entries
/// whose true derivative is ~0 are judged on absolute error instead of
/// amplifying round-off.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Fixed pseudo-random weights so `sum(w * out)` has no accidental symmetry.
pub fn probe_weights(len: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed ^ 0xABCD);
    (0..len).map(|_| r.random_range(0.5..1.5) * if r.random_bool(0.5) { 1.0 } else { -1.0 }).collect()
}

/// Reduces any output to a scalar via fixed random weights.
pub fn probe(g: &mut Graph, out: Var) -> Var {
    let (r, c) = g.shape(out);
    let w = g.constant_raw(r, c, probe_weights(r * c, (r * 31 + c) as u64)).unwrap();
    let prod = g.mul(out, w).unwrap();
    g.sum(prod)
}

/// Largest elementwise relative error between analytic input gradients and
/// central differences, for a scalar function of `inputs`.
pub fn check_inputs<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    check_inputs_with(&ParamSet::new(), inputs, build)
}

/// Input-gradient check with parameters held fixed.
pub fn check_inputs_with<F>(params: &ParamSet, inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |ts: &[Tensor]| {
        let mut g = Graph::new(params, Mode::Train, 17);
        let vars: Vec<Var> = ts.iter().map(|t| g.input(t)).collect();
        let out = build(&mut g, &vars);
        g.scalar(out)
    };
    let mut g = Graph::new(params, Mode::Train, 17);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t)).collect();
    let out = build(&mut g, &vars);
    let (_, analytic) = g.backward_with_inputs(out, &vars).unwrap();
    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        for k in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += FD_EPS;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= FD_EPS;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(analytic[i][k], numeric));
        }
    }
    worst
}

/// Same check over every (non-frozen) parameter scalar of `params`.
pub fn check_params<F>(params: &ParamSet, build: F) -> f64
where
    F: Fn(&mut Graph) -> Var,
{
    let eval = |p: &ParamSet| {
        let mut g = Graph::new(p, Mode::Train, 17);
        let out = build(&mut g);
        g.scalar(out)
    };
    let mut g = Graph::new(params, Mode::Train, 17);
    let out = build(&mut g);
    let grads = g.backward(out).unwrap();
    let mut work = params.clone();
    let mut worst = 0.0f64;
    for id in params.ids() {
        let analytic = grads.get(id).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; params.get(id).numel()]);
        for k in 0..params.get(id).numel() {
            let orig = work.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + FD_EPS;
            let fp = eval(&work);
            work.get_mut(id).data_mut()[k] = orig - FD_EPS;
            let fm = eval(&work);
            work.get_mut(id).data_mut()[k] = orig;
            let numeric = (fp - fm) / (2.0 * FD_EPS);
            let e = rel_err(analytic[k], numeric);
            if e > worst {
                worst = e;
            }
        }
    }
    worst
}

/// Row-major naive matrix product.
pub fn naive_matmul(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * r];
    for i in 0..p {
        for j in 0..r {
            let mut s = 0.0;
            for k in 0..q {
                s += a[i * q + k] * b[k * r + j];
            }
            out[i * r + j] = s;
        }
    }
    out
}

pub fn naive_softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

pub fn col(t: &[f64], rows: usize, cols: usize, j: usize) -> Vec<f64> {
    (0..rows).map(|i| t[i * cols + j]).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `relu(W x)` for one column.
pub fn naive_transform(w: &[f64], k: usize, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..k).map(|i| dot(&w[i * n..(i + 1) * n], x).max(0.0)).collect()
}

pub fn tok(text: &str) -> AnnotatedToken {
    AnnotatedToken::plain(text)
}

pub fn example(id: &str, passage: &[&str], question: &[&str], span: (usize, usize)) -> AnnotatedExample {
    let passage: Vec<AnnotatedToken> = passage.iter().map(|t| tok(t)).collect();
    let text = passage[span.0..=span.1].iter().map(|t| t.text.clone()).collect::<Vec<_>>().join(" ");
    AnnotatedExample {
        id: id.into(),
        context: String::new(),
        passage,
        question: question.iter().map(|t| tok(t)).collect(),
        answer_start: span.0,
        answer_end: span.1,
        answer_texts: vec![text],
        char_offsets: vec![],
        qtype: QType::classify(question.iter().copied()),
    }
}

/// Very small dimensions for gradient checks.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        word_dim: 4,
        pos_dim: 2,
        ner_dim: 2,
        align_dim: 3,
        d: 2,
        steps: 3,
        ..ModelConfig::default()
    }
}

/// Small dimensions for property runs.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        word_dim: 8,
        pos_dim: 3,
        ner_dim: 3,
        align_dim: 5,
        d: 4,
        steps: 5,
        ..ModelConfig::default()
    }
}

pub fn toy_example() -> AnnotatedExample {
    example(
        "toy",
        &["the", "cat", "sat", "on", "red", "mat"],
        &["where", "did", "the", "cat", "sit"],
        (4, 5),
    )
}

pub fn model_for(cfg: ModelConfig, examples: &[AnnotatedExample], seed: u64) -> San {
    San::new(cfg, Vocab::build(examples), seed).unwrap()
}

/// Scripted baseline: the first passage position starting a question
/// bigram, extended while consecutive tokens keep matching question
/// bigrams; otherwise the first passage token found in the question.
pub fn bigram_baseline(ex: &AnnotatedExample) -> (usize, usize) {
    let q: Vec<&str> = ex.question.iter().map(|t| t.text.as_str()).collect();
    let p: Vec<&str> = ex.passage.iter().map(|t| t.text.as_str()).collect();
    let is_bigram = |a: &str, b: &str| q.windows(2).any(|w| w[0] == a && w[1] == b);
    for i in 0..p.len().saturating_sub(1) {
        if is_bigram(p[i], p[i + 1]) {
            let mut j = i + 1;
            while j + 1 < p.len() && is_bigram(p[j], p[j + 1]) {
                j += 1;
            }
            return (i, j);
        }
    }
    let i = p.iter().position(|t| q.contains(t)).unwrap_or(0);
    (i, i)
}

/// Every legal span sorted by score descending, then start, then end.
pub fn brute_force_spans(begin: &[f64], end: &[f64], max_len: usize) -> Vec<(usize, usize, f64)> {
    let mut all = Vec::new();
    for i in 0..begin.len() {
        for j in 0..end.len() {
            if i <= j && j - i < max_len {
                all.push((i, j, begin[i] * end[j]));
            }
        }
    }
    all.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    all
}

pub fn random_distribution(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| r.random_range(0.01..1.0)).collect();
    let z: f64 = raw.iter().sum();
    raw.iter().map(|v| v / z).collect()
}

/// Independent SQuAD-style scoring used to cross-check the evaluator.
pub mod reference_metrics {
    fn norm(s: &str) -> Vec<String> {
        let mut cleaned = String::new();
        for ch in s.chars() {
            let c = ch.to_lowercase().collect::<String>();
            if c.len() == 1 && c.as_bytes()[0].is_ascii_punctuation() {
                continue;
            }
            cleaned.push_str(&c);
        }
        cleaned
            .split(|c: char| c.is_whitespace())
            .filter(|w| !w.is_empty() && *w != "a" && *w != "an" && *w != "the")
            .map(String::from)
            .collect()
    }

    pub fn em(pred: &str, golds: &[&str]) -> f64 {
        let p = norm(pred);
        if golds.iter().any(|g| norm(g) == p) {
            1.0
        } else {
            0.0
        }
    }

    pub fn f1(pred: &str, golds: &[&str]) -> f64 {
        let mut best = 0.0f64;
        for g in golds {
            let p = norm(pred);
            let mut gt = norm(g);
            let score = if p.is_empty() || gt.is_empty() {
                if p.is_empty() && gt.is_empty() {
                    1.0
                } else {
                    0.0
                }
            } else {
                let mut common = 0usize;
                for t in &p {
                    if let Some(pos) = gt.iter().position(|x| x == t) {
                        gt.remove(pos);
                        common += 1;
                    }
                }
                if common == 0 {
                    0.0
                } else {
                    let pr = common as f64 / p.len() as f64;
                    let rc = common as f64 / norm(g).len() as f64;
                    2.0 * pr * rc / (pr + rc)
                }
            };
            best = best.max(score);
        }
        best
    }
}

/// The 50 handcrafted `(prediction, golds)` metric cases.
pub fn metric_cases() -> Vec<(String, Vec<String>)> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/metric_cases.json");
    let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    raw.as_array()
        .unwrap()
        .iter()
        .map(|c| {
            let golds = c["golds"].as_array().unwrap().iter().map(|g| g.as_str().unwrap().to_string()).collect();
            (c["pred"].as_str().unwrap().to_string(), golds)
        })
        .collect()
}

/// Small passages (n <= 6) with one or two gold strings each.
pub fn oracle_examples() -> Vec<AnnotatedExample> {
    let mut exs = vec![
        example("o1", &["the", "cat", "sat", "on", "the", "mat"], &["where", "cat"], (4, 5)),
        example("o2", &["march", "2009", "was", "cold"], &["when"], (0, 1)),
        example("o3", &["x"], &["what", "x"], (0, 0)),
        example("o4", &["a", "b", "c", "d", "e"], &["which", "c"], (1, 3)),
        example("o5", &["red", "blue", "green", "red", "blue", "green"], &["who", "blue"], (3, 4)),
    ];
    exs[1].answer_texts.push("March".into());
    exs[3].answer_texts.push("d e".into());
    exs
}

/// K-best oracle by exhaustive span enumeration and the reference metrics.
pub fn brute_force_oracle(
    dists: &[(Vec<f64>, Vec<f64>)],
    examples: &[AnnotatedExample],
    k_max: usize,
    max_len: usize,
) -> Vec<(f64, f64)> {
    (1..=k_max)
        .map(|k| {
            let (mut em, mut f1) = (0.0, 0.0);
            for ((b, e), ex) in dists.iter().zip(examples) {
                let golds: Vec<&str> = ex.answer_texts.iter().map(String::as_str).collect();
                let top = brute_force_spans(b, e, max_len);
                let (mut be, mut bf) = (0.0f64, 0.0f64);
                for &(i, j, _) in top.iter().take(k) {
                    let text = ex.passage[i..=j].iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ");
                    be = be.max(reference_metrics::em(&text, &golds));
                    bf = bf.max(reference_metrics::f1(&text, &golds));
                }
                em += be;
                f1 += bf;
            }
            (100.0 * em / examples.len() as f64, 100.0 * f1 / examples.len() as f64)
        })
        .collect()
}

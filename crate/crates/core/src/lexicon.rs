//! Word-level passage and question features.
//!
//! A passage token becomes `[word; pos; ner; exact_match(3); align]`
//! (600 values at the default sizes 300/9/8/3/280); a question token is its
//! word embedding alone.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use crate::data::tags::{NER_TABLE_ROWS, POS_TABLE_ROWS};
use crate::data::{AnnotatedExample, AnnotatedToken, Vocab, PAD, UNK, UNK_TOKEN};
use crate::engine::{Axis, Graph, ParamId, ParamSet, Tensor, Var};
use crate::error::{dim_err, Error, Result};
use crate::layers::{attention_transform, gaussian, uniform_fan_in};

/// Number of exact-match flags per passage token.
pub const EXACT_MATCH_DIM: usize = 3;

#[derive(Clone, Debug)]
pub struct EmbeddingSet {
    pub word_table: ParamId,
    pub pos_table: ParamId,
    pub ner_table: ParamId,
    pub align_w0: ParamId,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub ner_dim: usize,
    pub align_dim: usize,
}

impl EmbeddingSet {
    /// Gaussian(0, 0.1) tables with an all-zero, frozen row 0.
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        vocab_size: usize,
        word_dim: usize,
        pos_dim: usize,
        ner_dim: usize,
        align_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let table = |params: &mut ParamSet, name: &str, rows: usize, dim: usize, rng: &mut R| {
            let mut t = gaussian(rng, &[rows, dim], 0.1);
            t.data_mut()[..dim].fill(0.0);
            let id = params.insert(name, t)?;
            params.freeze_row(id, PAD);
            Ok::<_, Error>(id)
        };
        Ok(EmbeddingSet {
            word_table: table(params, "emb.word", vocab_size, word_dim, rng)?,
            pos_table: table(params, "emb.pos", POS_TABLE_ROWS, pos_dim, rng)?,
            ner_table: table(params, "emb.ner", NER_TABLE_ROWS, ner_dim, rng)?,
            align_w0: params.insert("emb.align_w0", uniform_fan_in(rng, align_dim, word_dim))?,
            word_dim,
            pos_dim,
            ner_dim,
            align_dim,
        })
    }

    pub fn passage_dim(&self) -> usize {
        self.word_dim + self.pos_dim + self.ner_dim + EXACT_MATCH_DIM + self.align_dim
    }

    pub fn question_dim(&self) -> usize {
        self.word_dim
    }

    /// Initializes rows from a text file (`token v1 ... v_dim` per line) and
    /// freezes every row it sets. Returns the number of rows loaded.
    pub fn load_pretrained(&self, params: &mut ParamSet, vocab: &Vocab, path: &Path) -> Result<usize> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let dim = self.word_dim;
        let mut loaded = 0;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let values = values.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            if values.len() != dim {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected {dim} values, found {}", values.len()),
                });
            }
            let row = vocab.index(token);
            if row == PAD || (row == UNK && token != UNK_TOKEN) {
                continue;
            }
            params.get_mut(self.word_table).data_mut()[row * dim..(row + 1) * dim].copy_from_slice(&values);
            params.freeze_row(self.word_table, row);
            loaded += 1;
        }
        Ok(loaded)
    }
}

/// Original-form, lowercase and lemma match of each passage token against
/// any question token, as a `3 x n` matrix of 0/1.
pub fn exact_match_features(passage: &[AnnotatedToken], question: &[AnnotatedToken]) -> Tensor {
    let original: HashSet<&str> = question.iter().map(|t| t.text.as_str()).collect();
    let lower: HashSet<String> = question.iter().map(|t| t.text.to_lowercase()).collect();
    let lemma: HashSet<&str> = question.iter().map(|t| t.lemma.as_str()).collect();
    let n = passage.len();
    let mut data = vec![0.0; EXACT_MATCH_DIM * n];
    for (j, t) in passage.iter().enumerate() {
        let flags = [
            original.contains(t.text.as_str()),
            lower.contains(&t.text.to_lowercase()),
            lemma.contains(t.lemma.as_str()),
        ];
        for (r, f) in flags.iter().enumerate() {
            data[r * n + j] = if *f { 1.0 } else { 0.0 };
        }
    }
    Tensor::matrix(EXACT_MATCH_DIM, n, data).expect("non-empty passage")
}

/// Output of [`align_features`]: the features and the alignment weights
/// (`m x n`, column `i` is the distribution of passage token `i` over
/// question tokens).
pub struct Alignment {
    pub features: Var,
    pub gamma: Var,
}

/// Soft alignment: for passage token `i`,
/// `sum_j gamma[j, i] * g(q_j)` with `gamma[., i] = softmax_j(g(p_i) . g(q_j))`
/// and `g(x) = ReLU(W0 x)`.
pub fn align_features(g: &mut Graph, passage_emb: Var, question_emb: Var, align_w0: Var) -> Result<Alignment> {
    let gp = attention_transform(g, align_w0, passage_emb)?;
    let gq = attention_transform(g, align_w0, question_emb)?;
    let gq_t = g.transpose(gq);
    let scores = g.matmul(gq_t, gp)?;
    let gamma = g.softmax(scores, Axis::Rows)?;
    let features = g.matmul(gq, gamma)?;
    Ok(Alignment { features, gamma })
}

/// Lexicon vectors of both sequences.
pub struct LexiconVectors {
    /// `passage_dim x n`.
    pub passage: Var,
    /// `word_dim x m`.
    pub question: Var,
    pub passage_word: Var,
    pub gamma: Var,
}

/// Token ids and features of one example, unpadded.
#[derive(Clone, Debug, PartialEq)]
pub struct LexiconInput {
    pub passage_ids: Vec<usize>,
    pub question_ids: Vec<usize>,
    pub passage_pos: Vec<usize>,
    pub passage_ner: Vec<usize>,
    /// `3 x n` exact-match flags.
    pub exact_match: Tensor,
}

impl LexiconInput {
    pub fn from_example(example: &AnnotatedExample, vocab: &Vocab) -> Result<Self> {
        if example.passage.is_empty() || example.question.is_empty() {
            return Err(dim_err!("example {} has an empty sequence", example.id));
        }
        Ok(LexiconInput {
            passage_ids: example.passage.iter().map(|t| vocab.index(&t.text)).collect(),
            question_ids: example.question.iter().map(|t| vocab.index(&t.text)).collect(),
            passage_pos: example.passage.iter().map(|t| t.pos_id).collect(),
            passage_ner: example.passage.iter().map(|t| t.ner_id).collect(),
            exact_match: exact_match_features(&example.passage, &example.question),
        })
    }

    pub fn passage_len(&self) -> usize {
        self.passage_ids.len()
    }
}

pub fn build_lexicon_vectors(g: &mut Graph, input: &LexiconInput, emb: &EmbeddingSet) -> Result<LexiconVectors> {
    let n = input.passage_ids.len();
    if n == 0 || input.question_ids.is_empty() {
        return Err(dim_err!("empty passage or question"));
    }
    if input.passage_pos.len() != n || input.passage_ner.len() != n || input.exact_match.dims2() != (EXACT_MATCH_DIM, n) {
        return Err(dim_err!("passage features disagree with a passage of {n} tokens"));
    }
    let p_word = g.embedding(emb.word_table, &input.passage_ids)?;
    let q_word = g.embedding(emb.word_table, &input.question_ids)?;
    let p_pos = g.embedding(emb.pos_table, &input.passage_pos)?;
    let p_ner = g.embedding(emb.ner_table, &input.passage_ner)?;
    let em = g.constant(&input.exact_match);
    let w0 = g.param(emb.align_w0);
    let align = align_features(g, p_word, q_word, w0)?;
    let passage = g.concat_rows(&[p_word, p_pos, p_ner, em, align.features])?;
    Ok(LexiconVectors {
        passage,
        question: q_word,
        passage_word: p_word,
        gamma: align.gamma,
    })
}

//! The full network: lexicon features, encoder stack and answer module
//! behind one parameter set.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::answer::{
    answer_forward, answer_loss, decode_span, AnswerOutput, AnswerParams, AnswerSettings, AnswerVariant, DecodedSpan,
    LossMode, MaskMode,
};
use crate::data::{AnnotatedExample, Batch, Vocab};
use crate::encoder::{EncoderDims, EncoderParams, WorkingMemory};
use crate::engine::checkpoint::{load_params, load_tensors, save_params};
use crate::engine::{Graph, Mode, ParamSet, Tensor, Var};
use crate::error::{dim_err, Error, Result};
use crate::lexicon::{build_lexicon_vectors, EmbeddingSet, LexiconInput, EXACT_MATCH_DIM};

/// Architecture and regularization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub pos_dim: usize,
    pub ner_dim: usize,
    pub align_dim: usize,
    /// Hidden size per LSTM direction; contextual encodings have `2d` rows.
    pub d: usize,
    /// Reasoning steps `T`.
    pub steps: usize,
    pub hidden_dropout: f64,
    pub prediction_dropout: f64,
    pub maxout_pieces: usize,
    pub max_span_len: usize,
    /// Rows of the optional precomputed CoVe stream; 0 disables it.
    pub cove_dim: usize,
    pub variant: AnswerVariant,
    pub mask_mode: MaskMode,
    pub loss: LossMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 300,
            pos_dim: 9,
            ner_dim: 8,
            align_dim: 280,
            d: 128,
            steps: 5,
            hidden_dropout: 0.4,
            prediction_dropout: 0.4,
            maxout_pieces: 2,
            max_span_len: 15,
            cove_dim: 0,
            variant: AnswerVariant::San,
            mask_mode: MaskMode::Shared,
            loss: LossMode::AverageNll,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("word_dim", self.word_dim),
            ("pos_dim", self.pos_dim),
            ("ner_dim", self.ner_dim),
            ("align_dim", self.align_dim),
            ("d", self.d),
            ("steps", self.steps),
            ("max_span_len", self.max_span_len),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{k} must be positive")));
            }
        }
        if self.maxout_pieces < 2 {
            return Err(Error::Config("model.maxout_pieces must be at least 2".into()));
        }
        for (k, v) in [
            ("hidden_dropout", self.hidden_dropout),
            ("prediction_dropout", self.prediction_dropout),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("model.{k} must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }

    pub fn passage_dim(&self) -> usize {
        self.word_dim + self.pos_dim + self.ner_dim + EXACT_MATCH_DIM + self.align_dim
    }
}

/// Everything one forward pass reads for an example.
#[derive(Clone, Debug)]
pub struct ExampleInput {
    pub lexicon: LexiconInput,
    pub cove_question: Option<Tensor>,
    pub cove_passage: Option<Tensor>,
}

impl ExampleInput {
    pub fn passage_len(&self) -> usize {
        self.lexicon.passage_len()
    }
}

/// Precomputed CoVe streams keyed `"{id}.question"` / `"{id}.passage"`.
#[derive(Clone, Debug, Default)]
pub struct CoveStore {
    tensors: HashMap<String, Tensor>,
}

impl CoveStore {
    pub fn load(stem: &Path) -> Result<Self> {
        let (manifest, tensors) = load_tensors(stem)?;
        Ok(CoveStore {
            tensors: manifest.tensors.into_iter().map(|e| e.name).zip(tensors).collect(),
        })
    }

    pub fn insert(&mut self, key: impl Into<String>, t: Tensor) {
        self.tensors.insert(key.into(), t);
    }

    fn get(&self, id: &str, part: &str) -> Result<Tensor> {
        self.tensors
            .get(&format!("{id}.{part}"))
            .cloned()
            .ok_or_else(|| Error::Data(format!("no CoVe stream for {id}.{part}")))
    }
}

/// Output of a forward pass in the graph.
pub struct Forward {
    pub memory: WorkingMemory,
    pub answer: AnswerOutput,
}

/// Decoded prediction with every distribution, as written to dumps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub n: usize,
    pub avg_begin: Vec<f64>,
    pub avg_end: Vec<f64>,
    pub per_step_begin: Vec<Vec<f64>>,
    pub per_step_end: Vec<Vec<f64>>,
    #[serde(skip)]
    pub span: Option<DecodedSpan>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    config: ModelConfig,
    vocab: Vocab,
    #[serde(default)]
    extra: serde_json::Value,
}

pub struct San {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamSet,
    pub emb: EmbeddingSet,
    pub enc: EncoderParams,
    pub ans: AnswerParams,
}

impl San {
    /// Fresh model. Parameters are created in a fixed order (embeddings,
    /// encoder, answer module), so every answer variant built from the same
    /// seed starts from identical lower layers.
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let emb = EmbeddingSet::new(
            &mut params,
            vocab.len(),
            config.word_dim,
            config.pos_dim,
            config.ner_dim,
            config.align_dim,
            &mut rng,
        )?;
        let dims = EncoderDims {
            question_in: emb.question_dim(),
            passage_in: emb.passage_dim(),
            d: config.d,
            ffn_hidden: config.d,
            attn_dim: config.d,
            maxout_pieces: config.maxout_pieces,
            cove_dim: config.cove_dim,
        };
        let enc = EncoderParams::new(&mut params, &dims, &mut rng)?;
        let ans = AnswerParams::new(&mut params, config.d, &mut rng)?;
        Ok(San {
            config,
            vocab,
            params,
            emb,
            enc,
            ans,
        })
    }

    /// Scalars the configured variant actually uses. The one-step variant
    /// allocates but never reads the GRU and `W5`.
    pub fn parameter_count(&self) -> usize {
        let total = self.params.num_scalars();
        if self.config.variant == AnswerVariant::Onestep {
            total - self.params.num_scalars_with_prefix("ans.gru") - self.params.num_scalars_with_prefix("ans.w5")
        } else {
            total
        }
    }

    pub fn input(&self, example: &AnnotatedExample, cove: Option<&CoveStore>) -> Result<ExampleInput> {
        let lexicon = LexiconInput::from_example(example, &self.vocab)?;
        let (cove_question, cove_passage) = match (self.config.cove_dim, cove) {
            (0, _) => (None, None),
            (_, Some(store)) => (Some(store.get(&example.id, "question")?), Some(store.get(&example.id, "passage")?)),
            (_, None) => return Err(Error::Config("model expects CoVe streams but none were supplied".into())),
        };
        Ok(ExampleInput {
            lexicon,
            cove_question,
            cove_passage,
        })
    }

    /// Row `row` of a padded batch, cut back to its true lengths.
    pub fn batch_input(&self, batch: &Batch, row: usize, examples: &[AnnotatedExample], cove: Option<&CoveStore>) -> Result<ExampleInput> {
        let example = &examples[batch.indices[row]];
        let n = batch.passage_len(row);
        let m = batch.question_len(row);
        let mut input = self.input(example, cove)?;
        input.lexicon.passage_ids = batch.passage_ids[row][..n].to_vec();
        input.lexicon.question_ids = batch.question_ids[row][..m].to_vec();
        input.lexicon.passage_pos = batch.passage_pos[row][..n].to_vec();
        input.lexicon.passage_ner = batch.passage_ner[row][..n].to_vec();
        if input.passage_len() != n {
            return Err(dim_err!("batch row {row} has {n} passage tokens, example has {}", input.passage_len()));
        }
        Ok(input)
    }

    pub fn graph(&self, mode: Mode, seed: u64) -> Graph<'_> {
        Graph::new(&self.params, mode, seed)
    }

    pub fn answer_settings(&self, steps: usize) -> AnswerSettings {
        AnswerSettings {
            variant: self.config.variant,
            steps,
            prediction_dropout: self.config.prediction_dropout,
            mask_mode: self.config.mask_mode,
        }
    }

    /// Lexicon, contextual and memory layers.
    pub fn encode(&self, g: &mut Graph, input: &ExampleInput) -> Result<WorkingMemory> {
        let drop = self.config.hidden_dropout;
        let lex = build_lexicon_vectors(g, &input.lexicon, &self.emb)?;
        let (eq, ep) = self.enc.lexicon_encode(g, lex.question, lex.passage)?;
        let cq = input.cove_question.as_ref().map(|t| g.constant(t));
        let cp = input.cove_passage.as_ref().map(|t| g.constant(t));
        let (hq, hp) = self.enc.contextual_encode(g, eq, ep, cq, cp, drop)?;
        let c = self.enc.cross_attention(g, hq, hp, drop)?;
        let up = self.enc.gather_passage(g, hp, hq, c.out)?;
        let sa = self.enc.self_attention(g, up, drop)?;
        let m = self.enc.build_memory(g, up, sa.up_hat, drop)?;
        Ok(WorkingMemory {
            m,
            hq,
            hp,
            attention_c: c.normalized,
            self_attention: sa.attention,
        })
    }

    /// Full forward with `steps` reasoning steps (the configured `T` when
    /// `None`).
    pub fn forward(&self, g: &mut Graph, input: &ExampleInput, steps: Option<usize>) -> Result<Forward> {
        let steps = steps.unwrap_or(self.config.steps);
        if steps == 0 {
            return Err(Error::Config("step count must be at least 1".into()));
        }
        let memory = self.encode(g, input)?;
        let answer = answer_forward(g, &self.ans, memory.hq, memory.m, &self.answer_settings(steps))?;
        Ok(Forward { memory, answer })
    }

    /// Training objective for one example.
    pub fn loss(&self, g: &mut Graph, input: &ExampleInput, gold: (usize, usize)) -> Result<Var> {
        let fwd = self.forward(g, input, None)?;
        answer_loss(g, &fwd.answer, gold, self.config.loss)
    }

    /// Evaluation-mode prediction.
    pub fn predict(&self, id: &str, input: &ExampleInput, steps: Option<usize>) -> Result<Prediction> {
        let mut g = self.graph(Mode::Eval, 0);
        let fwd = self.forward(&mut g, input, steps)?;
        let row = |v: Var| g.value(v).to_vec();
        let avg_begin = row(fwd.answer.avg_begin);
        let avg_end = row(fwd.answer.avg_end);
        let span = decode_span(&avg_begin, &avg_end, self.config.max_span_len);
        Ok(Prediction {
            id: id.to_string(),
            n: input.passage_len(),
            per_step_begin: fwd.answer.steps.begin.iter().map(|&v| row(v)).collect(),
            per_step_end: fwd.answer.steps.end.iter().map(|&v| row(v)).collect(),
            avg_begin,
            avg_end,
            span: Some(span),
        })
    }

    pub fn save(&self, stem: &Path, extra: serde_json::Value) -> Result<()> {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            extra,
        };
        save_params(stem, &self.params, serde_json::to_value(meta)?)
    }

    /// Restores a model saved by [`San::save`]. Returns the extra metadata.
    pub fn load(stem: &Path) -> Result<(Self, serde_json::Value)> {
        let (loaded, meta) = load_params(stem)?;
        let mut meta: CheckpointMeta = serde_json::from_value(meta)?;
        meta.vocab.reindex();
        let mut model = San::new(meta.config, meta.vocab, 0)?;
        let copied = model.params.copy_matching(&loaded)?;
        if copied != model.params.len() || loaded.len() != model.params.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} tensors, model expects {}",
                loaded.len(),
                model.params.len()
            )));
        }
        for id in loaded.ids() {
            let name = loaded.name(id).to_string();
            let dst = model.params.id(&name).expect("matched above");
            for (row, &frozen) in loaded.frozen_rows(id).iter().enumerate() {
                if frozen {
                    model.params.freeze_row(dst, row);
                }
            }
        }
        Ok((model, meta.extra))
    }
}

//! Corpus ingestion, synthetic task generation and batching.

mod batch;
mod jsonl;
mod squad;
mod synthetic;
pub mod tags;
pub mod tokenize;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch::{make_batches, Batch};
pub use jsonl::{load_annotated_jsonl, write_annotated_jsonl};
pub use squad::{load_squad, map_char_span, Loaded};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticCorpus};
pub use vocab::{Vocab, PAD, PAD_TOKEN, UNK, UNK_TOKEN};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedToken {
    pub text: String,
    pub lemma: String,
    pub pos_id: usize,
    pub ner_id: usize,
}

impl AnnotatedToken {
    /// Token with lowercase lemma and unknown tags.
    pub fn plain(text: &str) -> Self {
        AnnotatedToken {
            text: text.to_string(),
            lemma: text.to_lowercase(),
            pos_id: tags::UNK_TAG,
            ner_id: tags::UNK_TAG,
        }
    }
}

/// Question category used for per-type breakdowns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QType {
    What,
    Who,
    Where,
    When,
    Why,
    How,
    Which,
    Whose,
    Other,
}

impl QType {
    pub const ALL: [QType; 9] = [
        QType::What,
        QType::Who,
        QType::Where,
        QType::When,
        QType::Why,
        QType::How,
        QType::Which,
        QType::Whose,
        QType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QType::What => "what",
            QType::Who => "who",
            QType::Where => "where",
            QType::When => "when",
            QType::Why => "why",
            QType::How => "how",
            QType::Which => "which",
            QType::Whose => "whose",
            QType::Other => "other",
        }
    }

    /// Category of the first question token that is a wh-word.
    pub fn classify<'a>(question: impl IntoIterator<Item = &'a str>) -> QType {
        question
            .into_iter()
            .find_map(|t| {
                let lower = t.to_lowercase();
                QType::ALL[..8].iter().copied().find(|q| q.as_str() == lower)
            })
            .unwrap_or(QType::Other)
    }
}

impl fmt::Display for QType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QType::ALL
            .iter()
            .copied()
            .find(|q| q.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown question type {s}")))
    }
}

/// One question over one passage with its gold token span.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub id: String,
    /// Raw passage text; empty when the example was built from tokens.
    #[serde(default)]
    pub context: String,
    pub passage: Vec<AnnotatedToken>,
    pub question: Vec<AnnotatedToken>,
    pub answer_start: usize,
    pub answer_end: usize,
    pub answer_texts: Vec<String>,
    /// Per-token `[start, end)` char offsets into `context`.
    #[serde(default)]
    pub char_offsets: Vec<(usize, usize)>,
    pub qtype: QType,
}

impl AnnotatedExample {
    /// Checks span bounds and offset monotonicity.
    pub fn validate(&self) -> Result<()> {
        let n = self.passage.len();
        if n == 0 || self.question.is_empty() {
            return Err(Error::Data(format!("example {} has an empty passage or question", self.id)));
        }
        if self.answer_start > self.answer_end || self.answer_end >= n {
            return Err(Error::Data(format!(
                "example {}: span ({}, {}) outside passage of {n} tokens",
                self.id, self.answer_start, self.answer_end
            )));
        }
        if !self.char_offsets.is_empty() {
            if self.char_offsets.len() != n {
                return Err(Error::Data(format!("example {}: offset count mismatch", self.id)));
            }
            let monotone = self.char_offsets.windows(2).all(|w| w[0].1 <= w[1].0)
                && self.char_offsets.iter().all(|(a, b)| a < b);
            if !monotone {
                return Err(Error::Data(format!("example {}: offsets not monotone", self.id)));
            }
        }
        Ok(())
    }

    /// Answer string for a token span: the raw context slice when offsets
    /// are known, otherwise the tokens joined by spaces.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        if !self.context.is_empty() && self.char_offsets.len() == self.passage.len() {
            let a = self.char_offsets[start].0;
            let b = self.char_offsets[end].1;
            self.context.chars().skip(a).take(b - a).collect()
        } else {
            self.passage[start..=end]
                .iter()
                .map(|t| t.text.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        }
    }

    pub fn gold_text(&self) -> String {
        self.span_text(self.answer_start, self.answer_end)
    }
}

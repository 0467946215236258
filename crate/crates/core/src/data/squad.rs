use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::tokenize::tokenize;
use super::{AnnotatedExample, AnnotatedToken, QType};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<Article>,
}

#[derive(Deserialize)]
struct Article {
    paragraphs: Vec<Paragraph>,
}

#[derive(Deserialize)]
struct Paragraph {
    context: String,
    qas: Vec<Qa>,
}

#[derive(Deserialize)]
struct Qa {
    id: String,
    question: String,
    answers: Vec<Answer>,
}

#[derive(Deserialize)]
struct Answer {
    text: String,
    answer_start: usize,
}

/// Examples read from a file plus the count of rejected entries.
#[derive(Clone, Debug, Default)]
pub struct Loaded {
    pub examples: Vec<AnnotatedExample>,
    pub skipped: usize,
}

/// Token span covering the char range `[start, end)`: first through last
/// token overlapping it, which maximizes the character overlap.
pub fn map_char_span(offsets: &[(usize, usize)], start: usize, end: usize) -> Option<(usize, usize)> {
    let overlapping: Vec<usize> = offsets
        .iter()
        .enumerate()
        .filter(|(_, &(a, b))| a < end && start < b)
        .map(|(i, _)| i)
        .collect();
    Some((*overlapping.first()?, *overlapping.last()?))
}

/// Reads a SQuAD v1.1 JSON file. Questions whose first answer cannot be
/// mapped onto tokens are skipped and counted.
pub fn load_squad(path: &Path) -> Result<Loaded> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SquadFile = serde_json::from_str(&text)?;
    let mut out = Loaded::default();
    for para in file.data.iter().flat_map(|a| &a.paragraphs) {
        let tokens = tokenize(&para.context);
        let offsets: Vec<(usize, usize)> = tokens.iter().map(|(_, o)| *o).collect();
        let passage: Vec<AnnotatedToken> = tokens.iter().map(|(t, _)| AnnotatedToken::plain(t)).collect();
        for qa in &para.qas {
            let question: Vec<AnnotatedToken> = tokenize(&qa.question)
                .iter()
                .map(|(t, _)| AnnotatedToken::plain(t))
                .collect();
            let span = qa.answers.first().and_then(|a| {
                let len = a.text.chars().count();
                map_char_span(&offsets, a.answer_start, a.answer_start + len.max(1))
            });
            let Some((answer_start, answer_end)) = span.filter(|_| !question.is_empty()) else {
                log::warn!("skipping {}: answer cannot be mapped to passage tokens", qa.id);
                out.skipped += 1;
                continue;
            };
            let qtype = QType::classify(question.iter().map(|t| t.text.as_str()));
            let ex = AnnotatedExample {
                id: qa.id.clone(),
                context: para.context.clone(),
                passage: passage.clone(),
                question,
                answer_start,
                answer_end,
                answer_texts: qa.answers.iter().map(|a| a.text.clone()).collect(),
                char_offsets: offsets.clone(),
                qtype,
            };
            match ex.validate() {
                Ok(()) => out.examples.push(ex),
                Err(e) => {
                    log::warn!("skipping {}: {e}", qa.id);
                    out.skipped += 1;
                }
            }
        }
    }
    Ok(out)
}

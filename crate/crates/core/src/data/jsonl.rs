//! Pre-annotated examples, one JSON object per line:
//!
//! ```json
//! {"id": "q1", "context": "optional raw text",
//!  "passage": [{"text": "Paris", "lemma": "paris", "pos": "NNP", "ner": "GPE", "start": 0, "end": 5}],
//!  "question": [{"text": "Where", "lemma": "where", "pos": "WRB"}],
//!  "answer_start": 0, "answer_end": 0, "answers": ["Paris"]}
//! ```
//!
//! `lemma` defaults to the lowercased text; missing or unknown `pos`/`ner`
//! map to the UNK tag. `start`/`end` are optional char offsets into
//! `context`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tags::{self, UNK_TAG};
use super::{AnnotatedExample, AnnotatedToken, QType};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenRecord {
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lemma: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pos: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ner: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleRecord {
    id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    context: String,
    passage: Vec<TokenRecord>,
    question: Vec<TokenRecord>,
    answer_start: usize,
    answer_end: usize,
    #[serde(default)]
    answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    qtype: Option<QType>,
}

fn to_token(r: &TokenRecord, id: &str) -> AnnotatedToken {
    let pos_id = match r.pos.as_deref() {
        None => UNK_TAG,
        Some(p) => tags::pos_id(p).unwrap_or_else(|| {
            log::warn!("{id}: POS tag {p:?} not in inventory, using UNK");
            UNK_TAG
        }),
    };
    let ner_id = match r.ner.as_deref() {
        None => UNK_TAG,
        Some(n) => tags::ner_id(n).unwrap_or_else(|| {
            log::warn!("{id}: NER tag {n:?} not in inventory, using UNK");
            UNK_TAG
        }),
    };
    AnnotatedToken {
        text: r.text.clone(),
        lemma: r.lemma.clone().unwrap_or_else(|| r.text.to_lowercase()),
        pos_id,
        ner_id,
    }
}

fn from_token(t: &AnnotatedToken, offsets: Option<(usize, usize)>) -> TokenRecord {
    TokenRecord {
        text: t.text.clone(),
        lemma: Some(t.lemma.clone()),
        pos: tags::pos_name(t.pos_id).map(str::to_string),
        ner: tags::ner_name(t.ner_id).map(str::to_string),
        start: offsets.map(|o| o.0),
        end: offsets.map(|o| o.1),
    }
}

fn parse_line(line: &str) -> std::result::Result<AnnotatedExample, String> {
    let rec: ExampleRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let passage: Vec<AnnotatedToken> = rec.passage.iter().map(|t| to_token(t, &rec.id)).collect();
    let question: Vec<AnnotatedToken> = rec.question.iter().map(|t| to_token(t, &rec.id)).collect();
    let char_offsets = if rec.passage.iter().all(|t| t.start.is_some() && t.end.is_some()) {
        rec.passage.iter().map(|t| (t.start.unwrap(), t.end.unwrap())).collect()
    } else {
        Vec::new()
    };
    let qtype = rec
        .qtype
        .unwrap_or_else(|| QType::classify(question.iter().map(|t| t.text.as_str())));
    let mut ex = AnnotatedExample {
        id: rec.id,
        context: rec.context,
        passage,
        question,
        answer_start: rec.answer_start,
        answer_end: rec.answer_end,
        answer_texts: rec.answers,
        char_offsets,
        qtype,
    };
    ex.validate().map_err(|e| e.to_string())?;
    if ex.answer_texts.is_empty() {
        ex.answer_texts.push(ex.gold_text());
    }
    Ok(ex)
}

/// Reads annotated examples; any schema violation fails with its line number.
pub fn load_annotated_jsonl(path: &Path) -> Result<Vec<AnnotatedExample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex = parse_line(&line).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        })?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_annotated_jsonl(path: &Path, examples: &[AnnotatedExample]) -> Result<()> {
    let mut buf = Vec::new();
    for ex in examples {
        let offsets = |i: usize| ex.char_offsets.get(i).copied();
        let rec = ExampleRecord {
            id: ex.id.clone(),
            context: ex.context.clone(),
            passage: ex.passage.iter().enumerate().map(|(i, t)| from_token(t, offsets(i))).collect(),
            question: ex.question.iter().map(|t| from_token(t, None)).collect(),
            answer_start: ex.answer_start,
            answer_end: ex.answer_end,
            answers: ex.answer_texts.clone(),
            qtype: Some(ex.qtype),
        };
        serde_json::to_writer(&mut buf, &rec)?;
        buf.write_all(b"\n").expect("write to Vec");
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

//! K-best oracle over dumped span distributions.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::metrics::{exact_match, f1_score};
use super::report::{golds_of, Score};
use crate::answer::kbest_spans;
use crate::data::AnnotatedExample;
use crate::error::{Error, Result};
use crate::model::Prediction;

pub fn write_dump(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for p in preds {
        let line = serde_json::to_string(p)?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Reads a dump, checking every line against the schema and its own `n`.
pub fn read_dump(path: &Path) -> Result<Vec<Prediction>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let p: Prediction = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if p.avg_begin.len() != p.n || p.avg_end.len() != p.n || p.n == 0 {
            return Err(parse_err(format!("distributions do not have n = {} entries", p.n)));
        }
        out.push(p);
    }
    Ok(out)
}

/// For each `K` in `1..=k_max`, the mean over examples of the best EM and
/// best F1 among the top-`K` spans, as percentages. Examples missing from
/// the dump score 0.
pub fn kbest_oracle(
    dump: &[Prediction],
    examples: &[AnnotatedExample],
    k_max: usize,
    max_span_len: usize,
) -> Result<BTreeMap<usize, Score>> {
    if k_max == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let by_id: HashMap<&str, &Prediction> = dump.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut sums = vec![(0.0, 0.0); k_max];
    for ex in examples {
        let Some(p) = by_id.get(ex.id.as_str()) else { continue };
        if p.n != ex.passage.len() {
            return Err(Error::Data(format!(
                "dump entry {} has n = {}, passage has {} tokens",
                ex.id,
                p.n,
                ex.passage.len()
            )));
        }
        let golds = golds_of(ex);
        let spans = kbest_spans(&p.avg_begin, &p.avg_end, k_max, max_span_len);
        let (mut best_em, mut best_f1) = (0.0f64, 0.0f64);
        for k in 0..k_max {
            if let Some(s) = spans.get(k) {
                let text = ex.span_text(s.start, s.end);
                best_em = best_em.max(exact_match(&text, &golds)? as f64);
                best_f1 = best_f1.max(f1_score(&text, &golds)?);
            }
            sums[k].0 += best_em;
            sums[k].1 += best_f1;
        }
    }
    let count = examples.len().max(1) as f64;
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(k, (em, f1))| {
            (
                k + 1,
                Score {
                    em: 100.0 * em / count,
                    f1: 100.0 * f1 / count,
                },
            )
        })
        .collect())
}

pub fn oracle_csv(curve: &BTreeMap<usize, Score>) -> String {
    let mut out = String::from("k,em,f1\n");
    for (k, s) in curve {
        out.push_str(&format!("{k},{:.6},{:.6}\n", s.em, s.f1));
    }
    out
}

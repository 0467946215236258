use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{exact_match, f1_score};
use crate::data::{AnnotatedExample, QType};
use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub em: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QTypeScore {
    pub em: f64,
    pub f1: f64,
    pub count: usize,
}

/// Dataset-level metrics, all as percentages.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub em: f64,
    pub f1: f64,
    pub count: usize,
    #[serde(default)]
    pub kbest: BTreeMap<usize, Score>,
    pub by_qtype: BTreeMap<QType, QTypeScore>,
    /// Examples with no prediction; they count as wrong.
    pub skipped: usize,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat `section,key,em,f1,count` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,key,em,f1,count\n");
        let _ = writeln!(out, "overall,all,{:.6},{:.6},{}", self.em, self.f1, self.count);
        for (q, s) in &self.by_qtype {
            let _ = writeln!(out, "qtype,{q},{:.6},{:.6},{}", s.em, s.f1, s.count);
        }
        for (k, s) in &self.kbest {
            let _ = writeln!(out, "kbest,{k},{:.6},{:.6},{}", s.em, s.f1, self.count);
        }
        out
    }
}

/// Gold strings of an example; the span text when none are listed.
pub fn golds_of(example: &AnnotatedExample) -> Vec<String> {
    if example.answer_texts.is_empty() {
        vec![example.gold_text()]
    } else {
        example.answer_texts.clone()
    }
}

pub fn evaluate(preds: &HashMap<String, String>, examples: &[AnnotatedExample]) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    let mut em_sum = 0.0;
    let mut f1_sum = 0.0;
    let mut per_type: BTreeMap<QType, (f64, f64, usize)> = BTreeMap::new();
    for ex in examples {
        let (em, f1) = match preds.get(&ex.id) {
            Some(p) => {
                let golds = golds_of(ex);
                (exact_match(p, &golds)? as f64, f1_score(p, &golds)?)
            }
            None => {
                report.skipped += 1;
                (0.0, 0.0)
            }
        };
        em_sum += em;
        f1_sum += f1;
        let slot = per_type.entry(ex.qtype).or_default();
        slot.0 += em;
        slot.1 += f1;
        slot.2 += 1;
    }
    report.count = examples.len();
    if report.count > 0 {
        report.em = 100.0 * em_sum / report.count as f64;
        report.f1 = 100.0 * f1_sum / report.count as f64;
    }
    report.by_qtype = per_type
        .into_iter()
        .map(|(q, (em, f1, c))| {
            (
                q,
                QTypeScore {
                    em: 100.0 * em / c as f64,
                    f1: 100.0 * f1 / c as f64,
                    count: c,
                },
            )
        })
        .collect();
    Ok(report)
}

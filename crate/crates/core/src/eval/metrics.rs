//! SQuAD-style answer normalization, exact match and token-bag F1.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, and
/// collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn check_golds(golds: &[String]) -> Result<()> {
    if golds.is_empty() {
        return Err(Error::Contract("at least one gold answer is required".into()));
    }
    Ok(())
}

pub fn exact_match(pred: &str, golds: &[String]) -> Result<u8> {
    check_golds(golds)?;
    let p = normalize_answer(pred);
    Ok(golds.iter().any(|g| normalize_answer(g) == p) as u8)
}

fn f1_single(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return (pt.is_empty() && gt.is_empty()) as u8 as f64;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best token-bag F1 against any gold answer.
pub fn f1_score(pred: &str, golds: &[String]) -> Result<f64> {
    check_golds(golds)?;
    Ok(golds.iter().map(|g| f1_single(pred, g)).fold(0.0, f64::max))
}

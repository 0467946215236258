//! Seeded span-extraction task.
//!
//! Each question is a wh-word, some distractor words and a trailing key
//! phrase of 1-3 words. The passage contains the key phrase exactly once,
//! surrounded by filler words and decoys: distractor bigrams, single
//! distractor words and (for multi-word keys) a truncated prefix of the key.
//! The gold span is the key phrase occurrence, so lexical matching alone is
//! not enough: the model has to work out which question words form the key.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tags::{NER_TABLE_ROWS, POS_TABLE_ROWS};
use super::{AnnotatedExample, AnnotatedToken, QType};
use crate::error::{Error, Result};

const WH_WORDS: [&str; 6] = ["what", "who", "where", "when", "which", "how"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_examples: usize,
    pub vocab_size: usize,
    pub passage_len_range: (usize, usize),
    pub question_len_range: (usize, usize),
    pub seed: u64,
    /// Probability of planting an adjacent pair of distractor words.
    pub bigram_decoy_prob: f64,
    /// Per-distractor probability of planting it as a lone word.
    pub single_decoy_prob: f64,
    /// Probability of planting a truncated key prefix (keys of 2+ words).
    pub prefix_decoy_prob: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_examples: 2000,
            vocab_size: 200,
            passage_len_range: (16, 28),
            question_len_range: (5, 8),
            seed: 0,
            bigram_decoy_prob: 0.35,
            single_decoy_prob: 0.25,
            prefix_decoy_prob: 0.5,
        }
    }
}

/// Train/dev split drawn from one generator configuration.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub train: Vec<AnnotatedExample>,
    pub dev: Vec<AnnotatedExample>,
}

impl SyntheticCorpus {
    /// `train_size` training and `dev_size` dev examples; the two splits use
    /// independent sub-seeds of `config.seed`.
    pub fn generate(config: &SyntheticConfig, train_size: usize, dev_size: usize) -> Result<Self> {
        let train = generate_synthetic(&SyntheticConfig {
            num_examples: train_size,
            seed: config.seed.wrapping_mul(2).wrapping_add(1),
            ..config.clone()
        })?;
        let mut dev = generate_synthetic(&SyntheticConfig {
            num_examples: dev_size,
            seed: config.seed.wrapping_mul(2).wrapping_add(2),
            ..config.clone()
        })?;
        for ex in &mut dev {
            ex.id = ex.id.replacen("syn", "dev", 1);
        }
        Ok(SyntheticCorpus { train, dev })
    }

    /// 2000 train / 500 dev with default generator settings.
    pub fn default_split(seed: u64) -> Result<Self> {
        Self::generate(
            &SyntheticConfig {
                seed,
                ..SyntheticConfig::default()
            },
            2000,
            500,
        )
    }
}

fn word(i: usize) -> AnnotatedToken {
    let text = format!("w{i}");
    AnnotatedToken {
        lemma: text.clone(),
        text,
        pos_id: 1 + (i * 7) % (POS_TABLE_ROWS - 1),
        ner_id: (i * 5) % NER_TABLE_ROWS,
    }
}

fn wh(text: &str) -> AnnotatedToken {
    AnnotatedToken {
        text: text.to_string(),
        lemma: text.to_string(),
        pos_id: super::tags::pos_id("WP").unwrap_or(0),
        ner_id: 0,
    }
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Vec<AnnotatedExample>> {
    if config.vocab_size < 20 {
        return Err(Error::Config(format!("vocab_size must be at least 20, got {}", config.vocab_size)));
    }
    let (qmin, qmax) = config.question_len_range;
    let (pmin, pmax) = config.passage_len_range;
    if qmin < 3 || qmax < qmin || pmax < pmin || pmin < qmax + 4 {
        return Err(Error::Config(format!(
            "length ranges too tight: question {qmin}..={qmax}, passage {pmin}..={pmax}"
        )));
    }
    if qmax + 2 > config.vocab_size / 2 {
        return Err(Error::Config("vocab_size too small for the question length".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.num_examples)
        .map(|i| one_example(config, &mut rng, format!("syn-{}-{i}", config.seed)))
        .collect()
}

fn one_example(config: &SyntheticConfig, rng: &mut ChaCha8Rng, id: String) -> Result<AnnotatedExample> {
    let (qmin, qmax) = config.question_len_range;
    let (pmin, pmax) = config.passage_len_range;
    let m = rng.random_range(qmin..=qmax);
    let key_len = rng.random_range(1..=3usize).min(m - 2);
    let content: Vec<usize> = rand::seq::index::sample(rng, config.vocab_size, m - 1).into_vec();
    let (distractors, key) = content.split_at(m - 1 - key_len);

    let mut segments: Vec<Vec<usize>> = Vec::new();
    if distractors.len() >= 2 && rng.random_bool(config.bigram_decoy_prob) {
        let j = rng.random_range(0..distractors.len() - 1);
        segments.push(distractors[j..j + 2].to_vec());
    }
    for &d in distractors {
        if rng.random_bool(config.single_decoy_prob) {
            segments.push(vec![d]);
        }
    }
    if key_len >= 2 && rng.random_bool(config.prefix_decoy_prob) {
        let cut = rng.random_range(1..key_len);
        segments.push(key[..cut].to_vec());
    }
    let gold_segment = segments.len();
    segments.push(key.to_vec());
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.shuffle(rng);

    let planted: usize = segments.iter().map(Vec::len).sum();
    let n = rng.random_range(pmin..=pmax).max(planted + segments.len() + 1);
    let fillers = n - planted;
    let pool: Vec<usize> = (0..config.vocab_size).filter(|w| !content.contains(w)).collect();
    // one distinct gap per segment keeps segments from touching
    let mut gaps = rand::seq::index::sample(rng, fillers + 1, segments.len()).into_vec();
    gaps.sort_unstable();

    let mut passage = Vec::with_capacity(n);
    let mut answer_start = 0;
    let mut next_gap = 0;
    for f in 0..=fillers {
        while next_gap < gaps.len() && gaps[next_gap] == f {
            let seg = order[next_gap];
            if seg == gold_segment {
                answer_start = passage.len();
            }
            passage.extend(segments[seg].iter().copied());
            next_gap += 1;
        }
        if f < fillers {
            passage.push(*pool.choose(rng).expect("filler pool"));
        }
    }

    let qword = WH_WORDS.choose(rng).expect("wh words");
    let mut question = vec![wh(qword)];
    question.extend(distractors.iter().chain(key).map(|&w| word(w)));
    let passage: Vec<AnnotatedToken> = passage.into_iter().map(word).collect();
    let answer_end = answer_start + key_len - 1;
    let answer_text = passage[answer_start..=answer_end]
        .iter()
        .map(|t| t.text.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    let ex = AnnotatedExample {
        id,
        context: String::new(),
        qtype: QType::classify([*qword]),
        passage,
        question,
        answer_start,
        answer_end,
        answer_texts: vec![answer_text],
        char_offsets: Vec::new(),
    };
    ex.validate()?;
    Ok(ex)
}

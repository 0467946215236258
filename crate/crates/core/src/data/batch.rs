use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AnnotatedExample, Vocab, PAD};

/// A padded mini-batch. Rows beyond an example's true length hold `PAD` and
/// are `false` in the masks.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Positions of the member examples in the source slice.
    pub indices: Vec<usize>,
    pub passage_ids: Vec<Vec<usize>>,
    pub question_ids: Vec<Vec<usize>>,
    pub passage_pos: Vec<Vec<usize>>,
    pub passage_ner: Vec<Vec<usize>>,
    pub passage_mask: Vec<Vec<bool>>,
    pub question_mask: Vec<Vec<bool>>,
    pub spans: Vec<(usize, usize)>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn passage_len(&self, row: usize) -> usize {
        self.passage_mask[row].iter().filter(|&&m| m).count()
    }

    pub fn question_len(&self, row: usize) -> usize {
        self.question_mask[row].iter().filter(|&&m| m).count()
    }

    fn pad(rows: Vec<Vec<usize>>) -> (Vec<Vec<usize>>, Vec<Vec<bool>>) {
        let width = rows.iter().map(Vec::len).max().unwrap_or(0);
        let masks = rows
            .iter()
            .map(|r| (0..width).map(|i| i < r.len()).collect())
            .collect();
        let padded = rows
            .into_iter()
            .map(|mut r| {
                r.resize(width, PAD);
                r
            })
            .collect();
        (padded, masks)
    }

    pub fn from_indices(examples: &[AnnotatedExample], vocab: &Vocab, indices: Vec<usize>) -> Self {
        let exs: Vec<&AnnotatedExample> = indices.iter().map(|&i| &examples[i]).collect();
        let ids = |toks: &[super::AnnotatedToken]| toks.iter().map(|t| vocab.index(&t.text)).collect::<Vec<_>>();
        let (passage_ids, passage_mask) = Self::pad(exs.iter().map(|e| ids(&e.passage)).collect());
        let (question_ids, question_mask) = Self::pad(exs.iter().map(|e| ids(&e.question)).collect());
        let (passage_pos, _) = Self::pad(exs.iter().map(|e| e.passage.iter().map(|t| t.pos_id).collect()).collect());
        let (passage_ner, _) = Self::pad(exs.iter().map(|e| e.passage.iter().map(|t| t.ner_id).collect()).collect());
        Batch {
            spans: exs.iter().map(|e| (e.answer_start, e.answer_end)).collect(),
            indices,
            passage_ids,
            question_ids,
            passage_pos,
            passage_ner,
            passage_mask,
            question_mask,
        }
    }
}

/// Shuffles with `seed` and cuts into padded batches of `batch_size` (the
/// last one may be smaller).
pub fn make_batches(examples: &[AnnotatedExample], vocab: &Vocab, batch_size: usize, seed: u64) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
        .chunks(batch_size.max(1))
        .map(|chunk| Batch::from_indices(examples, vocab, chunk.to_vec()))
        .collect()
}

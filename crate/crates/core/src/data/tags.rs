//! POS and NER tag inventories. Id 0 is shared by unknown tags and padding;
//! known tags start at 1.

/// Fine-grained English tag set: Penn Treebank plus punctuation and the
/// extra tags emitted by common taggers.
pub const POS_TAGS: [&str; 56] = [
    "$", "''", "\"\"", ",", "-LRB-", "-RRB-", ".", ":", "ADD", "AFX", "CC", "CD", "DT", "EX", "FW", "HYPH", "IN",
    "JJ", "JJR", "JJS", "LS", "MD", "NFP", "NN", "NNP", "NNPS", "NNS", "PDT", "POS", "PRP", "PRP$", "RB", "RBR",
    "RBS", "RP", "SYM", "TO", "UH", "VB", "VBD", "VBG", "VBN", "VBP", "VBZ", "WDT", "WP", "WP$", "WRB", "XX",
    "_SP", "``", "#", "BES", "HVS", "GW", "NIL",
];

/// OntoNotes entity types.
pub const NER_TAGS: [&str; 18] = [
    "PERSON",
    "NORP",
    "FAC",
    "ORG",
    "GPE",
    "LOC",
    "PRODUCT",
    "EVENT",
    "WORK_OF_ART",
    "LAW",
    "LANGUAGE",
    "DATE",
    "TIME",
    "PERCENT",
    "MONEY",
    "QUANTITY",
    "ORDINAL",
    "CARDINAL",
];

pub const UNK_TAG: usize = 0;
/// Rows in the POS embedding table (56 tags + UNK).
pub const POS_TABLE_ROWS: usize = POS_TAGS.len() + 1;
/// Rows in the NER embedding table (18 tags + UNK).
pub const NER_TABLE_ROWS: usize = NER_TAGS.len() + 1;

fn lookup(inventory: &[&str], tag: &str) -> Option<usize> {
    inventory.iter().position(|t| *t == tag).map(|i| i + 1)
}

pub fn pos_id(tag: &str) -> Option<usize> {
    lookup(&POS_TAGS, tag)
}

/// Outside-of-entity markers (`O`, empty) map to [`UNK_TAG`] without
/// being treated as unknown.
pub fn ner_id(tag: &str) -> Option<usize> {
    let bare = tag.trim_start_matches("B-").trim_start_matches("I-");
    if bare.is_empty() || bare == "O" {
        return Some(UNK_TAG);
    }
    lookup(&NER_TAGS, bare)
}

pub fn pos_name(id: usize) -> Option<&'static str> {
    id.checked_sub(1).and_then(|i| POS_TAGS.get(i).copied())
}

pub fn ner_name(id: usize) -> Option<&'static str> {
    id.checked_sub(1).and_then(|i| NER_TAGS.get(i).copied())
}

//! QA pairs and reviews: ingestion, tagging, filtering, vocabularies and
//! embedding tables.

mod embeddings;
pub mod io;
mod preprocess;
pub mod synth;
mod tagger;
mod vocab;

use serde::{Deserialize, Serialize};

pub use embeddings::{load_embeddings, seeded_vector, write_embeddings, EmbeddingKind, EmbeddingTable};
pub use preprocess::{preprocess, PreprocessStats, MAX_TOKENS, MIN_QA_TOKENS, MIN_REVIEW_TOKENS};
pub use tagger::{tokenize, RuleTagger, Tagger};
pub use vocab::{PosStats, Vocabulary, END, PAD, START, TAG_PAD, TAG_START, TAG_UNK, UNK};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub word: String,
    pub pos: String,
}

impl TaggedToken {
    pub fn new(word: impl Into<String>, pos: impl Into<String>) -> Self {
        Self {
            word: word.into(),
            pos: pos.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Validation,
    Test,
}

impl Split {
    /// Train and validation pairs both come from the training collection.
    pub fn is_training(self) -> bool {
        matches!(self, Split::Train | Split::Validation)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QAPair {
    pub pair_id: String,
    pub product_id: String,
    pub question: Vec<TaggedToken>,
    pub answer: Vec<TaggedToken>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub review_id: String,
    pub product_id: String,
    pub tokens: Vec<TaggedToken>,
}

/// Raw input record, before tokenization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawRecord {
    Qa {
        product_id: String,
        question: String,
        answer: String,
        #[serde(default)]
        split: Split,
    },
    Review {
        product_id: String,
        text: String,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub pairs: Vec<QAPair>,
    pub reviews: Vec<Review>,
}

impl Dataset {
    pub fn pairs_in(&self, split: Split) -> impl Iterator<Item = &QAPair> {
        self.pairs.iter().filter(move |p| p.split == split)
    }

    pub fn reviews_of<'a>(&'a self, product_id: &'a str) -> impl Iterator<Item = &'a Review> {
        self.reviews.iter().filter(move |r| r.product_id == product_id)
    }

    /// Renders the dataset back to raw records (tokens joined by spaces).
    pub fn to_raw(&self) -> Vec<RawRecord> {
        let join = |t: &[TaggedToken]| t.iter().map(|x| x.word.as_str()).collect::<Vec<_>>().join(" ");
        let mut out: Vec<RawRecord> = self
            .pairs
            .iter()
            .map(|p| RawRecord::Qa {
                product_id: p.product_id.clone(),
                question: join(&p.question),
                answer: join(&p.answer),
                split: p.split,
            })
            .collect();
        out.extend(self.reviews.iter().map(|r| RawRecord::Review {
            product_id: r.product_id.clone(),
            text: join(&r.tokens),
        }));
        out
    }
}

pub fn words(tokens: &[TaggedToken]) -> Vec<&str> {
    tokens.iter().map(|t| t.word.as_str()).collect()
}

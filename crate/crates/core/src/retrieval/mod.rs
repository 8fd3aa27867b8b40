//! Review snippet retrieval and snippet vocabulary weighting.

mod snippets;
mod weights;
mod wmd;

use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingTable, TaggedToken, Vocabulary};

pub use snippets::{
    best_snippet, build_snippet_sets, calibrate_pi, candidate_snippets, collect_snippets, expand_question,
    read_snippet_cache, training_query, write_snippet_cache, RetrievalConfig, RetrievalSummary,
};
pub use weights::{snippet_word_weights, WeightedSnippetVocab, WeightedWord};
pub use wmd::{euclidean, nbow, transport, wmd};

pub const WINDOW: usize = 10;
pub const TOP_K: usize = 10;

/// A contiguous review window and its distance to the query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snippet {
    pub tokens: Vec<TaggedToken>,
    pub score: f64,
    pub review_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnippetSet {
    pub pair_id: String,
    pub snippets: Vec<Snippet>,
    /// Fewer than two snippets passed the threshold.
    pub excluded: bool,
}

/// Vocabulary plus the word table used for distances and similarities.
/// Out-of-vocabulary words use the UNK row.
#[derive(Clone, Copy)]
pub struct WordSpace<'a> {
    pub vocab: &'a Vocabulary,
    pub table: &'a EmbeddingTable,
}

impl<'a> WordSpace<'a> {
    pub fn new(vocab: &'a Vocabulary, table: &'a EmbeddingTable) -> Self {
        Self { vocab, table }
    }

    pub fn ids(&self, tokens: &[TaggedToken]) -> Vec<u32> {
        tokens.iter().map(|t| self.vocab.id(&t.word)).collect()
    }

    pub fn vector(&self, word: &str) -> &'a [f64] {
        self.table.row(self.vocab.id(word))
    }

    pub fn wmd(&self, a: &[TaggedToken], b: &[TaggedToken]) -> crate::Result<f64> {
        wmd(&self.ids(a), &self.ids(b), self.table)
    }
}

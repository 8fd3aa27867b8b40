//! Dataset, vocabulary, word table and snippet sets bundled for training
//! and evaluation.

use crate::corpus::synth::{synth_corpus, synth_embeddings, SynthConfig};
use crate::corpus::{Dataset, EmbeddingTable, PosStats, QAPair, Split, Vocabulary};
use crate::error::Result;
use crate::model::{Example, Model, ModelConfig};
use crate::numerics::Scalar;
use crate::retrieval::{build_snippet_sets, RetrievalConfig, RetrievalSummary, SnippetSet, WordSpace};
use crate::training::build_examples;

pub struct Prepared {
    pub dataset: Dataset,
    pub vocab: Vocabulary,
    pub words: EmbeddingTable,
    pub tag_table: Vec<u32>,
    pub sets: Vec<SnippetSet>,
    /// Present when retrieval ran in this process.
    pub summary: Option<RetrievalSummary>,
}

impl Prepared {
    /// Runs retrieval over `dataset` with the given vocabulary and table.
    pub fn new(dataset: Dataset, vocab: Vocabulary, words: EmbeddingTable, retrieval: &RetrievalConfig) -> Result<Self> {
        let (sets, summary) = build_snippet_sets(&dataset, &WordSpace::new(&vocab, &words), retrieval)?;
        let mut p = Self::with_sets(dataset, vocab, words, sets);
        p.summary = Some(summary);
        Ok(p)
    }

    /// Reuses precomputed snippet sets.
    pub fn with_sets(dataset: Dataset, vocab: Vocabulary, words: EmbeddingTable, sets: Vec<SnippetSet>) -> Self {
        let tag_table = PosStats::from_dataset(&dataset).tag_table(&vocab);
        Self {
            dataset,
            vocab,
            words,
            tag_table,
            sets,
            summary: None,
        }
    }

    /// Synthetic corpus with seeded word vectors of width `dim`.
    pub fn synthetic(cfg: &SynthConfig, dim: usize, retrieval: &RetrievalConfig) -> Result<Self> {
        let dataset = synth_corpus(cfg)?;
        let vocab = Vocabulary::build(&dataset, 1);
        let words = synth_embeddings(&vocab, dim, cfg.seed);
        Self::new(dataset, vocab, words, retrieval)
    }

    pub fn space(&self) -> WordSpace<'_> {
        WordSpace::new(&self.vocab, &self.words)
    }

    pub fn pairs(&self, split: Split) -> Vec<&QAPair> {
        self.dataset.pairs_in(split).collect()
    }

    /// Examples of `split` whose snippet sets are not excluded.
    pub fn examples(&self, split: Split) -> Result<Vec<Example>> {
        build_examples(&self.pairs(split), &self.sets, &self.vocab, &self.space())
    }

    pub fn model<T: Scalar>(&self, config: ModelConfig, seed: u64) -> Result<Model<T>> {
        Model::init(config, &self.words, self.vocab.tag_count(), self.tag_table.clone(), seed)
    }
}

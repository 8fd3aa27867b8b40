use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, TaggedToken};

pub const PAD: u32 = 0;
/// Start-of-answer symbol, the decoder's first input.
pub const START: u32 = 1;
pub const END: u32 = 2;
pub const UNK: u32 = 3;

const RESERVED_WORDS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];
pub const TAG_PAD: u32 = 0;
pub const TAG_UNK: u32 = 1;
pub const TAG_START: u32 = 2;
const RESERVED_TAGS: [&str; 3] = ["<pad>", "<unk>", "<s>"];

/// Word and POS-tag id bijections. Reserved ids come first and never move.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    tags: Vec<String>,
    #[serde(skip)]
    word_ids: HashMap<String, u32>,
    #[serde(skip)]
    tag_ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Words seen at least `min_freq` times across all pairs and reviews,
    /// sorted alphabetically after the reserved entries.
    pub fn build(dataset: &Dataset, min_freq: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut tags: BTreeMap<&str, ()> = BTreeMap::new();
        let all_tokens = dataset
            .pairs
            .iter()
            .flat_map(|p| p.question.iter().chain(&p.answer))
            .chain(dataset.reviews.iter().flat_map(|r| &r.tokens));
        for t in all_tokens {
            *counts.entry(t.word.as_str()).or_default() += 1;
            tags.insert(t.pos.as_str(), ());
        }
        let words = counts
            .into_iter()
            .filter(|&(w, c)| c >= min_freq.max(1) && !RESERVED_WORDS.contains(&w))
            .map(|(w, _)| w.to_string());
        let tags = tags
            .into_keys()
            .filter(|t| !RESERVED_TAGS.contains(t))
            .map(str::to_string);
        Self::from_lists(
            RESERVED_WORDS.iter().map(|s| s.to_string()).chain(words).collect(),
            RESERVED_TAGS.iter().map(|s| s.to_string()).chain(tags).collect(),
        )
    }

    pub(crate) fn from_lists(words: Vec<String>, tags: Vec<String>) -> Self {
        let mut v = Self {
            words,
            tags,
            word_ids: HashMap::new(),
            tag_ids: HashMap::new(),
        };
        v.reindex();
        v
    }

    /// Vocabulary over exactly the given words, after the reserved entries.
    pub fn from_words<S: AsRef<str>>(words: &[S], tags: &[S]) -> Self {
        Self::from_lists(
            RESERVED_WORDS
                .iter()
                .map(|s| s.to_string())
                .chain(words.iter().map(|w| w.as_ref().to_string()))
                .collect(),
            RESERVED_TAGS
                .iter()
                .map(|s| s.to_string())
                .chain(tags.iter().map(|t| t.as_ref().to_string()))
                .collect(),
        )
    }

    fn reindex(&mut self) {
        self.word_ids = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        self.tag_ids = self.tags.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn tag_count(&self) -> usize {
        self.tags.len()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.word_ids.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.word_ids.contains_key(word)
    }

    pub fn word(&self, id: u32) -> &str {
        self.words.get(id as usize).map_or("<unk>", String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn tag_id(&self, tag: &str) -> u32 {
        self.tag_ids.get(tag).copied().unwrap_or(TAG_UNK)
    }

    pub fn tag(&self, id: u32) -> &str {
        self.tags.get(id as usize).map_or("<unk>", String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<u32> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    pub fn encode_tokens(&self, tokens: &[TaggedToken]) -> (Vec<u32>, Vec<u32>) {
        tokens.iter().map(|t| (self.id(&t.word), self.tag_id(&t.pos))).unzip()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.word(i).to_string()).collect()
    }

    /// Stable digest of both id tables.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        h.update([1u8]);
        for t in &self.tags {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        let mut v: Self = serde_json::from_str(s)?;
        v.reindex();
        Ok(v)
    }
}

/// Per-word tag counts over the training collection.
#[derive(Clone, Debug, Default)]
pub struct PosStats {
    counts: HashMap<String, BTreeMap<String, usize>>,
}

impl PosStats {
    /// Counts tags over training/validation pairs and all reviews.
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let tokens = dataset
            .pairs
            .iter()
            .filter(|p| p.split.is_training())
            .flat_map(|p| p.question.iter().chain(&p.answer))
            .chain(dataset.reviews.iter().flat_map(|r| &r.tokens));
        Self::from_tokens(tokens)
    }

    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a TaggedToken>) -> Self {
        let mut counts: HashMap<String, BTreeMap<String, usize>> = HashMap::new();
        for t in tokens {
            *counts.entry(t.word.clone()).or_default().entry(t.pos.clone()).or_default() += 1;
        }
        Self { counts }
    }

    /// Most frequent tag of `word`; ties go to the lexicographically smallest
    /// tag, unseen words get `<unk>`.
    pub fn dominating(&self, word: &str) -> &str {
        self.counts
            .get(word)
            .and_then(|tags| {
                // BTreeMap iterates tags in ascending order, so the first
                // maximum is the smallest tag.
                tags.iter().fold(None, |best: Option<(&String, usize)>, (tag, &n)| match best {
                    Some((_, m)) if m >= n => best,
                    _ => Some((tag, n)),
                })
            })
            .map_or(RESERVED_TAGS[TAG_UNK as usize], |(t, _)| t.as_str())
    }

    /// Dominating tag id for every word id, as fed to the decoder.
    pub fn tag_table(&self, vocab: &Vocabulary) -> Vec<u32> {
        (0..vocab.len() as u32)
            .map(|id| match id {
                PAD => TAG_PAD,
                START => TAG_START,
                END | UNK => TAG_UNK,
                _ => vocab.tag_id(self.dominating(vocab.word(id))),
            })
            .collect()
    }
}

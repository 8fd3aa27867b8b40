use serde::{Deserialize, Serialize};

use super::{Snippet, WordSpace};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedWord {
    pub word: String,
    pub id: u32,
    /// Raw weight ω.
    pub weight: f64,
    /// ω divided by the largest ω in the set.
    pub normalized: f64,
    /// Embedding scaled by `normalized`.
    pub magnified: Vec<f64>,
}

/// Weighted union vocabulary of a snippet set, in first-occurrence order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightedSnippetVocab {
    pub entries: Vec<WeightedWord>,
}

impl WeightedSnippetVocab {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&WeightedWord> {
        self.entries.iter().find(|e| e.word == word)
    }

    /// Magnified embeddings stacked row-major, `len() x dim`.
    pub fn matrix(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|e| e.magnified.iter().copied()).collect()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// ω(r) = f_s(r)/n_q · Σ_s max_{w∈s} cos(r, w), then max-normalized.
///
/// Similarities use the unscaled word table. Words whose weight is not
/// positive are left out, since a zero or negative scale carries no signal.
pub fn snippet_word_weights(snippets: &[Snippet], space: &WordSpace) -> Result<WeightedSnippetVocab> {
    let n_q = snippets.len();
    let mut words: Vec<&str> = Vec::new();
    for s in snippets {
        for t in &s.tokens {
            if !words.contains(&t.word.as_str()) {
                words.push(&t.word);
            }
        }
    }
    let raw: Vec<f64> = words
        .iter()
        .map(|&r| {
            let v = space.vector(r);
            let f_s = snippets.iter().filter(|s| s.tokens.iter().any(|t| t.word == r)).count();
            let rel: f64 = snippets
                .iter()
                .map(|s| {
                    s.tokens
                        .iter()
                        .map(|t| cosine(v, space.vector(&t.word)))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .sum();
            f_s as f64 / n_q as f64 * rel
        })
        .collect();
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0 && max.is_finite()) {
        return Err(Error::DegenerateWeights(max));
    }
    let entries = words
        .iter()
        .zip(&raw)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&word, &weight)| {
            let normalized = weight / max;
            WeightedWord {
                word: word.to_string(),
                id: space.vocab.id(word),
                weight,
                normalized,
                magnified: space.vector(word).iter().map(|x| x * normalized).collect(),
            }
        })
        .collect();
    Ok(WeightedSnippetVocab { entries })
}

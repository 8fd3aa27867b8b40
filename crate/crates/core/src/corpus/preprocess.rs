use std::collections::HashMap;

use serde::Serialize;

use super::{Dataset, QAPair, RawRecord, Review, Tagger};
use crate::error::{Error, Result};

pub const MIN_REVIEW_TOKENS: usize = 10;
pub const MIN_QA_TOKENS: usize = 4;
pub const MAX_TOKENS: usize = 40;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PreprocessStats {
    pub raw_pairs: usize,
    pub raw_reviews: usize,
    pub merged_answers: usize,
    pub dropped_short_reviews: usize,
    pub dropped_pairs_length: usize,
    pub pairs: usize,
    pub reviews: usize,
}

/// Tokenizes and tags raw records, then filters them.
///
/// Answers to the same question (same product and token sequence) are
/// collapsed to the longest one first; ties keep the earliest. Reviews under
/// 10 tokens are dropped, as are pairs whose question or answer falls outside
/// 4..=40 tokens. Pair and review ids follow input order.
pub fn preprocess(raw: &[RawRecord], tagger: &dyn Tagger) -> Result<(Dataset, PreprocessStats)> {
    let mut stats = PreprocessStats::default();
    let mut pairs: Vec<QAPair> = Vec::new();
    let mut by_question: HashMap<(String, Vec<String>), usize> = HashMap::new();
    let mut reviews = Vec::new();

    for record in raw {
        match record {
            RawRecord::Qa {
                product_id,
                question,
                answer,
                split,
            } => {
                stats.raw_pairs += 1;
                let q = tagger.tag(question);
                let a = tagger.tag(answer);
                let key = (product_id.clone(), q.iter().map(|t| t.word.clone()).collect());
                match by_question.get(&key) {
                    Some(&idx) => {
                        stats.merged_answers += 1;
                        if a.len() > pairs[idx].answer.len() {
                            pairs[idx].answer = a;
                        }
                    }
                    None => {
                        by_question.insert(key, pairs.len());
                        pairs.push(QAPair {
                            pair_id: String::new(),
                            product_id: product_id.clone(),
                            question: q,
                            answer: a,
                            split: *split,
                        });
                    }
                }
            }
            RawRecord::Review { product_id, text } => {
                stats.raw_reviews += 1;
                let tokens = tagger.tag(text);
                if tokens.len() < MIN_REVIEW_TOKENS {
                    stats.dropped_short_reviews += 1;
                    continue;
                }
                reviews.push(Review {
                    review_id: String::new(),
                    product_id: product_id.clone(),
                    tokens,
                });
            }
        }
    }

    let in_range = |n: usize| (MIN_QA_TOKENS..=MAX_TOKENS).contains(&n);
    let before = pairs.len();
    pairs.retain(|p| in_range(p.question.len()) && in_range(p.answer.len()));
    stats.dropped_pairs_length = before - pairs.len();

    for (i, p) in pairs.iter_mut().enumerate() {
        p.pair_id = format!("q{i:06}");
    }
    for (i, r) in reviews.iter_mut().enumerate() {
        r.review_id = format!("r{i:06}");
    }
    stats.pairs = pairs.len();
    stats.reviews = reviews.len();
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((Dataset { pairs, reviews }, stats))
}

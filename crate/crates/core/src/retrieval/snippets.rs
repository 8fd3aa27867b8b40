use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{wmd, Snippet, SnippetSet, WordSpace, TOP_K, WINDOW};
use crate::corpus::io::{read_jsonl, write_jsonl};
use crate::corpus::{Dataset, QAPair, Review, TaggedToken};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub window: usize,
    pub top_k: usize,
    /// Fixed threshold; calibrated from the training collection when unset.
    pub pi: Option<f64>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            window: WINDOW,
            top_k: TOP_K,
            pi: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSummary {
    pub pi: f64,
    pub pairs: usize,
    pub excluded: usize,
}

/// The window of `review` closest to `query`; ties keep the earliest.
/// Reviews shorter than `window` form a single window.
pub fn best_snippet(review: &Review, query: &[TaggedToken], space: &WordSpace, window: usize) -> Result<Snippet> {
    let q = space.ids(query);
    let ids = space.ids(&review.tokens);
    let width = window.max(1).min(ids.len().max(1));
    let mut best: Option<(usize, f64)> = None;
    for start in 0..=ids.len().saturating_sub(width) {
        let score = wmd(&ids[start..start + width], &q, space.table)?;
        if best.is_none_or(|(_, s)| score < s) {
            best = Some((start, score));
        }
    }
    let (start, score) = best.ok_or(Error::UndefinedDistance)?;
    Ok(Snippet {
        tokens: review.tokens[start..(start + width).min(review.tokens.len())].to_vec(),
        score,
        review_id: review.review_id.clone(),
    })
}

/// Query text for a pair from the training collection: question then answer.
pub fn training_query(pair: &QAPair) -> Vec<TaggedToken> {
    pair.question.iter().chain(&pair.answer).cloned().collect()
}

/// Appends the answer of the nearest indexed question from another product.
/// Ties keep the earliest index entry.
pub fn expand_question(
    question: &[TaggedToken],
    product_id: &str,
    index: &[&QAPair],
    space: &WordSpace,
) -> Result<Vec<TaggedToken>> {
    let mut best: Option<(&QAPair, f64)> = None;
    for &cand in index.iter().filter(|p| p.product_id != product_id) {
        let d = space.wmd(question, &cand.question)?;
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((cand, d));
        }
    }
    let (nearest, _) = best.ok_or(Error::NoExpansion)?;
    Ok(question.iter().chain(&nearest.answer).cloned().collect())
}

/// Best snippet of every review, in review order.
pub fn candidate_snippets(
    query: &[TaggedToken],
    reviews: &[&Review],
    space: &WordSpace,
    window: usize,
) -> Result<Vec<Snippet>> {
    reviews.iter().map(|r| best_snippet(r, query, space, window)).collect()
}

/// Mean score over the union of every pair's `top_k` lowest scores.
pub fn calibrate_pi(scores_per_pair: &[Vec<f64>], top_k: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for scores in scores_per_pair {
        let mut s = scores.clone();
        s.sort_by(f64::total_cmp);
        for &v in s.iter().take(top_k) {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Calibration);
    }
    Ok(sum / n as f64)
}

fn select(pair_id: &str, candidates: Vec<Snippet>, pi: f64) -> SnippetSet {
    let mut snippets: Vec<Snippet> = candidates.into_iter().filter(|s| s.score <= pi).collect();
    snippets.sort_by(|a, b| a.review_id.cmp(&b.review_id));
    SnippetSet {
        pair_id: pair_id.to_string(),
        excluded: snippets.len() < 2,
        snippets,
    }
}

/// Snippets of the product's reviews scoring at most `pi`, ordered by
/// review id. Flagged excluded when fewer than two survive.
pub fn collect_snippets(
    pair_id: &str,
    query: &[TaggedToken],
    reviews: &[&Review],
    pi: f64,
    space: &WordSpace,
    window: usize,
) -> Result<SnippetSet> {
    Ok(select(pair_id, candidate_snippets(query, reviews, space, window)?, pi))
}

/// Runs retrieval for every pair of `dataset`.
///
/// Pairs from the training collection query with question plus answer; test
/// pairs query with the question expanded from the training collection. The
/// threshold is calibrated on the training collection alone.
pub fn build_snippet_sets(
    dataset: &Dataset,
    space: &WordSpace,
    cfg: &RetrievalConfig,
) -> Result<(Vec<SnippetSet>, RetrievalSummary)> {
    let mut by_product: HashMap<&str, Vec<&Review>> = HashMap::new();
    for r in &dataset.reviews {
        by_product.entry(r.product_id.as_str()).or_default().push(r);
    }
    let index: Vec<&QAPair> = dataset.pairs.iter().filter(|p| p.split.is_training()).collect();
    let candidates: Vec<Vec<Snippet>> = dataset
        .pairs
        .par_iter()
        .map(|pair| {
            let query = if pair.split.is_training() {
                training_query(pair)
            } else {
                expand_question(&pair.question, &pair.product_id, &index, space)?
            };
            let reviews = by_product.get(pair.product_id.as_str()).map_or(&[][..], Vec::as_slice);
            candidate_snippets(&query, reviews, space, cfg.window)
        })
        .collect::<Result<_>>()?;

    let train_scores: Vec<Vec<f64>> = dataset
        .pairs
        .iter()
        .zip(&candidates)
        .filter(|(p, _)| p.split.is_training())
        .map(|(_, c)| c.iter().map(|s| s.score).collect())
        .collect();
    let pi = match cfg.pi {
        Some(pi) => pi,
        None => calibrate_pi(&train_scores, cfg.top_k)?,
    };

    let sets: Vec<SnippetSet> = dataset
        .pairs
        .iter()
        .zip(candidates)
        .map(|(p, c)| select(&p.pair_id, c, pi))
        .collect();
    let summary = RetrievalSummary {
        pi,
        pairs: sets.len(),
        excluded: sets.iter().filter(|s| s.excluded).count(),
    };
    Ok((sets, summary))
}

pub fn write_snippet_cache(path: &Path, sets: &[SnippetSet]) -> Result<()> {
    write_jsonl(path, sets)
}

pub fn read_snippet_cache(path: &Path) -> Result<Vec<SnippetSet>> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{synth_corpus, synth_embeddings, synth_raw, SynthConfig, ASPECTS};
    use crate::corpus::{words, EmbeddingKind, EmbeddingTable, Split, Vocabulary};
    use crate::numerics::Tensor;

    fn toks(text: &str) -> Vec<TaggedToken> {
        text.split_whitespace().map(|w| TaggedToken::new(w, "NN")).collect()
    }

    fn review(id: &str, text: &str) -> Review {
        Review {
            review_id: id.into(),
            product_id: "p".into(),
            tokens: toks(text),
        }
    }

    fn space_for(words: &[&str], dim: usize) -> (Vocabulary, EmbeddingTable) {
        let v = Vocabulary::from_words(words, &[]);
        let t = EmbeddingTable::seeded(&v, dim, 5);
        (v, t)
    }

    #[test]
    fn exact_match_window_scores_zero() {
        let query = "how long does the battery last ?";
        let filler = "a b c d e f g h i j";
        let text = format!("{query} {filler}");
        let all: Vec<&str> = text.split_whitespace().collect();
        let (v, t) = space_for(&all, 16);
        let space = WordSpace::new(&v, &t);
        let r = review("r", &format!("{filler} {query} x y y"));
        let q = toks(query);
        let s = best_snippet(&r, &q, &space, 7).unwrap();
        assert_eq!(s.score, 0.0);
        assert_eq!(words(&s.tokens), words(&q));
    }

    #[test]
    fn short_review_is_its_own_window() {
        let (v, t) = space_for(&["a", "b", "c"], 4);
        let space = WordSpace::new(&v, &t);
        let r = review("r", "a b c");
        let s = best_snippet(&r, &toks("a"), &space, 10).unwrap();
        assert_eq!(s.tokens.len(), 3);
    }

    #[test]
    fn best_snippet_is_the_minimum_over_all_windows() {
        let cfg = SynthConfig::default();
        let ds = synth_corpus(&cfg).unwrap();
        let v = Vocabulary::build(&ds, 1);
        let t = synth_embeddings(&v, 24, 3);
        let space = WordSpace::new(&v, &t);
        let pair = &ds.pairs[0];
        let q = training_query(pair);
        for r in ds.reviews_of(&pair.product_id) {
            let s = best_snippet(r, &q, &space, WINDOW).unwrap();
            let mut first_min = None;
            for start in 0..=r.tokens.len() - WINDOW {
                let d = space.wmd(&r.tokens[start..start + WINDOW], &q).unwrap();
                assert!(s.score <= d);
                if d == s.score && first_min.is_none() {
                    first_min = Some(start);
                }
            }
            let start = first_min.unwrap();
            assert_eq!(s.tokens, r.tokens[start..start + WINDOW]);
        }
    }

    #[test]
    fn planted_fact_clause_is_found() {
        let words_list = ["the", "battery", "is", "long", ".", "delivery", "was", "quick", "box", "arrived", "damaged"];
        let (v, t) = space_for(&words_list, 32);
        let space = WordSpace::new(&v, &t);
        let r = review("r", "the delivery was quick . the battery is long . the box arrived damaged .");
        let s = best_snippet(&r, &toks("the battery is long"), &space, 4).unwrap();
        assert_eq!(s.score, 0.0);
        assert_eq!(words(&s.tokens), vec!["the", "battery", "is", "long"]);
    }

    #[test]
    fn expansion_appends_nearest_answer_from_other_products() {
        let (v, t) = space_for(&["how", "is", "the", "battery", "screen", "?", "long", "bright"], 16);
        let space = WordSpace::new(&v, &t);
        let mk = |id: &str, product: &str, q: &str, a: &str| QAPair {
            pair_id: id.into(),
            product_id: product.into(),
            question: toks(q),
            answer: toks(a),
            split: Split::Train,
        };
        let own = mk("q0", "p", "how is the battery ?", "own");
        let screen = mk("q1", "x", "how is the screen ?", "bright");
        let battery = mk("q2", "y", "how is the battery ?", "long");
        let index = vec![&own, &screen, &battery];
        let q = toks("how is the battery ?");
        let out = expand_question(&q, "p", &index, &space).unwrap();
        assert_eq!(words(&out), vec!["how", "is", "the", "battery", "?", "long"]);

        let single = vec![&screen];
        let out = expand_question(&q, "p", &single, &space).unwrap();
        assert_eq!(words(&out).last(), Some(&"bright"));

        let only_own = vec![&own];
        assert!(matches!(expand_question(&q, "p", &only_own, &space), Err(Error::NoExpansion)));
    }

    #[test]
    fn nearest_question_matches_pairwise_enumeration() {
        let rows = vec![
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![2.0, 2.0],
            vec![-1.0, 0.5],
        ];
        let v = Vocabulary::from_words(&["a", "b", "c", "d"], &[]);
        let t = EmbeddingTable {
            kind: EmbeddingKind::Word,
            rows: Tensor::from_rows(&rows).unwrap(),
        };
        let space = WordSpace::new(&v, &t);
        let mk = |id: &str, q: &str| QAPair {
            pair_id: id.into(),
            product_id: id.into(),
            question: toks(q),
            answer: toks(id),
            split: Split::Train,
        };
        let pairs = [mk("a", "c c d"), mk("b", "a b"), mk("c", "d d")];
        let index: Vec<&QAPair> = pairs.iter().collect();
        let q = toks("a c");
        let dists: Vec<f64> = pairs.iter().map(|p| space.wmd(&q, &p.question).unwrap()).collect();
        let argmin = (0..3).fold(0, |b, i| if dists[i] < dists[b] { i } else { b });
        let out = expand_question(&q, "other", &index, &space).unwrap();
        assert_eq!(out.last().unwrap().word, pairs[argmin].pair_id);
    }

    #[test]
    fn pi_uses_top_ten_per_pair() {
        assert_eq!(calibrate_pi(&[vec![0.5; 7], vec![0.5; 3]], 10).unwrap(), 0.5);
        let twelve: Vec<f64> = (1..=12).rev().map(f64::from).collect();
        assert_eq!(calibrate_pi(std::slice::from_ref(&twelve), 10).unwrap(), 5.5);
        // Union of pair one's ten best (1..=10) and pair two's three scores.
        let got = calibrate_pi(&[twelve, vec![0.25, 4.0, 100.0]], 10).unwrap();
        let expected = (55.0 + 0.25 + 4.0 + 100.0) / 13.0;
        assert_eq!(got, expected);
        assert!(matches!(calibrate_pi(&[vec![], vec![]], 10), Err(Error::Calibration)));
    }

    #[test]
    fn threshold_keeps_low_scores_and_flags_small_sets() {
        let s = |id: &str, score: f64| Snippet {
            tokens: toks("x"),
            score,
            review_id: id.into(),
        };
        let set = select("q", vec![s("r2", 0.2), s("r1", 0.1), s("r3", 0.9)], 0.5);
        assert_eq!(set.snippets.len(), 2);
        assert!(!set.excluded);
        assert_eq!(set.snippets[0].review_id, "r1");
        let set = select("q", vec![s("r1", 0.7), s("r2", 0.9)], 0.5);
        assert!(set.excluded);
        assert!(set.snippets.is_empty());
    }

    #[test]
    fn collection_is_invariant_to_review_order() {
        let cfg = SynthConfig::default();
        let ds = synth_corpus(&cfg).unwrap();
        let v = Vocabulary::build(&ds, 1);
        let t = synth_embeddings(&v, 24, 3);
        let space = WordSpace::new(&v, &t);
        let pair = &ds.pairs[3];
        let q = training_query(pair);
        let mut reviews: Vec<&Review> = ds.reviews_of(&pair.product_id).collect();
        let a = collect_snippets("q", &q, &reviews, 0.9, &space, WINDOW).unwrap();
        reviews.reverse();
        let b = collect_snippets("q", &q, &reviews, 0.9, &space, WINDOW).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_pairs_retain_every_fact_bearing_review() {
        let cfg = SynthConfig {
            seed: 2,
            n_products: 24,
            n_pairs: 120,
            test_products: 6,
            ..SynthConfig::default()
        };
        let (_, facts) = synth_raw(&cfg);
        let ds = synth_corpus(&cfg).unwrap();
        let v = Vocabulary::build(&ds, 1);
        let t = synth_embeddings(&v, 32, 3);
        let space = WordSpace::new(&v, &t);
        let (sets, summary) = build_snippet_sets(&ds, &space, &RetrievalConfig::default()).unwrap();
        assert!(summary.pi > 0.0);
        let mut test_retained = 0;
        for (pair, set) in ds.pairs.iter().zip(&sets) {
            if !pair.split.is_training() {
                test_retained += usize::from(!set.excluded);
                continue;
            }
            let a = ASPECTS.iter().position(|(a, _)| words(&pair.question).contains(a)).unwrap();
            let f = facts.iter().find(|f| f.product_id == pair.product_id).unwrap();
            let bearing: Vec<&str> = ds
                .reviews_of(&pair.product_id)
                .filter(|r| {
                    let w = words(&r.tokens);
                    w.contains(&ASPECTS[a].0) && w.contains(&f.polarity_word(a))
                })
                .map(|r| r.review_id.as_str())
                .collect();
            assert_eq!(bearing.len(), 2);
            assert!(!set.excluded, "{} excluded", pair.pair_id);
            for id in bearing {
                let s = set.snippets.iter().find(|s| s.review_id == id);
                let s = s.unwrap_or_else(|| panic!("{} lacks snippet from {id}", pair.pair_id));
                assert!(words(&s.tokens).contains(&ASPECTS[a].0), "{} / {id}", pair.pair_id);
            }
        }
        // Expanded test queries match less tightly; most still clear the threshold.
        assert!(test_retained * 5 >= 4 * ds.pairs_in(Split::Test).count(), "{test_retained}");
    }

    #[test]
    fn cache_round_trips() {
        let set = SnippetSet {
            pair_id: "q000001".into(),
            snippets: vec![Snippet {
                tokens: toks("the battery is long"),
                score: 0.123456789012345,
                review_id: "r000002".into(),
            }],
            excluded: true,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snippets.jsonl");
        write_snippet_cache(&path, std::slice::from_ref(&set)).unwrap();
        assert_eq!(read_snippet_cache(&path).unwrap(), vec![set]);
    }
}

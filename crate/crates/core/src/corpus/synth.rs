//! Templated product corpus with latent aspect facts.
//!
//! Every product draws a polarity for each aspect. Questions name an aspect,
//! answers state the product's polarity for it, and reviews verbalize the
//! same facts between distractor clauses. Answers for a given question text
//! differ between products, so they can only be recovered from the reviews.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{preprocess, Dataset, EmbeddingTable, RawRecord, RuleTagger, Split, Vocabulary};
use crate::error::Result;

/// Aspect names with their (positive, negative) polarity words.
pub const ASPECTS: [(&str, [&str; 2]); 8] = [
    ("battery", ["long", "short"]),
    ("screen", ["bright", "dim"]),
    ("camera", ["sharp", "blurry"]),
    ("price", ["cheap", "expensive"]),
    ("sound", ["loud", "quiet"]),
    ("weight", ["light", "heavy"]),
    ("signal", ["strong", "weak"]),
    ("speed", ["fast", "slow"]),
];

const QUESTIONS: [&str; 3] = [
    "how is the {a} ?",
    "what about the {a} of this one ?",
    "can you tell me about the {a} ?",
];

const ANSWERS: [&str; 3] = [
    "the {a} is {p} .",
    "i think the {a} is {p} .",
    "in my opinion the {a} is {p} .",
];

const FACTS: [&str; 3] = ["the {a} is {p} .", "the {a} is really {p} .", "honestly the {a} is {p} ."];

const DISTRACTORS: [&str; 8] = [
    "the delivery was quick .",
    "the box arrived damaged .",
    "i bought it for my son .",
    "customer service answered every mail .",
    "the manual is simple to follow .",
    "it came with a free case .",
    "my friend recommended this shop .",
    "the color looks nice in person .",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_products: usize,
    pub n_pairs: usize,
    /// Reviews per product.
    pub n_reviews: usize,
    /// The last `test_products` products supply the test split.
    pub test_products: usize,
    /// Training pairs moved to the validation split.
    pub validation_pairs: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_products: 10,
            n_pairs: 50,
            n_reviews: 10,
            test_products: 0,
            validation_pairs: 0,
        }
    }
}

/// One product's hidden facts: polarity index per aspect.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProductFacts {
    pub product_id: String,
    pub polarity: [usize; 8],
}

impl ProductFacts {
    pub fn polarity_word(&self, aspect: usize) -> &'static str {
        ASPECTS[aspect].1[self.polarity[aspect]]
    }
}

fn fill(template: &str, aspect: &str, polarity: &str) -> String {
    template.replace("{a}", aspect).replace("{p}", polarity)
}

/// Raw records plus the facts they were generated from.
pub fn synth_raw(cfg: &SynthConfig) -> (Vec<RawRecord>, Vec<ProductFacts>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_products = cfg.n_products.max(1);
    let n_reviews = cfg.n_reviews.max(1);
    let facts: Vec<ProductFacts> = (0..n_products)
        .map(|p| ProductFacts {
            product_id: format!("p{p:03}"),
            polarity: std::array::from_fn(|_| rng.random_range(0..2)),
        })
        .collect();

    // Each product walks its own shuffled (aspect, template) list, so a
    // question never repeats within a product until the list is exhausted.
    let combos: Vec<Vec<(usize, usize)>> = (0..n_products)
        .map(|_| {
            let mut c: Vec<(usize, usize)> = (0..ASPECTS.len()).flat_map(|a| (0..3).map(move |t| (a, t))).collect();
            c.shuffle(&mut rng);
            c
        })
        .collect();
    let first_test = n_products - cfg.test_products.min(n_products);
    let mut pairs = Vec::with_capacity(cfg.n_pairs);
    let mut asked: Vec<Vec<usize>> = vec![Vec::new(); n_products];
    for i in 0..cfg.n_pairs {
        let p = i % n_products;
        let k = i / n_products;
        let (a, t) = combos[p][k % combos[p].len()];
        let (aspect, _) = ASPECTS[a];
        let polarity = facts[p].polarity_word(a);
        if !asked[p].contains(&a) {
            asked[p].push(a);
        }
        pairs.push((
            p,
            fill(QUESTIONS[t], aspect, ""),
            fill(ANSWERS[t], aspect, polarity),
            if p >= first_test { Split::Test } else { Split::Train },
        ));
    }
    let train_idx: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].3 == Split::Train).collect();
    let n_val = cfg.validation_pairs.min(train_idx.len().saturating_sub(1));
    for &i in train_idx.choose_multiple(&mut rng, n_val) {
        pairs[i].3 = Split::Validation;
    }

    let mut records: Vec<RawRecord> = pairs
        .into_iter()
        .map(|(p, question, answer, split)| RawRecord::Qa {
            product_id: facts[p].product_id.clone(),
            question,
            answer,
            split,
        })
        .collect();

    for (p, f) in facts.iter().enumerate() {
        let r_mod = n_reviews.max(2);
        for r in 0..n_reviews {
            let mut clauses: Vec<String> = Vec::new();
            for (k, &a) in asked[p].iter().enumerate() {
                if (2 * k) % r_mod == r || (2 * k + 1) % r_mod == r {
                    let t = rng.random_range(0..FACTS.len());
                    clauses.push(fill(FACTS[t], ASPECTS[a].0, f.polarity_word(a)));
                }
            }
            // Distractors go around the facts and pad the review to 10+ tokens.
            let n_distract = rng.random_range(1..=2);
            for _ in 0..n_distract {
                let d = DISTRACTORS[rng.random_range(0..DISTRACTORS.len())].to_string();
                let at = rng.random_range(0..=clauses.len());
                clauses.insert(at, d);
            }
            while clauses.iter().map(|c| c.split_whitespace().count()).sum::<usize>() < 10 {
                clauses.push(DISTRACTORS[rng.random_range(0..DISTRACTORS.len())].to_string());
            }
            records.push(RawRecord::Review {
                product_id: f.product_id.clone(),
                text: clauses.join(" "),
            });
        }
    }
    (records, facts)
}

/// Preprocessed synthetic dataset.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<Dataset> {
    let (raw, _) = synth_raw(cfg);
    Ok(preprocess(&raw, &RuleTagger)?.0)
}

/// Seeded word vectors for a synthetic vocabulary.
pub fn synth_embeddings(vocab: &Vocabulary, dim: usize, seed: u64) -> EmbeddingTable {
    EmbeddingTable::seeded(vocab, dim, seed)
}

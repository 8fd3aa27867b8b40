//! Diversity and embedding-similarity metrics over generated answers.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::io::{read_jsonl, write_jsonl};
use crate::corpus::{words, QAPair, Vocabulary};
use crate::decoding::{generate, BeamConfig};
use crate::error::{Error, Result};
use crate::model::{Example, Model};
use crate::numerics::Scalar;
use crate::retrieval::WordSpace;

/// Distinct n-grams over total n-grams. Answers shorter than `n` score 0.
pub fn distinct_n<S: AsRef<str>>(tokens: &[S], n: usize) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::UndefinedMetric("distinct-n of an empty answer".into()));
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("distinct-n needs n >= 1".into()));
    }
    if tokens.len() < n {
        return Ok(0.0);
    }
    let grams: Vec<Vec<&str>> = tokens
        .windows(n)
        .map(|w| w.iter().map(AsRef::as_ref).collect())
        .collect();
    let distinct: HashSet<&Vec<&str>> = grams.iter().collect();
    Ok(distinct.len() as f64 / grams.len() as f64)
}

fn mean_vector<S: AsRef<str>>(tokens: &[S], space: &WordSpace) -> Vec<f64> {
    let mut acc = vec![0.0; space.table.dim()];
    for t in tokens {
        for (a, v) in acc.iter_mut().zip(space.vector(t.as_ref())) {
            *a += v;
        }
    }
    let n = tokens.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Cosine between the mean word vectors of both sides. Unknown words use
/// the UNK row.
pub fn embedding_similarity<A: AsRef<str>, B: AsRef<str>>(generated: &[A], reference: &[B], space: &WordSpace) -> Result<f64> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::UndefinedMetric("embedding similarity of an empty answer".into()));
    }
    let a = mean_vector(generated, space);
    let b = mean_vector(reference, space);
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedMetric("zero mean embedding".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// One line of an answer file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub pair_id: String,
    pub answer_tokens: Vec<String>,
}

pub fn write_answers(path: &Path, answers: &[AnswerRecord]) -> Result<()> {
    write_jsonl(path, answers)
}

pub fn read_answers(path: &Path) -> Result<Vec<AnswerRecord>> {
    read_jsonl(path)
}

/// Top beam answer for every example, in input order.
pub fn generate_answers<T: Scalar>(
    model: &Model<T>,
    examples: &[Example],
    vocab: &Vocabulary,
    beam: &BeamConfig,
) -> Result<Vec<AnswerRecord>> {
    examples
        .par_iter()
        .map(|ex| {
            let hyp = generate(model, ex, beam)?;
            Ok(AnswerRecord {
                pair_id: ex.pair_id.clone(),
                answer_tokens: vocab.decode(hyp.answer()),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemReport {
    pub pair_id: String,
    pub answer: Vec<String>,
    pub reference: Vec<String>,
    pub distinct_1: Option<f64>,
    pub distinct_2: Option<f64>,
    pub es: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Means over items without errors; 0 when there are none.
    pub distinct_1: f64,
    pub distinct_2: f64,
    pub es: f64,
    pub scored: usize,
    pub errors: usize,
    pub items: Vec<ItemReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn score_item(pair: &QAPair, answer: Option<&AnswerRecord>, space: &WordSpace) -> ItemReport {
    let reference: Vec<String> = words(&pair.answer).iter().map(|w| w.to_string()).collect();
    let mut item = ItemReport {
        pair_id: pair.pair_id.clone(),
        answer: Vec::new(),
        reference,
        distinct_1: None,
        distinct_2: None,
        es: None,
        error: None,
    };
    let Some(a) = answer else {
        item.error = Some("missing answer".into());
        return item;
    };
    item.answer = a.answer_tokens.clone();
    let scores = (|| -> Result<(f64, f64, f64)> {
        Ok((
            distinct_n(&item.answer, 1)?,
            distinct_n(&item.answer, 2)?,
            embedding_similarity(&item.answer, &item.reference, space)?,
        ))
    })();
    match scores {
        Ok((d1, d2, es)) => {
            item.distinct_1 = Some(d1);
            item.distinct_2 = Some(d2);
            item.es = Some(es);
        }
        Err(e) => item.error = Some(e.to_string()),
    }
    item
}

/// Scores `answers` against the reference answers of `pairs`. Pairs without
/// an answer, or whose answer cannot be scored, become error items.
pub fn evaluate_answers(answers: &[AnswerRecord], pairs: &[&QAPair], space: &WordSpace) -> EvalReport {
    let by_id: HashMap<&str, &AnswerRecord> = answers.iter().map(|a| (a.pair_id.as_str(), a)).collect();
    let items: Vec<ItemReport> = pairs
        .par_iter()
        .map(|p| score_item(p, by_id.get(p.pair_id.as_str()).copied(), space))
        .collect();
    let ok: Vec<&ItemReport> = items.iter().filter(|i| i.error.is_none()).collect();
    let mean = |f: fn(&ItemReport) -> Option<f64>| {
        if ok.is_empty() {
            0.0
        } else {
            ok.iter().filter_map(|i| f(i)).sum::<f64>() / ok.len() as f64
        }
    };
    EvalReport {
        distinct_1: mean(|i| i.distinct_1),
        distinct_2: mean(|i| i.distinct_2),
        es: mean(|i| i.es),
        scored: ok.len(),
        errors: items.len() - ok.len(),
        items,
    }
}

/// Generates answers for `examples` and scores them against `pairs`.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    examples: &[Example],
    pairs: &[&QAPair],
    vocab: &Vocabulary,
    space: &WordSpace,
    beam: &BeamConfig,
) -> Result<(Vec<AnswerRecord>, EvalReport)> {
    let answers = generate_answers(model, examples, vocab, beam)?;
    let report = evaluate_answers(&answers, pairs, space);
    Ok((answers, report))
}

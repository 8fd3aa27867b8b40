//! Beam search over any next-token scorer.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{END, PAD, START};
use crate::error::{Error, Result};
use crate::generator::{DecodeContext, DecoderState};
use crate::model::{Example, Model, MAX_LEN};
use crate::numerics::Scalar;

/// Source of next-token log-probabilities for a growing prefix.
pub trait Scorer: Sync {
    type State: Clone + Send;

    fn start(&self) -> Self::State;
    /// Log-probabilities of the next token after the state's prefix.
    fn log_probs(&self, state: &mut Self::State) -> Result<Vec<f64>>;
    fn push(&self, state: &mut Self::State, token: u32);
}

pub struct ModelScorer<'a, T> {
    pub model: &'a Model<T>,
    pub context: DecodeContext<T>,
}

impl<'a, T: Scalar> ModelScorer<'a, T> {
    pub fn new(model: &'a Model<T>, example: &Example) -> Result<Self> {
        Ok(Self {
            model,
            context: model.context(example)?,
        })
    }
}

impl<T: Scalar> Scorer for ModelScorer<'_, T> {
    type State = DecoderState<T>;

    fn start(&self) -> Self::State {
        self.model.decoder_state()
    }

    fn log_probs(&self, state: &mut Self::State) -> Result<Vec<f64>> {
        let lp = self.model.step(state, &self.context)?;
        Ok(lp.into_iter().map(Scalar::to_f64_lossless).collect())
    }

    fn push(&self, state: &mut Self::State, token: u32) {
        state.push(token);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub beam_width: usize,
    /// Generated tokens per hypothesis, END included.
    pub max_len: usize,
    /// Rank finished hypotheses by log-probability per generated token.
    pub length_normalize: bool,
    /// Tokens never generated.
    pub banned: Vec<u32>,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_width: 5,
            max_len: MAX_LEN,
            length_normalize: true,
            banned: vec![PAD, START],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// `y_0..y_j`, START first.
    pub tokens: Vec<u32>,
    /// Sum of step log-probabilities.
    pub log_prob: f64,
    /// END emitted or the length limit reached.
    pub finished: bool,
}

impl Hypothesis {
    /// Generated tokens without START or a trailing END.
    pub fn answer(&self) -> &[u32] {
        let body = &self.tokens[1..];
        body.strip_suffix(&[END]).unwrap_or(body)
    }

    pub fn generated_len(&self) -> usize {
        self.tokens.len() - 1
    }

    /// Ranking score: raw or per-token log-probability.
    pub fn score(&self, length_normalize: bool) -> f64 {
        if length_normalize && self.generated_len() > 0 {
            self.log_prob / self.generated_len() as f64
        } else {
            self.log_prob
        }
    }
}

struct Live<S> {
    hyp: Hypothesis,
    state: S,
}

/// Expands every live hypothesis by every allowed token and keeps the
/// `beam_width` best by raw log-probability, ties broken by hypothesis then
/// token order. Hypotheses ending in END or reaching `max_len` move to the
/// finished pool, which is returned best first.
pub fn beam_search<S: Scorer>(scorer: &S, cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    if cfg.beam_width == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    if cfg.max_len == 0 || cfg.max_len > MAX_LEN {
        return Err(Error::Config(format!("max_len must lie in 1..={MAX_LEN}")));
    }
    let mut live = vec![Live {
        hyp: Hypothesis {
            tokens: vec![START],
            log_prob: 0.0,
            finished: false,
        },
        state: scorer.start(),
    }];
    let mut done: Vec<Hypothesis> = Vec::new();

    while !live.is_empty() {
        let dists = live
            .par_iter_mut()
            .map(|l| scorer.log_probs(&mut l.state))
            .collect::<Result<Vec<_>>>()?;
        let mut cands: Vec<(f64, usize, u32)> = Vec::new();
        for (hi, (l, lp)) in live.iter().zip(&dists).enumerate() {
            for (tok, &p) in lp.iter().enumerate() {
                let tok = tok as u32;
                if !cfg.banned.contains(&tok) {
                    cands.push((l.hyp.log_prob + p, hi, tok));
                }
            }
        }
        cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
        cands.truncate(cfg.beam_width);

        let mut next = Vec::with_capacity(cands.len());
        for (score, hi, tok) in cands {
            let parent = &live[hi];
            let mut tokens = parent.hyp.tokens.clone();
            tokens.push(tok);
            let finished = tok == END || tokens.len() > cfg.max_len;
            let hyp = Hypothesis {
                tokens,
                log_prob: score,
                finished,
            };
            if finished {
                done.push(hyp);
            } else {
                let mut state = parent.state.clone();
                scorer.push(&mut state, tok);
                next.push(Live { hyp, state });
            }
        }
        live = next;
    }
    done.sort_by(|a, b| {
        b.score(cfg.length_normalize)
            .partial_cmp(&a.score(cfg.length_normalize))
            .unwrap_or(Ordering::Equal)
    });
    Ok(done)
}

/// Argmax decoding, lowest token id on ties.
pub fn greedy<S: Scorer>(scorer: &S, cfg: &BeamConfig) -> Result<Hypothesis> {
    let mut state = scorer.start();
    let mut hyp = Hypothesis {
        tokens: vec![START],
        log_prob: 0.0,
        finished: false,
    };
    while !hyp.finished {
        let lp = scorer.log_probs(&mut state)?;
        let (tok, p) = lp
            .iter()
            .enumerate()
            .filter(|(t, _)| !cfg.banned.contains(&(*t as u32)))
            .fold(None, |best: Option<(usize, f64)>, (t, &p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((t, p)),
            })
            .ok_or_else(|| Error::Config("every token is banned".into()))?;
        hyp.tokens.push(tok as u32);
        hyp.log_prob += p;
        hyp.finished = tok as u32 == END || hyp.generated_len() >= cfg.max_len;
        scorer.push(&mut state, tok as u32);
    }
    Ok(hyp)
}

/// Top beam-search answer for one example.
pub fn generate<T: Scalar>(model: &Model<T>, example: &Example, cfg: &BeamConfig) -> Result<Hypothesis> {
    let scorer = ModelScorer::new(model, example)?;
    let ranked = beam_search(&scorer, cfg)?;
    ranked.into_iter().next().ok_or(Error::MaxLength(cfg.max_len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EmbeddingTable, Vocabulary};
    use crate::model::ModelConfig;
    use crate::numerics::Tensor;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Next-token distribution depends on the last token and prefix length.
    struct Table {
        vocab: usize,
        logits: Vec<f64>,
    }

    impl Table {
        fn random(vocab: usize, seed: u64) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Self {
                vocab,
                logits: (0..vocab * vocab * (MAX_LEN + 1)).map(|_| rng.random_range(-3.0..3.0)).collect(),
            }
        }
    }

    impl Scorer for Table {
        type State = Vec<u32>;

        fn start(&self) -> Vec<u32> {
            vec![START % self.vocab as u32]
        }

        fn log_probs(&self, state: &mut Vec<u32>) -> Result<Vec<f64>> {
            let last = *state.last().unwrap() as usize;
            let base = ((state.len() - 1) * self.vocab + last) * self.vocab;
            let row = &self.logits[base..base + self.vocab];
            let lz = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            Ok(row.iter().map(|v| v - lz).collect())
        }

        fn push(&self, state: &mut Vec<u32>, token: u32) {
            state.push(token);
        }
    }

    fn exhaustive(s: &Table, max_len: usize) -> (Vec<u32>, f64) {
        let mut best: (Vec<u32>, f64) = (vec![], f64::NEG_INFINITY);
        let mut stack = vec![(vec![START], 0.0)];
        while let Some((prefix, lp)) = stack.pop() {
            let mut st = prefix.clone();
            let dist = s.log_probs(&mut st).unwrap();
            for (t, p) in dist.iter().enumerate() {
                let mut next = prefix.clone();
                next.push(t as u32);
                let total = lp + p;
                if t as u32 == END || next.len() - 1 == max_len {
                    if total > best.1 {
                        best = (next, total);
                    }
                } else {
                    stack.push((next, total));
                }
            }
        }
        best
    }

    fn raw(width: usize, max_len: usize) -> BeamConfig {
        BeamConfig {
            beam_width: width,
            max_len,
            length_normalize: false,
            banned: vec![],
        }
    }

    #[test]
    fn wide_beam_matches_exhaustive_search() {
        for seed in 0..20 {
            let s = Table::random(4, seed);
            let top = &beam_search(&s, &raw(256, 4)).unwrap()[0];
            let (seq, score) = exhaustive(&s, 4);
            assert_eq!(top.tokens, seq, "seed {seed}");
            assert_eq!(top.log_prob, score);
        }
    }

    #[test]
    fn peaked_chain_is_recovered_with_zero_cost() {
        // 0 -> 4 -> 5 -> END with probability one.
        struct Chain;
        impl Scorer for Chain {
            type State = Vec<u32>;
            fn start(&self) -> Vec<u32> {
                vec![START]
            }
            fn log_probs(&self, s: &mut Vec<u32>) -> Result<Vec<f64>> {
                let next = match s.len() {
                    1 => 4,
                    2 => 5,
                    _ => END as usize,
                };
                Ok((0..6).map(|t| if t == next { 0.0 } else { -1e9 }).collect())
            }
            fn push(&self, s: &mut Vec<u32>, t: u32) {
                s.push(t);
            }
        }
        let top = &beam_search(&Chain, &BeamConfig::default()).unwrap()[0];
        assert_eq!(top.answer(), &[4, 5]);
        assert_eq!(top.log_prob, 0.0);
        assert!(top.finished);
    }

    #[test]
    fn unfinished_hypotheses_are_forced_at_max_len() {
        struct NeverEnd;
        impl Scorer for NeverEnd {
            type State = ();
            fn start(&self) {}
            fn log_probs(&self, _: &mut ()) -> Result<Vec<f64>> {
                Ok(vec![-5.0, -5.0, -50.0, -0.1])
            }
            fn push(&self, _: &mut (), _: u32) {}
        }
        let out = beam_search(&NeverEnd, &raw(3, 5)).unwrap();
        assert!(out.iter().all(|h| h.finished));
        assert_eq!(out[0].tokens, vec![START, 3, 3, 3, 3, 3]);
        assert!(matches!(beam_search(&NeverEnd, &raw(0, 5)), Err(Error::Config(_))));
        assert!(matches!(beam_search(&NeverEnd, &raw(1, MAX_LEN + 1)), Err(Error::Config(_))));
    }

    #[test]
    fn length_normalization_prefers_better_per_token_score() {
        // Short answer: END first at -1.5. Long: 3 then END at -0.9 each.
        struct Two;
        impl Scorer for Two {
            type State = usize;
            fn start(&self) -> usize {
                0
            }
            fn log_probs(&self, n: &mut usize) -> Result<Vec<f64>> {
                Ok(if *n == 0 { vec![-9.0, -9.0, -1.5, -0.9] } else { vec![-9.0, -9.0, -0.9, -9.0] })
            }
            fn push(&self, n: &mut usize, _: u32) {
                *n += 1;
            }
        }
        let mut cfg = raw(4, 3);
        assert_eq!(beam_search(&Two, &cfg).unwrap()[0].tokens, vec![START, END]);
        cfg.length_normalize = true;
        assert_eq!(beam_search(&Two, &cfg).unwrap()[0].tokens, vec![START, 3, END]);
    }

    fn model(seed: u64) -> (Model<f64>, Example) {
        let v = Vocabulary::from_words(&["a", "b", "c", "d", "e"], &[]);
        let cfg = ModelConfig {
            dim: 6,
            enc_layers: 2,
            dec_layers: 2,
            ..ModelConfig::default()
        };
        let w = EmbeddingTable::seeded(&v, 6, seed);
        let m = Model::init(cfg, &w, 3, vec![1; v.len()], seed).unwrap();
        let ex = Example {
            pair_id: "q".into(),
            question: vec![4, 6, 8],
            question_tags: vec![1, 2, 1],
            answer: vec![],
            review: Some(Tensor::matrix(1, 6, vec![0.3; 6]).unwrap()),
        };
        (m, ex)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn beam_one_is_greedy(seed in 0u64..500) {
            let s = Table::random(5, seed);
            let cfg = raw(1, 6);
            let b = beam_search(&s, &cfg).unwrap();
            prop_assert_eq!(&b[0], &greedy(&s, &cfg).unwrap());

            let (m, ex) = model(seed);
            let cfg = BeamConfig { beam_width: 1, max_len: 8, ..BeamConfig::default() };
            let scorer = ModelScorer::new(&m, &ex).unwrap();
            prop_assert_eq!(beam_search(&scorer, &cfg).unwrap()[0].clone(), greedy(&scorer, &cfg).unwrap());
        }

        #[test]
        fn scores_match_teacher_forced_recomputation(seed in 0u64..500, width in 1usize..5) {
            let (m, ex) = model(seed);
            let cfg = BeamConfig { beam_width: width, max_len: 6, ..BeamConfig::default() };
            let out = beam_search(&ModelScorer::new(&m, &ex).unwrap(), &cfg).unwrap();
            prop_assert!(!out.is_empty());
            for h in &out {
                let forced = Example { answer: h.tokens[1..h.tokens.len() - 1].to_vec(), ..ex.clone() };
                let lp = m.forward_log_probs(&forced).unwrap();
                let mut total = 0.0;
                for (r, &t) in h.tokens[1..].iter().enumerate() {
                    total += lp.row(r)[t as usize];
                }
                prop_assert_eq!(total, h.log_prob);
                prop_assert!(h.tokens[1..].iter().all(|t| *t != PAD && *t != START));
            }
            let again = beam_search(&ModelScorer::new(&m, &ex).unwrap(), &cfg).unwrap();
            prop_assert_eq!(out, again);
        }
    }
}

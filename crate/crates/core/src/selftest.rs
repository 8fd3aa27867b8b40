//! Quick built-in checks of gradients, decoding identities and metric unit
//! values.

use serde::Serialize;

use crate::corpus::{EmbeddingTable, Vocabulary};
use crate::decoding::{beam_search, greedy, BeamConfig, ModelScorer};
use crate::error::Result;
use crate::evaluation::{distinct_n, embedding_similarity};
use crate::model::{Example, Model, ModelConfig};
use crate::numerics::gradcheck::check_gradients;
use crate::numerics::{ParamStore, Tensor};
use crate::retrieval::{calibrate_pi, wmd, WordSpace};
use crate::training::{Checkpoint, Nesterov, TrainConfig};

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn fixture() -> Result<(Model<f64>, Example, Vocabulary, EmbeddingTable)> {
    let words: Vec<String> = (0..8).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::from_words(&words, &[]);
    let table = EmbeddingTable::seeded(&vocab, 4, 7);
    let cfg = ModelConfig {
        dim: 4,
        enc_layers: 1,
        dec_layers: 2,
        ..ModelConfig::default()
    };
    let tags = (0..vocab.len() as u32).map(|i| i % 3).collect();
    let model = Model::init(cfg, &table, 3, tags, 7)?;
    let example = Example {
        pair_id: "selftest".into(),
        question: vec![4, 7, 9],
        question_tags: vec![1, 2, 1],
        answer: vec![5, 11, 6],
        review: Some(Tensor::matrix(2, 4, vec![0.2, -0.1, 0.4, 0.3, -0.5, 0.1, 0.0, 0.6])?),
    };
    Ok((model, example, vocab, table))
}

/// Runs every check; none of them panics.
pub fn run() -> Vec<Check> {
    let fx = fixture();
    let Ok((model, example, vocab, table)) = fx else {
        return vec![check("fixture", || fx.map(|_| (true, String::new())))];
    };
    let mut out = Vec::new();

    out.push(check("gradient_check", || {
        let cfg = model.config.clone();
        let tags = model.tag_table.clone();
        let report = check_gradients(&model.params, 1e-5, |store: &ParamStore<f64>| {
            let m = Model::from_params(cfg.clone(), store.clone(), tags.clone())?;
            let l = m.example_loss(&example)?;
            Ok((l.nll, l.grads))
        })?;
        Ok((report.passes(1e-4), format!("max relative error {:.3e}", report.max_rel_error)))
    }));

    out.push(check("incremental_equals_full", || {
        let full = model.forward_log_probs(&example)?;
        let ctx = model.context(&example)?;
        let mut st = model.decoder_state();
        let mut same = true;
        for j in 0..=example.answer.len() {
            same &= model.step(&mut st, &ctx)?.as_slice() == full.row(j);
            if j < example.answer.len() {
                st.push(example.answer[j]);
            }
        }
        Ok((same, format!("{} steps", example.answer.len() + 1)))
    }));

    out.push(check("gate_endpoints", || {
        let ctx = model.context(&example)?;
        let (h, c) = ([0.5, -1.0, 0.25, 2.0], [1.0, 1.0, -1.0, 0.5]);
        let mut hi = model.clone();
        let mut lo = model.clone();
        for (m, b) in [(&mut hi, 60.0), (&mut lo, -800.0)] {
            if let Some(t) = m.param_mut("dec.0.gate.out.b") {
                t.data_mut()[0] = b;
            }
        }
        let up = hi.review_injection(0, &h, &c, ctx.review.as_ref());
        let down = lo.review_injection(0, &h, &c, ctx.review.as_ref());
        let plain: Vec<f64> = h.iter().zip(&c).map(|(a, b)| a + b).collect();
        let o = down.summary.clone().unwrap_or_default();
        let with_o: Vec<f64> = h.iter().zip(&o).map(|(a, b)| a + b).collect();
        Ok((up.hidden == plain && down.hidden == with_o, "g=1 gives h+c, g=0 gives h+o".into()))
    }));

    out.push(check("beam_one_is_greedy", || {
        let scorer = ModelScorer::new(&model, &example)?;
        let cfg = BeamConfig {
            beam_width: 1,
            max_len: 10,
            ..BeamConfig::default()
        };
        let b = beam_search(&scorer, &cfg)?;
        let g = greedy(&scorer, &cfg)?;
        Ok((b.first() == Some(&g), format!("{} tokens", g.generated_len())))
    }));

    out.push(check("wmd_identities", || {
        let a = [4u32, 5, 5];
        let b = [6u32, 4];
        let ab = wmd(&a, &b, &table)?;
        let ba = wmd(&b, &a, &table)?;
        let aa = wmd(&a, &a, &table)?;
        Ok(((ab - ba).abs() < 1e-9 && aa == 0.0, format!("wmd(a,b)={ab:.6}")))
    }));

    out.push(check("metric_units", || {
        let d1 = distinct_n(&["ok", "ok", "good"], 1)?;
        let space = WordSpace::new(&vocab, &table);
        let es = embedding_similarity(&["w1", "w2"], &["w1", "w2"], &space)?;
        let twelve: Vec<f64> = (1..=12).map(f64::from).collect();
        let pi = calibrate_pi(&[twelve], 10)?;
        Ok((
            d1 == 2.0 / 3.0 && (es - 1.0).abs() < 1e-9 && pi == 5.5,
            format!("distinct-1 {d1:.4}, es {es:.6}, pi {pi}"),
        ))
    }));

    out.push(check("nesterov_recurrence", || {
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::vector(vec![1.0f64])?, true)?;
        let mut opt = Nesterov::new(0.1, 0.9);
        for _ in 0..2 {
            let mut g = crate::numerics::Graph::new(&store);
            let t = g.param(id);
            let sq = g.mul(t, t)?;
            let loss = g.sum_all(sq);
            let mut grads = g.backward(loss)?;
            grads.scale(0.5);
            opt.step(&mut store, &grads);
        }
        let theta = store.tensor(id).data()[0];
        Ok(((theta - 0.5751).abs() < 1e-12, format!("theta after two steps {theta}")))
    }));

    out.push(check("checkpoint_round_trip", || {
        let ck = Checkpoint::from_model(&model, &TrainConfig::default(), &vocab.hash(), 0, 0.0);
        let back: Checkpoint = serde_json::from_str(&serde_json::to_string(&ck)?)?;
        let loaded: Model<f64> = back.to_model()?;
        let same = loaded.forward_log_probs(&example)? == model.forward_log_probs(&example)?;
        Ok((same, format!("{} parameters", ck.params.len())))
    }));

    out
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}

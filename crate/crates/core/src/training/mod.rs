//! Regularized likelihood training with Nesterov momentum, early stopping
//! and checkpoints.

mod checkpoint;
mod optim;

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{QAPair, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{Example, Model};
use crate::numerics::{Gradients, ParamStore, Scalar, Tensor};
use crate::retrieval::{snippet_word_weights, SnippetSet, WordSpace};

pub use checkpoint::{Checkpoint, ParamRecord, FORMAT_VERSION};
pub use optim::{clip_global_norm, Nesterov};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Penalty `l2_coeff * sum(theta^2)`, no factor one half.
    pub l2_coeff: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Global gradient norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            l2_coeff: 0.001,
            learning_rate: 0.25,
            momentum: 0.99,
            clip_norm: Some(5.0),
            max_epochs: 100,
            patience: 5,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.l2_coeff >= 0.0 && self.l2_coeff.is_finite()) {
            return bad("l2_coeff must be non-negative");
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }
}

/// Converts pairs to id form and attaches each pair's weighted snippet
/// vocabulary as review memory. Pairs whose snippet set is excluded, or
/// missing from `sets`, are skipped.
pub fn build_examples(
    pairs: &[&QAPair],
    sets: &[SnippetSet],
    vocab: &Vocabulary,
    space: &WordSpace,
) -> Result<Vec<Example>> {
    let by_id: HashMap<&str, &SnippetSet> = sets.iter().map(|s| (s.pair_id.as_str(), s)).collect();
    let dim = space.table.dim();
    let mut out = Vec::with_capacity(pairs.len());
    for p in pairs {
        let Some(set) = by_id.get(p.pair_id.as_str()) else { continue };
        if set.excluded {
            continue;
        }
        let weighted = snippet_word_weights(&set.snippets, space)?;
        let review = if weighted.is_empty() {
            None
        } else {
            Some(Tensor::matrix(weighted.len(), dim, weighted.matrix())?)
        };
        let (question, question_tags) = vocab.encode_tokens(&p.question);
        let answer = p.answer.iter().map(|t| vocab.id(&t.word)).collect();
        out.push(Example {
            pair_id: p.pair_id.clone(),
            question,
            question_tags,
            answer,
            review,
        });
    }
    Ok(out)
}

/// `l2_coeff * sum(theta^2)` over trainable parameters.
pub fn l2_penalty<T: Scalar>(params: &ParamStore<T>, l2_coeff: f64) -> f64 {
    let sq: f64 = params
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(_, p)| p.tensor.data().iter().map(|v| v.to_f64_lossless().powi(2)).sum::<f64>())
        .sum();
    l2_coeff * sq
}

pub struct BatchLoss<T> {
    /// Mean per-token NLL plus the L2 penalty.
    pub loss: f64,
    pub nll_sum: f64,
    pub tokens: usize,
    pub grads: Gradients<T>,
}

/// Regularized loss of a batch and its gradient. Examples run in parallel;
/// their contributions are summed in batch order.
pub fn batch_loss<T: Scalar>(model: &Model<T>, batch: &[&Example], l2_coeff: f64) -> Result<BatchLoss<T>> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let parts = batch
        .par_iter()
        .map(|ex| model.example_loss(ex))
        .collect::<Result<Vec<_>>>()?;
    let mut grads = Gradients::empty(model.params.len());
    let (mut nll_sum, mut tokens) = (0.0, 0);
    for p in &parts {
        nll_sum += p.nll.to_f64_lossless();
        tokens += p.tokens;
        grads.accumulate(&p.grads);
    }
    grads.scale(T::from_f64_lossy(1.0 / tokens as f64));
    grads.add_weight_decay(&model.params, T::from_f64_lossy(2.0 * l2_coeff));
    Ok(BatchLoss {
        loss: nll_sum / tokens as f64 + l2_penalty(&model.params, l2_coeff),
        nll_sum,
        tokens,
        grads,
    })
}

/// Mean per-token NLL over `examples`, summed in order.
pub fn mean_nll<T: Scalar>(model: &Model<T>, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let parts = examples
        .par_iter()
        .map(|ex| model.example_nll(ex))
        .collect::<Result<Vec<_>>>()?;
    let (mut sum, mut tokens) = (0.0, 0usize);
    for (nll, n) in parts {
        sum += nll.to_f64_lossless();
        tokens += n;
    }
    Ok(sum / tokens as f64)
}

/// Non-finite activations surface as numeric-input errors from the kernels.
fn non_finite(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NumericInput(_) => Error::NonFiniteLoss { epoch, batch },
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-token NLL over the epoch's batches, before each update.
    pub train_loss: f64,
    /// Mean per-token NLL on the selection set after the epoch.
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Trains `model` in place and leaves it at the parameters with the lowest
/// selection loss. Selection uses `validation`, or the training examples
/// when `validation` is empty.
///
/// `on_epoch` sees every epoch's log and the current model, with a flag
/// set when the epoch improved on the best loss so far.
///
/// A non-finite loss or gradient aborts with [`Error::NonFiniteLoss`] after
/// restoring the best parameters seen.
pub fn train<T, F>(
    model: &mut Model<T>,
    train_set: &[Example],
    validation: &[Example],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainReport>
where
    T: Scalar,
    F: FnMut(&EpochLog, &Model<T>, bool) -> Result<()>,
{
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let selection = if validation.is_empty() { train_set } else { validation };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Nesterov::new(cfg.learning_rate, cfg.momentum);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(usize, f64, ParamStore<T>)> = None;
    let mut epochs = Vec::new();
    let mut stale = 0;

    let result = (|| -> Result<()> {
        for epoch in 1..=cfg.max_epochs {
            let start = Instant::now();
            order.shuffle(&mut rng);
            let (mut nll, mut tokens) = (0.0, 0usize);
            for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
                let diverged = |e| non_finite(e, epoch, b);
                let mut bl = batch_loss(model, &batch, cfg.l2_coeff).map_err(diverged)?;
                if !bl.loss.is_finite() || !bl.grads.all_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: b });
                }
                if let Some(c) = cfg.clip_norm {
                    clip_global_norm(&mut bl.grads, c);
                }
                opt.step(&mut model.params, &bl.grads);
                nll += bl.nll_sum;
                tokens += bl.tokens;
            }
            let batches = order.len().div_ceil(cfg.batch_size);
            let val_loss = mean_nll(model, selection).map_err(|e| non_finite(e, epoch, batches))?;
            if !val_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batches });
            }
            let log = EpochLog {
                epoch,
                train_loss: nll / tokens as f64,
                val_loss,
                seconds: start.elapsed().as_secs_f64(),
            };
            let improved = best.as_ref().is_none_or(|(_, v, _)| val_loss < *v);
            if improved {
                best = Some((epoch, val_loss, model.params.clone()));
                stale = 0;
            } else {
                stale += 1;
            }
            on_epoch(&log, model, improved)?;
            epochs.push(log);
            if stale >= cfg.patience {
                break;
            }
        }
        Ok(())
    })();

    if let Some((_, _, params)) = &best {
        model.params = params.clone();
    }
    result?;
    let (best_epoch, best_val_loss, _) = best.expect("at least one epoch");
    Ok(TrainReport {
        epochs,
        best_epoch,
        best_val_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EmbeddingTable;
    use crate::model::ModelConfig;

    fn tiny(cfg: ModelConfig, seed: u64) -> Model<f64> {
        let v = Vocabulary::from_words(&["a", "b", "c", "d"], &[]);
        let w = EmbeddingTable::seeded(&v, cfg.dim, seed);
        Model::init(cfg, &w, 3, vec![1; v.len()], seed).unwrap()
    }

    fn small() -> ModelConfig {
        ModelConfig {
            dim: 4,
            enc_layers: 1,
            dec_layers: 1,
            ..ModelConfig::default()
        }
    }

    fn ex(q: &[u32], a: &[u32]) -> Example {
        Example {
            pair_id: format!("{q:?}"),
            question: q.to_vec(),
            question_tags: vec![1; q.len()],
            answer: a.to_vec(),
            review: Some(Tensor::matrix(2, 4, vec![0.5, 0.0, -0.5, 1.0, 0.1, 0.2, 0.3, 0.4]).unwrap()),
        }
    }

    fn zero_all(m: &mut Model<f64>) {
        for (_, p) in m.params.iter_mut() {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn uniform_model_costs_log_v_per_token() {
        let mut m = tiny(small(), 1);
        zero_all(&mut m);
        let a = ex(&[4, 5], &[6, 7, 4]);
        let b = ex(&[7], &[5]);
        let bl = batch_loss(&m, &[&a, &b], 0.001).unwrap();
        assert_eq!(bl.tokens, 4 + 2);
        assert!((bl.loss - (8.0f64).ln()).abs() < 1e-12);
        assert_eq!(l2_penalty(&m.params, 0.0), 0.0);
    }

    #[test]
    fn planted_batch_matches_hand_computed_loss() {
        // Only the output bias is non-zero, so every step predicts the same
        // distribution softmax(b).
        let mut m = tiny(small(), 2);
        zero_all(&mut m);
        let bias: Vec<f64> = (0..8).map(|i| 0.1 * i as f64).collect();
        m.param_mut("out.b").unwrap().data_mut().copy_from_slice(&bias);
        let lz = bias.iter().map(|b| b.exp()).sum::<f64>().ln();
        let a = ex(&[4], &[5, 6]);
        let b = ex(&[6, 7], &[7]);
        let targets = [5usize, 6, 2, 7, 2];
        let nll: f64 = targets.iter().map(|&t| lz - bias[t]).sum();
        let penalty = 0.01 * bias.iter().map(|b| b * b).sum::<f64>();
        let bl = batch_loss(&m, &[&a, &b], 0.01).unwrap();
        assert!((bl.loss - (nll / 5.0 + penalty)).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_gradient_is_twice_coeff_theta() {
        let m = tiny(small(), 3);
        let a = ex(&[4, 5], &[6]);
        let plain = batch_loss(&m, &[&a], 0.0).unwrap();
        let reg = batch_loss(&m, &[&a], 0.25).unwrap();
        for (id, p) in m.params.iter() {
            let (Some(g0), Some(g1)) = (plain.grads.get(id), reg.grads.get(id)) else {
                assert!(!p.trainable || plain.grads.get(id).is_none());
                continue;
            };
            for ((x, y), t) in g0.data().iter().zip(g1.data()).zip(p.tensor.data()) {
                assert!((y - x - 0.5 * t).abs() < 1e-12);
            }
        }
        assert!(plain.grads.get(m.params.id("embed.word").unwrap()).is_none());
    }

    #[test]
    fn small_step_decreases_regularized_loss() {
        let m = tiny(small(), 4);
        let batch = [ex(&[4, 5], &[6, 7]), ex(&[7], &[4, 4, 5])];
        let refs: Vec<&Example> = batch.iter().collect();
        let before = batch_loss(&m, &refs, 0.001).unwrap();
        let decreased = [1e-1, 1e-2, 1e-3, 1e-4].iter().any(|&lr| {
            let mut probe = m.clone();
            Nesterov::new(lr, 0.0).step(&mut probe.params, &before.grads);
            batch_loss(&probe, &refs, 0.001).unwrap().loss < before.loss
        });
        assert!(decreased);
    }

    #[test]
    fn training_is_deterministic_and_keeps_word_table_frozen() {
        let data = vec![ex(&[4, 5], &[6, 7]), ex(&[7], &[4, 5]), ex(&[5, 6, 7], &[7]), ex(&[4], &[6])];
        let cfg = TrainConfig {
            batch_size: 2,
            max_epochs: 4,
            learning_rate: 0.05,
            momentum: 0.9,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = tiny(small(), 5);
            let r = train(&mut m, &data, &[], &cfg, |_, _, _| Ok(())).unwrap();
            (m, r)
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(r1.epochs.len(), r2.epochs.len());
        for (a, b) in r1.epochs.iter().zip(&r2.epochs) {
            assert_eq!((a.train_loss, a.val_loss), (b.train_loss, b.val_loss));
        }
        let fresh = tiny(small(), 5);
        assert_eq!(m1.param("embed.word"), fresh.param("embed.word"));
        assert_eq!(m1.param("out.w"), m2.param("out.w"));
        assert_ne!(m1.param("embed.position"), fresh.param("embed.position"));
        assert!(r1.epochs.last().unwrap().val_loss < r1.epochs[0].val_loss);
        assert_eq!(mean_nll(&m1, &data).unwrap(), r1.best_val_loss);
    }

    #[test]
    fn divergence_aborts_and_restores_best_parameters() {
        let data = vec![ex(&[4, 5], &[6, 7]), ex(&[7], &[4, 5])];
        let cfg = TrainConfig {
            batch_size: 1,
            max_epochs: 50,
            learning_rate: 1e30,
            momentum: 0.0,
            clip_norm: None,
            patience: 50,
            ..TrainConfig::default()
        };
        let mut m = tiny(small(), 6);
        let mut snapshots = Vec::new();
        let err = train(&mut m, &data, &[], &cfg, |_, m, improved| {
            if improved {
                snapshots.push(m.params.clone());
            }
            Ok(())
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
        assert!(m.params.iter().all(|(_, p)| p.tensor.all_finite()));
        if let Some(last) = snapshots.last() {
            assert_eq!(m.param("out.w"), Some(last.tensor(last.id("out.w").unwrap())));
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for cfg in [
            TrainConfig { patience: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { momentum: 1.0, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }
}

//! Model configuration, parameter layout and initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Scalar, Tensor};

/// Longest question or answer, in tokens. Sizes the position table.
pub const MAX_LEN: usize = 40;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub enc_kernel: usize,
    pub dec_kernel: usize,
    /// Adds tag embeddings to every input position.
    pub use_pos: bool,
    /// Injects the weighted snippet vocabulary through attention and a gate.
    pub use_review: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            enc_layers: 4,
            dec_layers: 4,
            enc_kernel: 2,
            dec_kernel: 4,
            use_pos: true,
            use_review: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("enc_kernel", self.enc_kernel),
            ("dec_kernel", self.dec_kernel),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub(crate) struct DecoderLayerIds {
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub att_w: ParamId,
    pub att_b: ParamId,
    /// Hidden weight, hidden bias, output weight, output bias.
    pub gate: Option<[ParamId; 4]>,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub word: ParamId,
    pub pos: Option<ParamId>,
    pub position: ParamId,
    pub enc: Vec<(ParamId, ParamId)>,
    pub enc_out: (ParamId, ParamId),
    pub dec: Vec<DecoderLayerIds>,
    pub out: (ParamId, ParamId),
}

/// Shape and trainability of every parameter, in creation order.
fn param_specs(cfg: &ModelConfig, vocab: usize, tags: usize) -> Vec<(String, Vec<usize>, bool)> {
    let d = cfg.dim;
    let mut s: Vec<(String, Vec<usize>, bool)> = vec![("embed.word".into(), vec![vocab, d], false)];
    if cfg.use_pos {
        s.push(("embed.pos".into(), vec![tags, d], true));
    }
    s.push(("embed.position".into(), vec![MAX_LEN + 1, d], true));
    for l in 0..cfg.enc_layers {
        s.push((format!("enc.{l}.conv.w"), vec![2 * d, cfg.enc_kernel * d], true));
        s.push((format!("enc.{l}.conv.b"), vec![2 * d], true));
    }
    s.push(("enc.out.w".into(), vec![d, d], true));
    s.push(("enc.out.b".into(), vec![d], true));
    for l in 0..cfg.dec_layers {
        s.push((format!("dec.{l}.conv.w"), vec![2 * d, cfg.dec_kernel * d], true));
        s.push((format!("dec.{l}.conv.b"), vec![2 * d], true));
        s.push((format!("dec.{l}.att.w"), vec![d, d], true));
        s.push((format!("dec.{l}.att.b"), vec![d], true));
        if cfg.use_review {
            s.push((format!("dec.{l}.gate.hidden.w"), vec![d, 3 * d], true));
            s.push((format!("dec.{l}.gate.hidden.b"), vec![d], true));
            s.push((format!("dec.{l}.gate.out.w"), vec![1, d], true));
            s.push((format!("dec.{l}.gate.out.b"), vec![1], true));
        }
    }
    s.push(("out.w".into(), vec![vocab, d], true));
    s.push(("out.b".into(), vec![vocab], true));
    s
}

impl Layout {
    fn resolve<T: Scalar>(store: &ParamStore<T>, cfg: &ModelConfig) -> Result<Self> {
        let id = |name: String| store.id(&name).ok_or(Error::UnknownParameter(name));
        let enc = (0..cfg.enc_layers)
            .map(|l| Ok((id(format!("enc.{l}.conv.w"))?, id(format!("enc.{l}.conv.b"))?)))
            .collect::<Result<_>>()?;
        let dec = (0..cfg.dec_layers)
            .map(|l| {
                let gate = if cfg.use_review {
                    Some([
                        id(format!("dec.{l}.gate.hidden.w"))?,
                        id(format!("dec.{l}.gate.hidden.b"))?,
                        id(format!("dec.{l}.gate.out.w"))?,
                        id(format!("dec.{l}.gate.out.b"))?,
                    ])
                } else {
                    None
                };
                Ok(DecoderLayerIds {
                    conv_w: id(format!("dec.{l}.conv.w"))?,
                    conv_b: id(format!("dec.{l}.conv.b"))?,
                    att_w: id(format!("dec.{l}.att.w"))?,
                    att_b: id(format!("dec.{l}.att.b"))?,
                    gate,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            word: id("embed.word".into())?,
            pos: if cfg.use_pos { Some(id("embed.pos".into())?) } else { None },
            position: id("embed.position".into())?,
            enc,
            enc_out: (id("enc.out.w".into())?, id("enc.out.b".into())?),
            dec,
            out: (id("out.w".into())?, id("out.b".into())?),
        })
    }
}

/// Deterministic generator for one named parameter, so a parameter's initial
/// value does not depend on which other parameters exist.
fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Encoder-decoder parameters plus the decoder-side tag lookup.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    /// Dominating tag id for every word id.
    pub tag_table: Vec<u32>,
    pub(crate) layout: Layout,
}

impl<T: Scalar> Model<T> {
    /// Fresh model. Biases start at zero; matrices draw from
    /// N(0, 1/fan_in); tag and position rows from N(0, 1/d).
    pub fn init(
        config: ModelConfig,
        words: &EmbeddingTable,
        tag_count: usize,
        tag_table: Vec<u32>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if words.dim() != config.dim {
            return Err(Error::Config(format!(
                "word table has dimension {}, model expects {}",
                words.dim(),
                config.dim
            )));
        }
        let mut store = ParamStore::new();
        for (name, shape, trainable) in param_specs(&config, words.len(), tag_count) {
            let tensor = if name == "embed.word" {
                Tensor::from_f64(shape, words.rows.data())?
            } else if shape.len() == 1 {
                Tensor::zeros(&shape)
            } else {
                let fan_in = shape[1];
                let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
                let mut rng = param_rng(seed, &name);
                let n = shape.iter().product();
                let data: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
                Tensor::from_f64(shape, &data)?
            };
            store.add(name, tensor, trainable)?;
        }
        Self::from_params(config, store, tag_table)
    }

    /// Wraps an existing parameter store, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>, tag_table: Vec<u32>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::resolve(&params, &config)?;
        let vocab = params.tensor(layout.word).rows();
        let tags = layout.pos.map_or(0, |p| params.tensor(p).rows());
        let specs = param_specs(&config, vocab, tags);
        if specs.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                specs.len(),
                params.len()
            )));
        }
        for (name, shape, trainable) in specs {
            let p = params.get(params.id(&name).ok_or_else(|| Error::UnknownParameter(name.clone()))?);
            if p.tensor.shape() != shape.as_slice() || p.trainable != trainable {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?} (trainable {}), expected {shape:?} (trainable {trainable})",
                    p.tensor.shape(),
                    p.trainable
                )));
            }
        }
        if tag_table.len() != vocab {
            return Err(Error::Checkpoint(format!(
                "tag table covers {} words, vocabulary has {vocab}",
                tag_table.len()
            )));
        }
        if let Some(&bad) = tag_table.iter().find(|&&t| tags > 0 && t as usize >= tags) {
            return Err(Error::Checkpoint(format!("tag id {bad} outside the tag table")));
        }
        Ok(Self {
            config,
            params,
            tag_table,
            layout,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.params.tensor(self.layout.word).rows()
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.id(name).map(|id| self.params.tensor(id))
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let id = self.params.id(name)?;
        Some(&mut self.params.get_mut(id).tensor)
    }

    /// Same parameters at another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut store = ParamStore::new();
        for (_, p) in self.params.iter() {
            let t = Tensor::from_f64(p.tensor.shape().to_vec(), &p.tensor.to_f64_vec()).expect("same shape");
            store.add(p.name.clone(), t, p.trainable).expect("unique names");
        }
        Model::from_params(self.config.clone(), store, self.tag_table.clone()).expect("same layout")
    }
}

/// One question-answer pair in id form, with its review memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub pair_id: String,
    pub question: Vec<u32>,
    pub question_tags: Vec<u32>,
    /// Gold answer without START or END.
    pub answer: Vec<u32>,
    /// Magnified snippet-word embeddings, one row per snippet word.
    pub review: Option<Tensor<f64>>,
}

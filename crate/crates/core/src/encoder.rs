//! Question encoder: summed word, tag and position embeddings followed by
//! residual gated convolutions.

use crate::error::{Error, Result};
use crate::model::{Model, MAX_LEN};
use crate::numerics::{Graph, Padding, Scalar, Tensor, Var};

/// Encoder outputs `z` and the attention values `z + e`.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded<T> {
    pub z: Tensor<T>,
    pub values: Tensor<T>,
}

impl<T: Scalar> Model<T> {
    /// `w[word] + t[tag] + p[position]`, with the tag term dropped when tag
    /// embeddings are disabled.
    pub fn embed(&self, g: &mut Graph<'_, T>, words: &[u32], tags: &[u32], positions: &[usize]) -> Result<Var> {
        if words.len() != tags.len() || words.len() != positions.len() {
            return Err(Error::shape("words, tags and positions differ in length"));
        }
        if let Some(&p) = positions.iter().find(|&&p| p > MAX_LEN) {
            return Err(Error::Length { len: p, max: MAX_LEN });
        }
        let ids = |v: &[u32]| v.iter().map(|&i| i as usize).collect::<Vec<_>>();
        let mut e = g.gather(self.layout.word, &ids(words))?;
        if let Some(pos) = self.layout.pos {
            let t = g.gather(pos, &ids(tags))?;
            e = g.add(e, t)?;
        }
        let p = g.gather(self.layout.position, positions)?;
        g.add(e, p)
    }

    /// Question embeddings at positions `1..=m`.
    pub fn embed_question(&self, g: &mut Graph<'_, T>, words: &[u32], tags: &[u32]) -> Result<Var> {
        if words.len() > MAX_LEN {
            return Err(Error::Length {
                len: words.len(),
                max: MAX_LEN,
            });
        }
        let positions: Vec<usize> = (1..=words.len()).collect();
        self.embed(g, words, tags, &positions)
    }

    /// Returns `(z, z + e)` as graph variables.
    pub fn encode_graph(&self, g: &mut Graph<'_, T>, words: &[u32], tags: &[u32]) -> Result<(Var, Var)> {
        let e = self.embed_question(g, words, tags)?;
        let k = self.config.enc_kernel;
        let mut h = e;
        for &(w, b) in &self.layout.enc {
            let (w, b) = (g.param(w), g.param(b));
            let conv = g.conv1d(h, w, b, k, Padding::centered(k))?;
            let gated = g.glu(conv)?;
            h = g.add(gated, h)?;
        }
        let (w, b) = (g.param(self.layout.enc_out.0), g.param(self.layout.enc_out.1));
        let z = g.linear(h, w, Some(b))?;
        let values = g.add(z, e)?;
        Ok((z, values))
    }

    pub fn encode(&self, words: &[u32], tags: &[u32]) -> Result<Encoded<T>> {
        let mut g = Graph::new(&self.params);
        let (z, values) = self.encode_graph(&mut g, words, tags)?;
        Ok(Encoded {
            z: g.value(z).clone(),
            values: g.value(values).clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EmbeddingTable, Vocabulary};
    use crate::model::ModelConfig;

    fn model(cfg: ModelConfig) -> Model<f64> {
        let v = Vocabulary::from_words(&["a", "b", "c", "d", "e", "f"], &[]);
        let w = EmbeddingTable::seeded(&v, cfg.dim, 9);
        Model::init(cfg, &w, 4, vec![1; v.len()], 2).unwrap()
    }

    fn small(dim: usize, layers: usize, k: usize) -> ModelConfig {
        ModelConfig {
            dim,
            enc_layers: layers,
            dec_layers: 1,
            enc_kernel: k,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_tables_embed_to_zero_and_ablation_drops_tags() {
        let mut m = model(small(3, 1, 2));
        for name in ["embed.word", "embed.pos", "embed.position"] {
            m.param_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new(&m.params);
        let e = m.embed_question(&mut g, &[4, 5], &[2, 3]).unwrap();
        assert!(g.value(e).data().iter().all(|&v| v == 0.0));

        let m = model(ModelConfig {
            use_pos: false,
            ..small(3, 1, 2)
        });
        let mut g = Graph::new(&m.params);
        let e = m.embed_question(&mut g, &[4, 5], &[2, 3]).unwrap();
        let (w, p) = (m.param("embed.word").unwrap(), m.param("embed.position").unwrap());
        for (i, &word) in [4usize, 5].iter().enumerate() {
            for c in 0..3 {
                assert_eq!(g.value(e).row(i)[c], w.row(word)[c] + p.row(i + 1)[c]);
            }
        }
    }

    #[test]
    fn planted_tables_sum_componentwise() {
        let mut m = model(small(4, 1, 2));
        let mut set = |name: &str, row: usize, v: [f64; 4]| {
            m.param_mut(name).unwrap().row_mut(row).copy_from_slice(&v);
        };
        set("embed.word", 5, [1.0, 0.0, 0.0, 0.0]);
        set("embed.pos", 2, [0.0, 10.0, 0.0, 0.0]);
        set("embed.position", 1, [0.0, 0.0, 100.0, 0.5]);
        let mut g = Graph::new(&m.params);
        let e = m.embed_question(&mut g, &[5], &[2]).unwrap();
        assert_eq!(g.value(e).row(0), &[1.0, 10.0, 100.0, 0.5]);
    }

    #[test]
    fn zero_kernels_pass_embeddings_through() {
        let mut m = model(small(5, 3, 2));
        for l in 0..3 {
            for part in ["w", "b"] {
                let t = m.param_mut(&format!("enc.{l}.conv.{part}")).unwrap();
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let w = m.param_mut("enc.out.w").unwrap();
        for r in 0..5 {
            for c in 0..5 {
                w.row_mut(r)[c] = if r == c { 1.0 } else { 0.0 };
            }
        }
        let (words, tags) = ([4, 6, 7, 4], [1, 2, 3, 1]);
        let out = m.encode(&words, &tags).unwrap();
        let mut g = Graph::new(&m.params);
        let e = m.embed_question(&mut g, &words, &tags).unwrap();
        assert_eq!(&out.z, g.value(e));
    }

    #[test]
    fn hand_computed_single_layer() {
        // d = 1, k = 1: z1 = a * sigmoid(c) + e with conv rows (a, c).
        let mut m = model(ModelConfig {
            use_pos: false,
            ..small(1, 1, 1)
        });
        m.param_mut("embed.word").unwrap().row_mut(4)[0] = 0.5;
        m.param_mut("embed.position").unwrap().row_mut(1)[0] = 0.25;
        let w = m.param_mut("enc.0.conv.w").unwrap();
        w.data_mut().copy_from_slice(&[2.0, -1.0]);
        m.param_mut("enc.0.conv.b").unwrap().data_mut().copy_from_slice(&[0.1, 0.2]);
        m.param_mut("enc.out.w").unwrap().data_mut()[0] = 3.0;
        m.param_mut("enc.out.b").unwrap().data_mut()[0] = -1.0;
        let out = m.encode(&[4], &[0]).unwrap();
        let e: f64 = 0.75;
        let a = 2.0 * e + 0.1;
        let c = -e + 0.2;
        let h = a / (1.0 + (-c).exp()) + e;
        let z = 3.0 * h - 1.0;
        assert!((out.z.data()[0] - z).abs() < 1e-15);
        assert!((out.values.data()[0] - (z + e)).abs() < 1e-15);
    }

    #[test]
    fn single_token_change_stays_inside_receptive_field() {
        // k = 2 covers offsets 0 and +1, so four layers reach positions
        // i-4..=i from token i.
        let m = model(small(4, 4, 2));
        let base = [4u32, 5, 6, 7, 8, 9, 4, 5, 6, 7, 8, 9];
        let tags = [1u32; 12];
        let a = m.encode(&base, &tags).unwrap();
        for i in 0..base.len() {
            let mut edit = base;
            edit[i] = if base[i] == 4 { 5 } else { 4 };
            let b = m.encode(&edit, &tags).unwrap();
            for pos in 0..base.len() {
                let reachable = pos <= i && i - pos <= 4;
                if !reachable {
                    assert_eq!(a.z.row(pos), b.z.row(pos), "pos {pos} changed by edit at {i}");
                }
            }
            assert_ne!(a.z.row(i), b.z.row(i));
        }
    }

    #[test]
    fn overlong_question_is_a_length_error() {
        let m = model(small(2, 1, 2));
        let words = vec![4u32; MAX_LEN + 1];
        let err = m.encode(&words, &[1; MAX_LEN + 1]).unwrap_err();
        assert!(matches!(err, Error::Length { .. }));
    }
}

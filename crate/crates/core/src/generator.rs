//! Causal gated-convolution decoder with per-layer question attention and
//! review injection.
//!
//! The teacher-forced path builds the whole answer on the tape; the
//! incremental path computes one position at a time from cached layer
//! inputs. Both evaluate every row with the same kernels in the same order.

use crate::corpus::{END, START};
use crate::encoder::Encoded;
use crate::error::{Error, Result};
use crate::model::{Example, Model, MAX_LEN};
use crate::numerics::kernels::{
    add_row, affine_row, dot_rows, gate_mix_row, glu_row, log_softmax_row, sigmoid, softmax_row, weighted_sum_row,
};
use crate::numerics::{Gradients, Graph, Padding, Scalar, Tensor, Var};

/// Encoded question and review memory for one example.
#[derive(Clone, Debug)]
pub struct DecodeContext<T> {
    pub encoded: Encoded<T>,
    /// Magnified snippet-word embeddings; `None` when review guidance is
    /// off or the snippet vocabulary is empty.
    pub review: Option<Tensor<T>>,
    /// Review guidance is enabled but this example had no snippet words, so
    /// the plain `h + c` update is used.
    pub review_fallback: bool,
}

/// Result of [`Model::review_injection`].
#[derive(Clone, Debug, PartialEq)]
pub struct Injection<T> {
    pub hidden: Vec<T>,
    pub gate: Option<T>,
    pub summary: Option<Vec<T>>,
}

/// Prefix `y_0..y_j` plus every layer's inputs at positions `0..j`.
#[derive(Clone, Debug)]
pub struct DecoderState<T> {
    tokens: Vec<u32>,
    layer_inputs: Vec<Vec<T>>,
    processed: usize,
}

impl<T: Scalar> DecoderState<T> {
    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    /// Generated tokens, without START.
    pub fn generated(&self) -> &[u32] {
        &self.tokens[1..]
    }

    pub fn push(&mut self, token: u32) {
        self.tokens.push(token);
    }
}

pub struct ExampleLoss<T> {
    /// Summed negative log-likelihood over the answer and END.
    pub nll: T,
    pub tokens: usize,
    pub grads: Gradients<T>,
}

/// Copies the `k` rows ending at `pos` out of row-major `rows`, with zero
/// rows before the start.
fn causal_window<T: Scalar>(rows: &[T], d: usize, pos: usize, k: usize, window: &mut [T]) {
    for s in 0..k {
        let dst = &mut window[s * d..(s + 1) * d];
        match (pos + s).checked_sub(k - 1) {
            Some(r) => dst.copy_from_slice(&rows[r * d..(r + 1) * d]),
            None => dst.iter_mut().for_each(|v| *v = T::zero()),
        }
    }
}

impl<T: Scalar> Model<T> {
    pub fn decoder_state(&self) -> DecoderState<T> {
        DecoderState {
            tokens: vec![START],
            layer_inputs: vec![Vec::new(); self.config.dec_layers],
            processed: 0,
        }
    }

    pub fn context(&self, ex: &Example) -> Result<DecodeContext<T>> {
        let encoded = self.encode(&ex.question, &ex.question_tags)?;
        let review = match &ex.review {
            Some(r) if self.config.use_review && r.rows() > 0 => {
                if r.cols() != self.dim() {
                    return Err(Error::shape(format!("review memory width {} for dim {}", r.cols(), self.dim())));
                }
                Some(Tensor::from_f64(r.shape().to_vec(), r.data())?)
            }
            _ => None,
        };
        Ok(DecodeContext {
            review_fallback: self.config.use_review && review.is_none(),
            encoded,
            review,
        })
    }

    /// Tag id fed to the decoder for a generated word.
    fn decoder_tag(&self, word: u32) -> u32 {
        self.tag_table.get(word as usize).copied().unwrap_or(crate::corpus::TAG_UNK)
    }

    /// `d = W_d h + b_d + e_y`, then attention of `d` over `z` with values
    /// `z + e_x`. Returns the context vector and the attention weights.
    pub fn question_attention(&self, layer: usize, h: &[T], e_y: &[T], enc: &Encoded<T>) -> (Vec<T>, Vec<T>) {
        let ids = &self.layout.dec[layer];
        let d = self.dim();
        let mut q = vec![T::zero(); d];
        affine_row(
            self.params.tensor(ids.att_w).data(),
            Some(self.params.tensor(ids.att_b).data()),
            h,
            &mut q,
        );
        let mut query = vec![T::zero(); d];
        add_row(&q, e_y, &mut query);
        let m = enc.z.rows();
        let mut scores = vec![T::zero(); m];
        dot_rows(&query, &enc.z, &mut scores);
        let mut weights = vec![T::zero(); m];
        softmax_row(&scores, &mut weights);
        let mut c = vec![T::zero(); d];
        weighted_sum_row(&weights, &enc.values, &mut c);
        (c, weights)
    }

    /// Attends from `c` over the review memory, gates between `c` and the
    /// review summary `o`, and returns `h + g c + (1 - g) o`. Without a
    /// memory (or with guidance off) the update is `h + c`.
    pub fn review_injection(&self, layer: usize, h: &[T], c: &[T], review: Option<&Tensor<T>>) -> Injection<T> {
        let d = self.dim();
        let mut out = vec![T::zero(); d];
        let (Some(gate_ids), Some(mem)) = (self.layout.dec[layer].gate, review) else {
            add_row(h, c, &mut out);
            return Injection {
                hidden: out,
                gate: None,
                summary: None,
            };
        };
        let n = mem.rows();
        let mut scores = vec![T::zero(); n];
        dot_rows(c, mem, &mut scores);
        let mut weights = vec![T::zero(); n];
        softmax_row(&scores, &mut weights);
        let mut o = vec![T::zero(); d];
        weighted_sum_row(&weights, mem, &mut o);

        let mut cat = Vec::with_capacity(3 * d);
        cat.extend_from_slice(h);
        cat.extend_from_slice(c);
        cat.extend_from_slice(&o);
        let [hw, hb, ow, ob] = gate_ids;
        let mut hidden = vec![T::zero(); d];
        affine_row(
            self.params.tensor(hw).data(),
            Some(self.params.tensor(hb).data()),
            &cat,
            &mut hidden,
        );
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        let mut logit = [T::zero()];
        affine_row(
            self.params.tensor(ow).data(),
            Some(self.params.tensor(ob).data()),
            &hidden,
            &mut logit,
        );
        let g = sigmoid(logit[0]);
        gate_mix_row(h, c, &o, g, &mut out);
        Injection {
            hidden: out,
            gate: Some(g),
            summary: Some(o),
        }
    }

    /// Decoder on the tape. `inputs` are `y_0..y_n` (START first); returns
    /// logits, one row per input position.
    pub fn decoder_graph(
        &self,
        g: &mut Graph<'_, T>,
        z: Var,
        values: Var,
        review: Option<Var>,
        inputs: &[u32],
    ) -> Result<Var> {
        if inputs.len() > MAX_LEN + 1 {
            return Err(Error::Length {
                len: inputs.len() - 1,
                max: MAX_LEN,
            });
        }
        let tags: Vec<u32> = inputs.iter().map(|&w| self.decoder_tag(w)).collect();
        let positions: Vec<usize> = (0..inputs.len()).collect();
        let e = self.embed(g, inputs, &tags, &positions)?;
        let k = self.config.dec_kernel;
        let mut h = e;
        for ids in &self.layout.dec {
            let (cw, cb) = (g.param(ids.conv_w), g.param(ids.conv_b));
            let conv = g.conv1d(h, cw, cb, k, Padding::causal(k))?;
            let gated = g.glu(conv)?;

            let (aw, ab) = (g.param(ids.att_w), g.param(ids.att_b));
            let q = g.linear(gated, aw, Some(ab))?;
            let query = g.add(q, e)?;
            let scores = g.matmul_t(query, z)?;
            let weights = g.softmax_rows(scores)?;
            let c = g.matmul(weights, values)?;

            let mixed = match (ids.gate, review) {
                (Some([hw, hb, ow, ob]), Some(mem)) => {
                    let rs = g.matmul_t(c, mem)?;
                    let rw = g.softmax_rows(rs)?;
                    let o = g.matmul(rw, mem)?;
                    let cat = g.concat_cols(&[gated, c, o])?;
                    let (hw, hb) = (g.param(hw), g.param(hb));
                    let hidden = g.linear(cat, hw, Some(hb))?;
                    let hidden = g.tanh(hidden);
                    let (ow, ob) = (g.param(ow), g.param(ob));
                    let logit = g.linear(hidden, ow, Some(ob))?;
                    let gate = g.sigmoid(logit);
                    g.gate_mix(gated, c, o, gate)?
                }
                _ => g.add(gated, c)?,
            };
            h = g.add(mixed, h)?;
        }
        let (ow, ob) = (g.param(self.layout.out.0), g.param(self.layout.out.1));
        g.linear(h, ow, Some(ob))
    }

    /// Full teacher-forced forward pass. Returns the logits variable and the
    /// targets `y_1..y_n, END`.
    pub fn forward_graph(&self, g: &mut Graph<'_, T>, ex: &Example) -> Result<(Var, Vec<usize>)> {
        if ex.answer.len() > MAX_LEN {
            return Err(Error::Length {
                len: ex.answer.len(),
                max: MAX_LEN,
            });
        }
        let (z, values) = self.encode_graph(g, &ex.question, &ex.question_tags)?;
        let review = match &ex.review {
            Some(r) if self.config.use_review && r.rows() > 0 => {
                Some(g.constant(Tensor::from_f64(r.shape().to_vec(), r.data())?))
            }
            _ => None,
        };
        let inputs: Vec<u32> = std::iter::once(START).chain(ex.answer.iter().copied()).collect();
        let logits = self.decoder_graph(g, z, values, review, &inputs)?;
        let targets = ex.answer.iter().map(|&w| w as usize).chain([END as usize]).collect();
        Ok((logits, targets))
    }

    /// Next-word log-probabilities at every teacher-forced step.
    pub fn forward_log_probs(&self, ex: &Example) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.params);
        let (logits, _) = self.forward_graph(&mut g, ex)?;
        let lt = g.value(logits);
        let mut out = Tensor::zeros(lt.shape());
        for r in 0..lt.rows() {
            log_softmax_row(lt.row(r), out.row_mut(r));
        }
        Ok(out)
    }

    /// Summed NLL of the gold answer plus END, with gradients.
    pub fn example_loss(&self, ex: &Example) -> Result<ExampleLoss<T>> {
        let mut g = Graph::new(&self.params);
        let (logits, targets) = self.forward_graph(&mut g, ex)?;
        let loss = g.cross_entropy_sum(logits, &targets)?;
        let nll = g.value(loss).item().expect("scalar");
        Ok(ExampleLoss {
            nll,
            tokens: targets.len(),
            grads: g.backward(loss)?,
        })
    }

    /// Summed NLL without gradients.
    pub fn example_nll(&self, ex: &Example) -> Result<(T, usize)> {
        let mut g = Graph::new(&self.params);
        let (logits, targets) = self.forward_graph(&mut g, ex)?;
        let loss = g.cross_entropy_sum(logits, &targets)?;
        Ok((g.value(loss).item().expect("scalar"), targets.len()))
    }

    /// Processes the last token of `state` and returns log-probabilities of
    /// the next one.
    pub fn step(&self, state: &mut DecoderState<T>, ctx: &DecodeContext<T>) -> Result<Vec<T>> {
        let j = state.tokens.len() - 1;
        if state.processed != j {
            return Err(Error::shape("decoder state already advanced past its last token"));
        }
        if j > MAX_LEN {
            return Err(Error::MaxLength(MAX_LEN));
        }
        let d = self.dim();
        let token = state.tokens[j];
        if token as usize >= self.vocab_size() {
            return Err(Error::shape(format!("token {token} outside the vocabulary")));
        }

        let word = self.params.tensor(self.layout.word).row(token as usize);
        let mut e = word.to_vec();
        if let Some(pos) = self.layout.pos {
            let t = self.params.tensor(pos).row(self.decoder_tag(token) as usize);
            add_row(word, t, &mut e);
        }
        let mut e_y = vec![T::zero(); d];
        add_row(&e, self.params.tensor(self.layout.position).row(j), &mut e_y);

        let k = self.config.dec_kernel;
        let mut window = vec![T::zero(); k * d];
        let mut conv = vec![T::zero(); 2 * d];
        let mut gated = vec![T::zero(); d];
        let mut h = e_y.clone();
        for (l, ids) in self.layout.dec.iter().enumerate() {
            let cache = &mut state.layer_inputs[l];
            cache.extend_from_slice(&h);
            causal_window(cache, d, j, k, &mut window);
            affine_row(
                self.params.tensor(ids.conv_w).data(),
                Some(self.params.tensor(ids.conv_b).data()),
                &window,
                &mut conv,
            );
            glu_row(&conv, &mut gated);
            let (c, _) = self.question_attention(l, &gated, &e_y, &ctx.encoded);
            let mixed = self.review_injection(l, &gated, &c, ctx.review.as_ref()).hidden;
            let mut next = vec![T::zero(); d];
            add_row(&mixed, &h, &mut next);
            h = next;
        }
        state.processed = j + 1;

        let (ow, ob) = self.layout.out;
        let mut logits = vec![T::zero(); self.vocab_size()];
        affine_row(
            self.params.tensor(ow).data(),
            Some(self.params.tensor(ob).data()),
            &h,
            &mut logits,
        );
        let mut lp = vec![T::zero(); logits.len()];
        log_softmax_row(&logits, &mut lp);
        Ok(lp)
    }
}

//! Learnable arrays and their canonical flat ordering.
//!
//! The flat order defined by `flatten`/`flatten_mut`/`from_flat` is the
//! contract for checkpoints and optimizer state: embeddings (all eight types
//! in order), then per-layer blocks, the final norm, the family head, and
//! one conditioned head per remaining type.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{TransformerConfig, INIT_STD};
use crate::error::{Error, Result};
use crate::numerics::{Array, Real};
use crate::vocab::{TokenType, Vocabulary};

/// The seven types predicted by conditioned heads, in [`TokenType`] order.
pub const NON_FAMILY_TYPES: [TokenType; 7] = [
    TokenType::Tempo,
    TokenType::Chord,
    TokenType::BarBeat,
    TokenType::Pitch,
    TokenType::Duration,
    TokenType::Velocity,
    TokenType::Genre,
];

#[derive(Debug, Clone)]
pub struct LayerParams<F: Real> {
    pub ln1_gain: Array<F>,
    pub ln1_bias: Array<F>,
    pub wq: Array<F>,
    pub bq: Array<F>,
    pub wk: Array<F>,
    pub bk: Array<F>,
    pub wv: Array<F>,
    pub bv: Array<F>,
    pub wo: Array<F>,
    pub bo: Array<F>,
    pub ln2_gain: Array<F>,
    pub ln2_bias: Array<F>,
    pub ff_w1: Array<F>,
    pub ff_b1: Array<F>,
    pub ff_w2: Array<F>,
    pub ff_b2: Array<F>,
}

/// Two-layer head mapping `concat(hidden, family embedding)` to one type's
/// logits.
#[derive(Debug, Clone)]
pub struct HeadParams<F: Real> {
    pub w1: Array<F>,
    pub b1: Array<F>,
    pub w2: Array<F>,
    pub b2: Array<F>,
}

#[derive(Debug, Clone)]
pub struct TransformerParams<F: Real> {
    /// One table per token type: `[vocab_size × type_dim]`.
    pub embeddings: Vec<Array<F>>,
    pub layers: Vec<LayerParams<F>>,
    pub final_gain: Array<F>,
    pub final_bias: Array<F>,
    /// Affine `d_model → |FAMILY|`.
    pub family_w: Array<F>,
    pub family_b: Array<F>,
    /// Conditioned heads in [`NON_FAMILY_TYPES`] order.
    pub heads: Vec<HeadParams<F>>,
}

impl<F: Real> TransformerParams<F> {
    /// All arrays zero. Heads then emit all-zero logits (uniform softmax).
    pub fn zeros(cfg: &TransformerConfig, vocab: &Vocabulary) -> Self {
        Self::build(cfg, vocab, |shape| Array::zeros(shape), |shape| Array::zeros(shape))
    }

    /// Weights and embeddings from N(0, 0.02²); biases zero; norm gains one.
    pub fn init(cfg: &TransformerConfig, vocab: &Vocabulary, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid stddev");
        let mut params = Self::build(
            cfg,
            vocab,
            |shape| {
                let numel = shape.iter().product();
                let data = (0..numel).map(|_| F::from_f64(normal.sample(&mut rng))).collect();
                Array::new(shape, data).expect("shape matches data")
            },
            |shape| Array::zeros(shape),
        );
        // norm gains start at identity
        for l in &mut params.layers {
            for g in [&mut l.ln1_gain, &mut l.ln2_gain] {
                for v in g.data_mut() {
                    *v = F::ONE;
                }
            }
        }
        for v in params.final_gain.data_mut() {
            *v = F::ONE;
        }
        params
    }

    fn build(
        cfg: &TransformerConfig,
        vocab: &Vocabulary,
        mut weight: impl FnMut(Vec<usize>) -> Array<F>,
        mut bias: impl FnMut(Vec<usize>) -> Array<F>,
    ) -> Self {
        let d = cfg.d_model;
        let embeddings = TokenType::ALL
            .iter()
            .map(|&t| weight(vec![vocab.size(t) as usize, cfg.type_dims[t.index()]]))
            .collect();
        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams {
                ln1_gain: bias(vec![d]),
                ln1_bias: bias(vec![d]),
                wq: weight(vec![d, d]),
                bq: bias(vec![d]),
                wk: weight(vec![d, d]),
                bk: bias(vec![d]),
                wv: weight(vec![d, d]),
                bv: bias(vec![d]),
                wo: weight(vec![d, d]),
                bo: bias(vec![d]),
                ln2_gain: bias(vec![d]),
                ln2_bias: bias(vec![d]),
                ff_w1: weight(vec![d, cfg.ff_hidden]),
                ff_b1: bias(vec![cfg.ff_hidden]),
                ff_w2: weight(vec![cfg.ff_hidden, d]),
                ff_b2: bias(vec![d]),
            })
            .collect();
        let heads = NON_FAMILY_TYPES
            .iter()
            .map(|&t| HeadParams {
                w1: weight(vec![d + cfg.family_dim(), cfg.head_hidden]),
                b1: bias(vec![cfg.head_hidden]),
                w2: weight(vec![cfg.head_hidden, vocab.size(t) as usize]),
                b2: bias(vec![vocab.size(t) as usize]),
            })
            .collect();
        TransformerParams {
            embeddings,
            layers,
            final_gain: bias(vec![d]),
            final_bias: bias(vec![d]),
            family_w: weight(vec![d, vocab.size(TokenType::Family) as usize]),
            family_b: bias(vec![vocab.size(TokenType::Family) as usize]),
            heads,
        }
    }

    /// Immutable views of every array in canonical order.
    pub fn flatten(&self) -> Vec<&Array<F>> {
        let mut out: Vec<&Array<F>> = Vec::new();
        out.extend(self.embeddings.iter());
        for l in &self.layers {
            out.extend([
                &l.ln1_gain, &l.ln1_bias, &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo,
                &l.bo, &l.ln2_gain, &l.ln2_bias, &l.ff_w1, &l.ff_b1, &l.ff_w2, &l.ff_b2,
            ]);
        }
        out.extend([&self.final_gain, &self.final_bias, &self.family_w, &self.family_b]);
        for h in &self.heads {
            out.extend([&h.w1, &h.b1, &h.w2, &h.b2]);
        }
        out
    }

    /// Mutable views in the same canonical order as `flatten`.
    pub fn flatten_mut(&mut self) -> Vec<&mut Array<F>> {
        let mut out: Vec<&mut Array<F>> = Vec::new();
        out.extend(self.embeddings.iter_mut());
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1_gain, &mut l.ln1_bias, &mut l.wq, &mut l.bq, &mut l.wk, &mut l.bk,
                &mut l.wv, &mut l.bv, &mut l.wo, &mut l.bo, &mut l.ln2_gain, &mut l.ln2_bias,
                &mut l.ff_w1, &mut l.ff_b1, &mut l.ff_w2, &mut l.ff_b2,
            ]);
        }
        out.extend([&mut self.final_gain, &mut self.final_bias, &mut self.family_w, &mut self.family_b]);
        for h in &mut self.heads {
            out.extend([&mut h.w1, &mut h.b1, &mut h.w2, &mut h.b2]);
        }
        out
    }

    /// Rebuild from owned arrays in canonical order (shapes are validated
    /// against the config/vocabulary-derived template).
    pub fn from_flat(
        cfg: &TransformerConfig,
        vocab: &Vocabulary,
        arrays: Vec<Array<F>>,
    ) -> Result<Self> {
        let mut template = Self::zeros(cfg, vocab);
        {
            let slots = template.flatten_mut();
            if slots.len() != arrays.len() {
                return Err(Error::dim(format!(
                    "expected {} arrays, got {}",
                    slots.len(),
                    arrays.len()
                )));
            }
            for (slot, arr) in slots.into_iter().zip(arrays) {
                if slot.shape() != arr.shape() {
                    return Err(Error::dim(format!(
                        "array shape {:?} does not match expected {:?}",
                        arr.shape(),
                        slot.shape()
                    )));
                }
                *slot = arr;
            }
        }
        Ok(template)
    }

    pub fn num_params(&self) -> usize {
        self.flatten().iter().map(|a| a.numel()).sum()
    }

    pub fn cast<G: Real>(&self) -> TransformerParams<G> {
        TransformerParams {
            embeddings: self.embeddings.iter().map(Array::cast).collect(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_gain: l.ln1_gain.cast(),
                    ln1_bias: l.ln1_bias.cast(),
                    wq: l.wq.cast(),
                    bq: l.bq.cast(),
                    wk: l.wk.cast(),
                    bk: l.bk.cast(),
                    wv: l.wv.cast(),
                    bv: l.bv.cast(),
                    wo: l.wo.cast(),
                    bo: l.bo.cast(),
                    ln2_gain: l.ln2_gain.cast(),
                    ln2_bias: l.ln2_bias.cast(),
                    ff_w1: l.ff_w1.cast(),
                    ff_b1: l.ff_b1.cast(),
                    ff_w2: l.ff_w2.cast(),
                    ff_b2: l.ff_b2.cast(),
                })
                .collect(),
            final_gain: self.final_gain.cast(),
            final_bias: self.final_bias.cast(),
            family_w: self.family_w.cast(),
            family_b: self.family_b.cast(),
            heads: self
                .heads
                .iter()
                .map(|h| HeadParams {
                    w1: h.w1.cast(),
                    b1: h.b1.cast(),
                    w2: h.w2.cast(),
                    b2: h.b2.cast(),
                })
                .collect(),
        }
    }
}

/// Closed-form parameter count for a (config, vocabulary) pair:
///
/// `Σ_t V_t·d_t  +  L·(4(d²+d) + 2·d·ff + ff + d + 4d)  +  2d  +  (d·V_fam + V_fam)
///  +  Σ_{t≠fam} ((d+d_fam)·H + H + H·V_t + V_t)`
pub fn param_count(cfg: &TransformerConfig, vocab: &Vocabulary) -> usize {
    let d = cfg.d_model;
    let ff = cfg.ff_hidden;
    let h = cfg.head_hidden;
    let fam = vocab.size(TokenType::Family) as usize;

    let embeddings: usize = TokenType::ALL
        .iter()
        .map(|&t| vocab.size(t) as usize * cfg.type_dims[t.index()])
        .sum();
    let per_layer = 4 * (d * d + d) // qkvo + biases
        + 4 * d                      // two norms
        + d * ff + ff + ff * d + d; // feed-forward
    let heads: usize = NON_FAMILY_TYPES
        .iter()
        .map(|&t| {
            let v = vocab.size(t) as usize;
            (d + cfg.family_dim()) * h + h + h * v + v
        })
        .sum();
    embeddings + cfg.n_layers * per_layer + 2 * d + (d * fam + fam) + heads
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_count_matches_arrays() {
        let vocab = Vocabulary::build();
        for cfg in [TransformerConfig::toy(), TransformerConfig::default()] {
            let params = TransformerParams::<f32>::zeros(&cfg, &vocab);
            assert_eq!(params.num_params(), param_count(&cfg, &vocab), "{cfg:?}");
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let vocab = Vocabulary::build();
        let cfg = TransformerConfig::toy();
        let a = TransformerParams::<f32>::init(&cfg, &vocab, 7);
        let b = TransformerParams::<f32>::init(&cfg, &vocab, 7);
        for (x, y) in a.flatten().iter().zip(b.flatten()) {
            assert_eq!(x.data(), y.data());
        }
        let c = TransformerParams::<f32>::init(&cfg, &vocab, 8);
        assert_ne!(a.family_w.data(), c.family_w.data());
    }

    #[test]
    fn flat_round_trip_preserves_arrays() {
        let vocab = Vocabulary::build();
        let cfg = TransformerConfig::toy();
        let params = TransformerParams::<f32>::init(&cfg, &vocab, 3);
        let arrays: Vec<Array<f32>> = params.flatten().into_iter().cloned().collect();
        let back = TransformerParams::from_flat(&cfg, &vocab, arrays).unwrap();
        for (x, y) in params.flatten().iter().zip(back.flatten()) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn head_logit_arities_follow_vocab() {
        let vocab = Vocabulary::build();
        let cfg = TransformerConfig::toy();
        let params = TransformerParams::<f32>::zeros(&cfg, &vocab);
        let sizes: Vec<usize> = params.heads.iter().map(|h| h.b2.numel()).collect();
        assert_eq!(sizes, vec![34, 122, 19, 90, 34, 34, 6]);
    }
}

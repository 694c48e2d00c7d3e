//! Incremental inference: one word in, one hidden state out, with constant
//! per-step cost via the recurrent linear-attention state.
//!
//! No tape involved — this is the generation path. After t steps each head's
//! state equals the prefix sums `Σ φ(kᵢ)vᵢᵀ` and `Σ φ(kᵢ)` over i ≤ t, so a
//! step's cost is independent of the position.

use super::forward::positional_encoding_row;
use super::params::{HeadParams, TransformerParams};
use super::{TransformerConfig, ATTN_EPS, LN_EPS};
use crate::error::{Error, Result};
use crate::numerics::{Array, Real};
use crate::vocab::{CompoundWord, TokenType, Vocabulary};

/// Running per-head attention state.
struct AttentionState<F: Real> {
    /// dk × dv prefix sum of φ(k)vᵀ (row-major).
    s: Vec<F>,
    /// dk prefix sum of φ(k).
    z: Vec<F>,
}

impl<F: Real> AttentionState<F> {
    fn new(dk: usize, dv: usize) -> Self {
        AttentionState { s: vec![F::ZERO; dk * dv], z: vec![F::ZERO; dk] }
    }
}

/// Autoregressive evaluation state over a fixed parameter set.
pub struct GenState<'a, F: Real> {
    params: &'a TransformerParams<F>,
    cfg: &'a TransformerConfig,
    heads: Vec<Vec<AttentionState<F>>>,
    position: usize,
}

impl<'a, F: Real> GenState<'a, F> {
    pub fn new(params: &'a TransformerParams<F>, cfg: &'a TransformerConfig) -> Self {
        let dh = cfg.head_dim();
        let heads = (0..cfg.n_layers)
            .map(|_| (0..cfg.n_heads).map(|_| AttentionState::new(dh, dh)).collect())
            .collect();
        GenState { params, cfg, heads, position: 0 }
    }

    pub fn position(&self) -> usize {
        self.position
    }

    /// Feed one word; returns the hidden state for its position.
    pub fn step(&mut self, word: &CompoundWord) -> Result<Vec<F>> {
        let cfg = self.cfg;
        let d = cfg.d_model;
        let dh = cfg.head_dim();
        let eps = F::from_f64(LN_EPS);
        let attn_eps = F::from_f64(ATTN_EPS);

        // embed: concat per-type embedding rows, add positional encoding
        let mut x = Vec::with_capacity(d);
        for t in TokenType::ALL {
            let table = &self.params.embeddings[t.index()];
            let id = word.get(t) as usize;
            if id >= table.rows() {
                return Err(Error::Index(format!(
                    "step {}: {t} id {id} exceeds vocabulary size {}",
                    self.position,
                    table.rows()
                )));
            }
            x.extend_from_slice(table.row(id));
        }
        let pe = positional_encoding_row::<F>(self.position, d);
        for (xi, pi) in x.iter_mut().zip(&pe) {
            *xi += *pi;
        }

        for (layer, states) in self.params.layers.iter().zip(&mut self.heads) {
            let a = layer_norm_row(&x, &layer.ln1_gain, &layer.ln1_bias, eps);
            let q = affine(&a, &layer.wq, &layer.bq);
            let k = affine(&a, &layer.wk, &layer.bk);
            let v = affine(&a, &layer.wv, &layer.bv);

            let mut merged = vec![F::ZERO; d];
            for (h, state) in states.iter_mut().enumerate() {
                let qh: Vec<F> = q[h * dh..(h + 1) * dh].iter().map(|&t| crate::numerics::elu_plus_one(t)).collect();
                let kh: Vec<F> = k[h * dh..(h + 1) * dh].iter().map(|&t| crate::numerics::elu_plus_one(t)).collect();
                let vh = &v[h * dh..(h + 1) * dh];

                for i in 0..dh {
                    let srow = &mut state.s[i * dh..(i + 1) * dh];
                    for j in 0..dh {
                        srow[j] += kh[i] * vh[j];
                    }
                    state.z[i] += kh[i];
                }
                let mut den = attn_eps;
                for i in 0..dh {
                    den += qh[i] * state.z[i];
                }
                let out = &mut merged[h * dh..(h + 1) * dh];
                for i in 0..dh {
                    let srow = &state.s[i * dh..(i + 1) * dh];
                    for j in 0..dh {
                        out[j] += qh[i] * srow[j];
                    }
                }
                for o in out.iter_mut() {
                    *o = *o / den;
                }
            }
            let att = affine(&merged, &layer.wo, &layer.bo);
            for (xi, ai) in x.iter_mut().zip(&att) {
                *xi += *ai;
            }

            let f = layer_norm_row(&x, &layer.ln2_gain, &layer.ln2_bias, eps);
            let mut h1 = affine(&f, &layer.ff_w1, &layer.ff_b1);
            for v in h1.iter_mut() {
                *v = crate::numerics::gelu(*v);
            }
            let h2 = affine(&h1, &layer.ff_w2, &layer.ff_b2);
            for (xi, hi) in x.iter_mut().zip(&h2) {
                *xi += *hi;
            }
        }

        let hidden = layer_norm_row(&x, &self.params.final_gain, &self.params.final_bias, eps);
        self.position += 1;
        Ok(hidden)
    }
}

/// `x·W + b` for a single row; `W` is `[in × out]`.
fn affine<F: Real>(x: &[F], w: &Array<F>, b: &Array<F>) -> Vec<F> {
    let out_dim = w.cols();
    let mut out = b.data().to_vec();
    debug_assert_eq!(out.len(), out_dim);
    for (i, &xi) in x.iter().enumerate() {
        let wrow = w.row(i);
        for j in 0..out_dim {
            out[j] += xi * wrow[j];
        }
    }
    out
}

fn layer_norm_row<F: Real>(x: &[F], gain: &Array<F>, bias: &Array<F>, eps: F) -> Vec<F> {
    let n = F::from_f64(x.len() as f64);
    let mut mean = F::ZERO;
    for &v in x {
        mean += v;
    }
    mean = mean / n;
    let mut var = F::ZERO;
    for &v in x {
        let d = v - mean;
        var += d * d;
    }
    var = var / n;
    let inv_std = F::ONE / (var + eps).sqrt();
    x.iter()
        .enumerate()
        .map(|(j, &v)| gain.data()[j] * (v - mean) * inv_std + bias.data()[j])
        .collect()
}

/// Family logits from a single hidden state.
pub fn family_logits<F: Real>(params: &TransformerParams<F>, hidden: &[F]) -> Vec<F> {
    affine(hidden, &params.family_w, &params.family_b)
}

/// Conditioned per-type logits from a single hidden state and a (sampled or
/// true) family id, in [`super::params::NON_FAMILY_TYPES`] order.
pub fn rest_logits<F: Real>(
    params: &TransformerParams<F>,
    vocab: &Vocabulary,
    hidden: &[F],
    family_id: u32,
) -> Result<Vec<Vec<F>>> {
    let fam_table = &params.embeddings[TokenType::Family.index()];
    if family_id as usize >= fam_table.rows() || family_id >= vocab.size(TokenType::Family) {
        return Err(Error::Index(format!("invalid family id {family_id}")));
    }
    let mut input = hidden.to_vec();
    input.extend_from_slice(fam_table.row(family_id as usize));

    let head_logits = |head: &HeadParams<F>| -> Vec<F> {
        let mut h1 = affine(&input, &head.w1, &head.b1);
        for v in h1.iter_mut() {
            *v = crate::numerics::gelu(*v);
        }
        affine(&h1, &head.w2, &head.b2)
    };
    Ok(params.heads.iter().map(head_logits).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward::{forward_on_tape, register_params};
    use crate::numerics::Tape;
    use crate::vocab::Vocabulary;

    #[test]
    fn incremental_matches_full_forward() {
        let vocab = Vocabulary::build();
        let cfg = TransformerConfig::toy();
        let params = TransformerParams::<f32>::init(&cfg, &vocab, 21);
        let genre = vocab.genre_id_of("edm").unwrap();

        let mut words = vec![CompoundWord::bar_word(&vocab, genre)];
        let mut beat = CompoundWord::bar_word(&vocab, genre);
        beat.set(TokenType::BarBeat, vocab.barbeat_beat_id(3).unwrap());
        beat.set(TokenType::Tempo, vocab.tempo_id_of_bpm(98.0));
        beat.set(TokenType::Chord, vocab.encode_label(TokenType::Chord, "F:sus2").unwrap());
        words.push(beat);
        let mut note = CompoundWord::from_ids([crate::vocab::IGNORE_ID; 8]);
        note.set(TokenType::Family, crate::vocab::FAMILY_NOTE);
        note.set(TokenType::Pitch, vocab.pitch_id_of(67).unwrap());
        note.set(TokenType::Duration, vocab.duration_id_of(8).unwrap());
        note.set(TokenType::Velocity, vocab.velocity_id_of(100));
        note.set(TokenType::Genre, genre);
        words.push(note);
        words.push(CompoundWord::bar_word(&vocab, genre));

        // full forward over the prefix, then one more step incrementally,
        // must match the full forward over the longer sequence
        let mut tape = Tape::new();
        let ids = register_params(&mut tape, &params, &cfg).unwrap();
        let full = forward_on_tape(&mut tape, &ids, &cfg, &words).unwrap();
        let full = tape.value(full).clone();

        let mut state = GenState::new(&params, &cfg);
        for (t, w) in words.iter().enumerate() {
            let hidden = state.step(w).unwrap();
            for (j, (&a, &b)) in hidden.iter().zip(full.row(t)).enumerate() {
                assert!(
                    (a - b).abs() < 1e-4,
                    "position {t} dim {j}: incremental {a} vs full {b}"
                );
            }
        }
    }

    #[test]
    fn family_and_rest_logits_match_tape_heads() {
        use crate::model::forward::{family_logits_on_tape, rest_logits_on_tape};
        let vocab = Vocabulary::build();
        let cfg = TransformerConfig::toy();
        let params = TransformerParams::<f32>::init(&cfg, &vocab, 33);
        let genre = vocab.genre_id_of("pop").unwrap();
        let words = vec![CompoundWord::bar_word(&vocab, genre); 3];

        let mut tape = Tape::new();
        let ids = register_params(&mut tape, &params, &cfg).unwrap();
        let hidden = forward_on_tape(&mut tape, &ids, &cfg, &words).unwrap();
        let fam = family_logits_on_tape(&mut tape, &ids, hidden).unwrap();
        let rest = rest_logits_on_tape(&mut tape, &ids, &vocab, hidden, &[1, 1, 1]).unwrap();

        let mut state = GenState::new(&params, &cfg);
        let mut last_hidden = Vec::new();
        for w in &words {
            last_hidden = state.step(w).unwrap();
        }
        let fam_inc = family_logits(&params, &last_hidden);
        for (a, b) in fam_inc.iter().zip(tape.value(fam).row(2)) {
            assert!((a - b).abs() < 1e-4);
        }
        let rest_inc = rest_logits(&params, &vocab, &last_hidden, 1).unwrap();
        for (head_idx, logits) in rest_inc.iter().enumerate() {
            for (a, b) in logits.iter().zip(tape.value(rest[head_idx]).row(2)) {
                assert!((a - b).abs() < 1e-4);
            }
        }

        assert!(rest_logits(&params, &vocab, &last_hidden, 40).is_err());
    }
}

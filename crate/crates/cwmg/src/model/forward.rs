//! Tape-recorded forward pass: embedding, attention stack, output heads.
//!
//! Everything here is built from tape primitives so one `backward` call
//! yields gradients for all parameters.

use super::params::{TransformerParams, NON_FAMILY_TYPES};
use super::{TransformerConfig, ATTN_EPS, LN_EPS};
use crate::error::{Error, Result};
use crate::numerics::{Array, Real, Tape, ValueId};
use crate::vocab::{CompoundWord, TokenType, Vocabulary};

/// Tape handles for every parameter array, mirroring [`TransformerParams`].
pub struct ParamIds {
    pub embeddings: Vec<ValueId>,
    pub layers: Vec<LayerIds>,
    pub final_gain: ValueId,
    pub final_bias: ValueId,
    pub family_w: ValueId,
    pub family_b: ValueId,
    pub heads: Vec<HeadIds>,
    /// All ids in canonical flat order (same order as `TransformerParams::flatten`).
    pub flat: Vec<ValueId>,
}

pub struct LayerIds {
    pub ln1_gain: ValueId,
    pub ln1_bias: ValueId,
    pub wq: ValueId,
    pub bq: ValueId,
    pub wk: ValueId,
    pub bk: ValueId,
    pub wv: ValueId,
    pub bv: ValueId,
    pub wo: ValueId,
    pub bo: ValueId,
    pub ln2_gain: ValueId,
    pub ln2_bias: ValueId,
    pub ff_w1: ValueId,
    pub ff_b1: ValueId,
    pub ff_w2: ValueId,
    pub ff_b2: ValueId,
}

pub struct HeadIds {
    pub w1: ValueId,
    pub b1: ValueId,
    pub w2: ValueId,
    pub b2: ValueId,
}

impl ParamIds {
    /// Group a canonical flat id list back into the structured view.
    /// The id order must match `TransformerParams::flatten`.
    pub fn from_flat(cfg: &TransformerConfig, flat: &[ValueId]) -> Result<Self> {
        let expected = TokenType::COUNT + cfg.n_layers * 16 + 4 + NON_FAMILY_TYPES.len() * 4;
        if flat.len() != expected {
            return Err(Error::dim(format!(
                "expected {expected} parameter ids, got {}",
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        let mut next = || it.next().expect("length checked above");
        let embeddings: Vec<ValueId> = (0..TokenType::COUNT).map(|_| next()).collect();
        let layers = (0..cfg.n_layers)
            .map(|_| LayerIds {
                ln1_gain: next(),
                ln1_bias: next(),
                wq: next(),
                bq: next(),
                wk: next(),
                bk: next(),
                wv: next(),
                bv: next(),
                wo: next(),
                bo: next(),
                ln2_gain: next(),
                ln2_bias: next(),
                ff_w1: next(),
                ff_b1: next(),
                ff_w2: next(),
                ff_b2: next(),
            })
            .collect();
        let final_gain = next();
        let final_bias = next();
        let family_w = next();
        let family_b = next();
        let heads = (0..NON_FAMILY_TYPES.len())
            .map(|_| HeadIds { w1: next(), b1: next(), w2: next(), b2: next() })
            .collect();
        Ok(ParamIds {
            embeddings,
            layers,
            final_gain,
            final_bias,
            family_w,
            family_b,
            heads,
            flat: flat.to_vec(),
        })
    }
}

/// Register all parameters as tape leaves (canonical order) and return the
/// structured handles.
pub fn register_params<F: Real>(
    tape: &mut Tape<F>,
    params: &TransformerParams<F>,
    cfg: &TransformerConfig,
) -> Result<ParamIds> {
    let flat: Vec<ValueId> = params.flatten().into_iter().map(|a| tape.leaf(a.clone())).collect();
    ParamIds::from_flat(cfg, &flat)
}

/// Sinusoidal positional encoding:
/// `PE[t, 2i] = sin(t / 10000^(2i/d))`, `PE[t, 2i+1] = cos(t / 10000^(2i/d))`.
pub fn positional_encoding<F: Real>(t_len: usize, d_model: usize) -> Array<F> {
    let mut data = vec![F::ZERO; t_len * d_model];
    for t in 0..t_len {
        for j in 0..d_model {
            let pair = (j / 2) * 2; // 2i
            let angle = t as f64 / 10000f64.powf(pair as f64 / d_model as f64);
            data[t * d_model + j] =
                F::from_f64(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Array::new(vec![t_len, d_model], data).expect("shape matches data")
}

/// Positional encoding for a single absolute position.
pub fn positional_encoding_row<F: Real>(position: usize, d_model: usize) -> Vec<F> {
    let mut row = vec![F::ZERO; d_model];
    for (j, slot) in row.iter_mut().enumerate() {
        let pair = (j / 2) * 2;
        let angle = position as f64 / 10000f64.powf(pair as f64 / d_model as f64);
        *slot = F::from_f64(if j % 2 == 0 { angle.sin() } else { angle.cos() });
    }
    row
}

/// Embed a word sequence: per-type embeddings concatenated in type order,
/// plus positional encoding. Output is `T × d_model`.
pub fn embed_sequence_on_tape<F: Real>(
    tape: &mut Tape<F>,
    ids: &ParamIds,
    cfg: &TransformerConfig,
    words: &[CompoundWord],
) -> Result<ValueId> {
    if words.is_empty() {
        return Err(Error::param("embed_sequence: empty word sequence"));
    }
    let mut parts = Vec::with_capacity(TokenType::COUNT);
    for t in TokenType::ALL {
        let table_rows = tape.value(ids.embeddings[t.index()]).rows();
        let indices: Vec<usize> = words
            .iter()
            .enumerate()
            .map(|(pos, w)| {
                let id = w.get(t) as usize;
                if id >= table_rows {
                    Err(Error::Index(format!(
                        "word {pos}: {t} id {id} exceeds vocabulary size {table_rows}"
                    )))
                } else {
                    Ok(id)
                }
            })
            .collect::<Result<_>>()?;
        parts.push(tape.gather_rows(ids.embeddings[t.index()], &indices)?);
    }
    let cat = tape.concat_cols(&parts)?;
    let pe = tape.leaf(positional_encoding(words.len(), cfg.d_model));
    tape.add(cat, pe)
}

/// Pre-norm residual stack over embedded input; `final_norm` controls the
/// closing layer norm (always on in the real model; off exposes the raw
/// residual stream for structural tests).
pub fn forward_hidden_on_tape<F: Real>(
    tape: &mut Tape<F>,
    ids: &ParamIds,
    cfg: &TransformerConfig,
    embedded: ValueId,
    final_norm: bool,
) -> Result<ValueId> {
    let t_len = tape.value(embedded).rows();
    if t_len > cfg.max_seq_len {
        return Err(Error::param(format!(
            "sequence length {t_len} exceeds max_seq_len {}",
            cfg.max_seq_len
        )));
    }
    let eps = F::from_f64(LN_EPS);
    let attn_eps = F::from_f64(ATTN_EPS);
    let dh = cfg.head_dim();

    let mut x = embedded;
    for layer in &ids.layers {
        let a = tape.layer_norm(x, layer.ln1_gain, layer.ln1_bias, eps)?;
        let q = tape.matmul(a, layer.wq)?;
        let q = tape.add_row_vec(q, layer.bq)?;
        let k = tape.matmul(a, layer.wk)?;
        let k = tape.add_row_vec(k, layer.bk)?;
        let v = tape.matmul(a, layer.wv)?;
        let v = tape.add_row_vec(v, layer.bv)?;
        let qf = tape.elu_plus_one(q);
        let kf = tape.elu_plus_one(k);

        let mut head_outs = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let qh = tape.slice_cols(qf, h * dh, dh)?;
            let kh = tape.slice_cols(kf, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            head_outs.push(tape.causal_linear_attention(qh, kh, vh, attn_eps)?);
        }
        let merged = tape.concat_cols(&head_outs)?;
        let att = tape.matmul(merged, layer.wo)?;
        let att = tape.add_row_vec(att, layer.bo)?;
        x = tape.add(x, att)?;

        let f = tape.layer_norm(x, layer.ln2_gain, layer.ln2_bias, eps)?;
        let h1 = tape.matmul(f, layer.ff_w1)?;
        let h1 = tape.add_row_vec(h1, layer.ff_b1)?;
        let h1 = tape.gelu(h1);
        let h2 = tape.matmul(h1, layer.ff_w2)?;
        let h2 = tape.add_row_vec(h2, layer.ff_b2)?;
        x = tape.add(x, h2)?;
    }
    if final_norm {
        x = tape.layer_norm(x, ids.final_gain, ids.final_bias, eps)?;
    }
    Ok(x)
}

/// Full forward: embed then run the stack with the final norm.
pub fn forward_on_tape<F: Real>(
    tape: &mut Tape<F>,
    ids: &ParamIds,
    cfg: &TransformerConfig,
    words: &[CompoundWord],
) -> Result<ValueId> {
    let embedded = embed_sequence_on_tape(tape, ids, cfg, words)?;
    forward_hidden_on_tape(tape, ids, cfg, embedded, true)
}

/// Family logits for every position: affine `d_model → |FAMILY|`.
pub fn family_logits_on_tape<F: Real>(
    tape: &mut Tape<F>,
    ids: &ParamIds,
    hidden: ValueId,
) -> Result<ValueId> {
    let l = tape.matmul(hidden, ids.family_w)?;
    tape.add_row_vec(l, ids.family_b)
}

/// Per-type logits conditioned on a family id per position (the true next
/// family when teacher forcing, the sampled one at generation):
/// `concat(hidden, E_FAMILY[family]) → two-layer head` per type.
pub fn rest_logits_on_tape<F: Real>(
    tape: &mut Tape<F>,
    ids: &ParamIds,
    vocab: &Vocabulary,
    hidden: ValueId,
    family_ids: &[u32],
) -> Result<Vec<ValueId>> {
    let rows = tape.value(hidden).rows();
    if family_ids.len() != rows {
        return Err(Error::dim(format!(
            "rest_logits: {} family ids for {} positions",
            family_ids.len(),
            rows
        )));
    }
    let fam_size = vocab.size(TokenType::Family) as usize;
    let indices: Vec<usize> = family_ids
        .iter()
        .map(|&id| {
            if (id as usize) < fam_size {
                Ok(id as usize)
            } else {
                Err(Error::Index(format!("invalid family id {id}")))
            }
        })
        .collect::<Result<_>>()?;
    let fam_emb = tape.gather_rows(ids.embeddings[TokenType::Family.index()], &indices)?;
    let input = tape.concat_cols(&[hidden, fam_emb])?;

    let mut logits = Vec::with_capacity(NON_FAMILY_TYPES.len());
    for head in &ids.heads {
        let h1 = tape.matmul(input, head.w1)?;
        let h1 = tape.add_row_vec(h1, head.b1)?;
        let h1 = tape.gelu(h1);
        let l = tape.matmul(h1, head.w2)?;
        let l = tape.add_row_vec(l, head.b2)?;
        logits.push(l);
    }
    Ok(logits)
}

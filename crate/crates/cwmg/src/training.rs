//! Teacher-forced training: per-type cross-entropy, epoch loop, loss report.
//!
//! Every position t predicts word t+1. Positions whose target word is
//! padding are masked out of every head's loss; `[ignore]` targets are real
//! classes the model must learn to emit. The reported mean is the unweighted
//! average of the eight per-type means.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{
    embed_sequence_on_tape, family_logits_on_tape, forward_hidden_on_tape, register_params,
    rest_logits_on_tape, TransformerConfig, TransformerParams, NON_FAMILY_TYPES,
};
use crate::numerics::{adam_step, clip_global_norm, AdamHyper, AdamState, Array, Real, Tape};
use crate::tokenizer::TokenSequence;
use crate::vocab::{CompoundWord, TokenType, Vocabulary};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Songs longer than this are split into overlapping windows.
    pub max_seq_len: usize,
    pub seed: u64,
    /// Emit a periodic checkpoint every N epochs (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            epochs: 180,
            learning_rate: 2e-4,
            clip_norm: 3.0,
            max_seq_len: 256,
            seed: 0,
            checkpoint_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    pub epoch: u64,
    /// Mean loss per token type, [`TokenType`] order.
    pub per_type: [f64; TokenType::COUNT],
    /// Unweighted average of the eight per-type means.
    pub mean: f64,
}

/// Loss curves: one entry per epoch, nine series overall.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossReport {
    pub epochs: Vec<EpochLoss>,
}

impl LossReport {
    /// `epoch,type,loss` rows; the ninth series is `mean`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,type,loss\n");
        for e in &self.epochs {
            for t in TokenType::ALL {
                let _ = writeln!(out, "{},{},{}", e.epoch, t.name(), e.per_type[t.index()]);
            }
            let _ = writeln!(out, "{},mean,{}", e.epoch, e.mean);
        }
        out
    }
}

/// Per-type cross-entropy sums of one teacher-forced sequence, as tape
/// nodes, plus the number of counted (non-padding) targets.
struct SequenceLossNodes {
    ce_sums: [crate::numerics::ValueId; TokenType::COUNT],
    counted: usize,
}

fn sequence_loss_nodes<F: Real>(
    tape: &mut Tape<F>,
    ids: &crate::model::ParamIds,
    cfg: &TransformerConfig,
    vocab: &Vocabulary,
    words: &[CompoundWord],
) -> Result<SequenceLossNodes> {
    let t_len = words.len();
    if t_len < 2 {
        return Err(Error::param(format!(
            "sequence_loss: need at least 2 words, got {t_len}"
        )));
    }
    let inputs = &words[..t_len - 1];
    let targets = &words[1..];

    let embedded = embed_sequence_on_tape(tape, ids, cfg, inputs)?;
    let hidden = forward_hidden_on_tape(tape, ids, cfg, embedded, true)?;

    let mask: Vec<bool> = targets.iter().map(|w| !w.is_padding()).collect();
    let counted = mask.iter().filter(|&&m| m).count();

    let family_targets: Vec<Option<usize>> = targets
        .iter()
        .zip(&mask)
        .map(|(w, &m)| m.then_some(w.family() as usize))
        .collect();
    let family_logits = family_logits_on_tape(tape, ids, hidden)?;
    let family_ce = tape.cross_entropy_sum(family_logits, family_targets)?;

    // teacher forcing: condition on the true family of the target word
    let true_families: Vec<u32> = targets.iter().map(|w| w.family()).collect();
    let rest = rest_logits_on_tape(tape, ids, vocab, hidden, &true_families)?;

    let mut ce_sums = [family_ce; TokenType::COUNT];
    for (head_idx, &t) in NON_FAMILY_TYPES.iter().enumerate() {
        let tt: Vec<Option<usize>> = targets
            .iter()
            .zip(&mask)
            .map(|(w, &m)| m.then_some(w.get(t) as usize))
            .collect();
        ce_sums[t.index()] = tape.cross_entropy_sum(rest[head_idx], tt)?;
    }
    Ok(SequenceLossNodes { ce_sums, counted })
}

/// Build the scalar mean loss (unweighted average of the eight per-type
/// means) for one teacher-forced sequence as a tape node. This is the exact
/// quantity the trainer differentiates; exposed so the finite-difference
/// oracle can check the full model end to end.
pub fn sequence_mean_loss_node<F: Real>(
    tape: &mut Tape<F>,
    ids: &crate::model::ParamIds,
    cfg: &TransformerConfig,
    vocab: &Vocabulary,
    words: &[CompoundWord],
) -> Result<crate::numerics::ValueId> {
    let nodes = sequence_loss_nodes(tape, ids, cfg, vocab, words)?;
    if nodes.counted == 0 {
        return Err(Error::param("sequence loss: every target position is padding"));
    }
    let coeff = F::from_f64(1.0 / (TokenType::COUNT as f64 * nodes.counted as f64));
    let terms: Vec<_> = nodes.ce_sums.iter().map(|&id| (id, coeff)).collect();
    tape.weighted_sum(terms)
}

/// Teacher-forced per-type mean losses and their average for one sequence.
pub fn sequence_loss<F: Real>(
    seq: &TokenSequence,
    params: &TransformerParams<F>,
    cfg: &TransformerConfig,
    vocab: &Vocabulary,
) -> Result<([f64; TokenType::COUNT], f64)> {
    let mut tape = Tape::new();
    let ids = register_params(&mut tape, params, cfg)?;
    let nodes = sequence_loss_nodes(&mut tape, &ids, cfg, vocab, &seq.words)?;
    if nodes.counted == 0 {
        return Err(Error::param("sequence_loss: every target position is padding"));
    }
    let mut per_type = [0.0f64; TokenType::COUNT];
    for t in TokenType::ALL {
        per_type[t.index()] =
            tape.value(nodes.ce_sums[t.index()]).data()[0].to_f64() / nodes.counted as f64;
    }
    let mean = per_type.iter().sum::<f64>() / TokenType::COUNT as f64;
    Ok((per_type, mean))
}

/// Build the scalar loss for one batch item given the batch-wide counted
/// total, run backward, and add the parameter gradients into `grad_acc`.
/// Returns the item's per-type cross-entropy sums.
fn accumulate_item_gradients(
    params: &TransformerParams<f32>,
    cfg: &TransformerConfig,
    vocab: &Vocabulary,
    words: &[CompoundWord],
    batch_counted: usize,
    grad_acc: &mut [Array<f32>],
) -> Result<[f64; TokenType::COUNT]> {
    let mut tape = Tape::new();
    let ids = register_params(&mut tape, params, cfg)?;
    let nodes = sequence_loss_nodes(&mut tape, &ids, cfg, vocab, words)?;

    let coeff = 1.0 / (TokenType::COUNT as f64 * batch_counted as f64);
    let terms: Vec<_> = nodes.ce_sums.iter().map(|&id| (id, coeff as f32)).collect();
    let loss = tape.weighted_sum(terms)?;
    let loss_value = tape.value(loss).data()[0];
    if !loss_value.is_finite() {
        return Err(Error::contract(format!("non-finite training loss {loss_value}")));
    }
    let grads = tape.backward(loss)?;

    for (slot, &id) in grad_acc.iter_mut().zip(&ids.flat) {
        if let Some(g) = grads.grad_ref(id) {
            for (s, &v) in slot.data_mut().iter_mut().zip(g.data()) {
                *s += v;
            }
        }
    }

    let mut sums = [0.0f64; TokenType::COUNT];
    for t in TokenType::ALL {
        sums[t.index()] = tape.value(nodes.ce_sums[t.index()]).data()[0] as f64;
    }
    Ok(sums)
}

/// Split songs into training windows of at most `max_len` words with
/// one-word overlap, preserving corpus order.
pub fn build_windows(dataset: &[TokenSequence], max_len: usize) -> Vec<Vec<CompoundWord>> {
    let mut windows = Vec::new();
    if max_len < 2 {
        return windows; // a training window needs an input and a target
    }
    for seq in dataset {
        let n = seq.words.len();
        if n < 2 {
            continue;
        }
        if n <= max_len {
            windows.push(seq.words.clone());
            continue;
        }
        let stride = max_len - 1;
        let mut start = 0;
        while start + 1 < n {
            let end = (start + max_len).min(n);
            if end - start >= 2 {
                windows.push(seq.words[start..end].to_vec());
            }
            if end == n {
                break;
            }
            start += stride;
        }
    }
    windows
}

/// Train in place. Windows are shuffled each epoch, batches are padded with
/// all-`[pad]` words, gradients are clipped to `clip_norm` before each
/// adaptive-moment step. Deterministic under a fixed seed. `start_epoch`
/// offsets the reported epoch numbers when resuming. `on_epoch` fires after
/// every epoch (for periodic checkpoints).
pub fn train(
    dataset: &[TokenSequence],
    params: &mut TransformerParams<f32>,
    cfg: &TransformerConfig,
    train_cfg: &TrainConfig,
    vocab: &Vocabulary,
    start_epoch: u64,
    mut on_epoch: impl FnMut(u64, &TransformerParams<f32>, &EpochLoss) -> Result<()>,
) -> Result<LossReport> {
    if dataset.is_empty() {
        return Err(Error::param("train: empty dataset"));
    }
    if train_cfg.batch_size == 0 {
        return Err(Error::param("train: batch_size must be at least 1"));
    }
    cfg.validate()?;
    let max_len = train_cfg.max_seq_len.min(cfg.max_seq_len);
    if max_len < 2 {
        return Err(Error::param("train: max_seq_len must be at least 2"));
    }
    let windows = build_windows(dataset, max_len);
    if windows.is_empty() {
        return Err(Error::param("train: no window has at least 2 words"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut state = AdamState::for_params(
        &params.flatten().into_iter().cloned().collect::<Vec<_>>(),
    );
    let hyper = AdamHyper::with_lr(train_cfg.learning_rate as f32);
    let mut report = LossReport::default();

    for epoch_idx in 0..train_cfg.epochs {
        let epoch = start_epoch + epoch_idx as u64 + 1;
        order.shuffle(&mut rng);

        let mut type_totals = [0.0f64; TokenType::COUNT];
        let mut total_counted = 0usize;

        for batch in order.chunks(train_cfg.batch_size) {
            // pad every item to the longest sequence in the batch
            let batch_max = batch.iter().map(|&i| windows[i].len()).max().expect("non-empty");
            let mut items: Vec<Vec<CompoundWord>> = Vec::with_capacity(batch.len());
            for &i in batch {
                let mut w = windows[i].clone();
                w.resize(batch_max, CompoundWord::padding());
                items.push(w);
            }

            let counted: usize = items
                .iter()
                .map(|w| w[1..].iter().filter(|x| !x.is_padding()).count())
                .sum();
            if counted == 0 {
                continue;
            }

            let mut grad_acc: Vec<Array<f32>> = params
                .flatten()
                .iter()
                .map(|a| Array::zeros(a.shape().to_vec()))
                .collect();
            for item in &items {
                let sums =
                    accumulate_item_gradients(params, cfg, vocab, item, counted, &mut grad_acc)?;
                for t in TokenType::ALL {
                    type_totals[t.index()] += sums[t.index()];
                }
            }
            total_counted += counted;

            clip_global_norm(&mut grad_acc, train_cfg.clip_norm as f32);
            let mut flat = params.flatten_mut();
            let mut arrays: Vec<Array<f32>> =
                flat.iter().map(|a| (**a).clone()).collect();
            adam_step(&mut arrays, &grad_acc, &mut state, hyper)?;
            for (slot, arr) in flat.iter_mut().zip(arrays) {
                **slot = arr;
            }
        }

        let mut per_type = [0.0f64; TokenType::COUNT];
        for t in TokenType::ALL {
            per_type[t.index()] = type_totals[t.index()] / total_counted.max(1) as f64;
        }
        let mean = per_type.iter().sum::<f64>() / TokenType::COUNT as f64;
        let entry = EpochLoss { epoch, per_type, mean };
        on_epoch(epoch, params, &entry)?;
        report.epochs.push(entry);
    }
    Ok(report)
}

/// Teacher-forced argmax accuracy over a dataset: fraction of non-padding
/// targets whose family (and each other type) is predicted exactly.
pub fn teacher_forced_accuracy(
    dataset: &[TokenSequence],
    params: &TransformerParams<f32>,
    cfg: &TransformerConfig,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<[f64; TokenType::COUNT]> {
    let windows = build_windows(dataset, max_len.min(cfg.max_seq_len));
    let mut correct = [0u64; TokenType::COUNT];
    let mut total = 0u64;
    for words in &windows {
        let inputs = &words[..words.len() - 1];
        let targets = &words[1..];
        let mut tape = Tape::new();
        let ids = register_params(&mut tape, params, cfg)?;
        let embedded = embed_sequence_on_tape(&mut tape, &ids, cfg, inputs)?;
        let hidden = forward_hidden_on_tape(&mut tape, &ids, cfg, embedded, true)?;
        let family_logits = family_logits_on_tape(&mut tape, &ids, hidden)?;
        let true_families: Vec<u32> = targets.iter().map(|w| w.family()).collect();
        let rest = rest_logits_on_tape(&mut tape, &ids, vocab, hidden, &true_families)?;

        for (pos, target) in targets.iter().enumerate() {
            if target.is_padding() {
                continue;
            }
            total += 1;
            if argmax(tape.value(family_logits).row(pos)) == target.family() as usize {
                correct[TokenType::Family.index()] += 1;
            }
            for (head_idx, &t) in NON_FAMILY_TYPES.iter().enumerate() {
                if argmax(tape.value(rest[head_idx]).row(pos)) == target.get(t) as usize {
                    correct[t.index()] += 1;
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::param("teacher_forced_accuracy: no counted targets"));
    }
    let mut out = [0.0f64; TokenType::COUNT];
    for t in TokenType::ALL {
        out[t.index()] = correct[t.index()] as f64 / total as f64;
    }
    Ok(out)
}

fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{to_compound_words, Note, NoteEventTrack};

    fn tiny_cfg() -> TransformerConfig {
        TransformerConfig {
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            type_dims: [1, 2, 3, 2, 4, 2, 1, 1],
            ff_hidden: 16,
            head_hidden: 8,
            max_seq_len: 64,
        }
    }

    fn tiny_song(vocab: &Vocabulary) -> TokenSequence {
        let mut track = NoteEventTrack::new("edm");
        track.notes = vec![
            Note { onset: 0, pitch: 60, duration: 4, velocity: 62 },
            Note { onset: 4, pitch: 64, duration: 4, velocity: 62 },
            Note { onset: 8, pitch: 67, duration: 4, velocity: 62 },
            Note { onset: 12, pitch: 72, duration: 2, velocity: 90 },
        ];
        track.normalize();
        to_compound_words(&track, vocab, "tiny").unwrap().0
    }

    #[test]
    fn zero_init_losses_equal_log_vocab_sizes() {
        let vocab = Vocabulary::build();
        let cfg = tiny_cfg();
        let params = TransformerParams::<f32>::zeros(&cfg, &vocab);
        let seq = tiny_song(&vocab);
        let (per_type, mean) = sequence_loss(&seq, &params, &cfg, &vocab).unwrap();
        for t in TokenType::ALL {
            let expect = (vocab.size(t) as f64).ln();
            assert!(
                (per_type[t.index()] - expect).abs() < 1e-3,
                "{t}: got {}, want ln {} = {expect}",
                per_type[t.index()],
                vocab.size(t)
            );
        }
        let expect_mean = per_type.iter().sum::<f64>() / 8.0;
        assert!((mean - expect_mean).abs() < 1e-12);
    }

    #[test]
    fn short_sequence_is_parameter_error() {
        let vocab = Vocabulary::build();
        let cfg = tiny_cfg();
        let params = TransformerParams::<f32>::zeros(&cfg, &vocab);
        let seq = TokenSequence {
            source_id: "x".into(),
            words: vec![CompoundWord::bar_word(&vocab, 1)],
        };
        assert!(sequence_loss(&seq, &params, &cfg, &vocab).is_err());
    }

    #[test]
    fn padding_does_not_change_losses() {
        let vocab = Vocabulary::build();
        let cfg = tiny_cfg();
        let params = TransformerParams::<f32>::init(&cfg, &vocab, 5);
        let seq = tiny_song(&vocab);
        let (base, _) = sequence_loss(&seq, &params, &cfg, &vocab).unwrap();
        let mut padded = seq.clone();
        padded.words.extend([CompoundWord::padding(); 3]);
        let (with_pad, _) = sequence_loss(&padded, &params, &cfg, &vocab).unwrap();
        for t in TokenType::ALL {
            assert!(
                (base[t.index()] - with_pad[t.index()]).abs() < 1e-6,
                "{t}: {} vs {}",
                base[t.index()],
                with_pad[t.index()]
            );
        }
    }

    #[test]
    fn windows_split_with_one_word_overlap() {
        let vocab = Vocabulary::build();
        let seq = tiny_song(&vocab);
        let n = seq.words.len();
        let windows = build_windows(std::slice::from_ref(&seq), 5);
        // stride 4: each window starts where the previous ended minus one
        assert!(windows.len() > 1);
        for w in &windows {
            assert!(w.len() >= 2 && w.len() <= 5);
        }
        let covered: usize = windows.iter().map(|w| w.len() - 1).sum();
        assert_eq!(covered, n - 1, "every transition appears exactly once");
        assert_eq!(windows[0][4], windows[1][0], "one-word overlap");
    }

    #[test]
    fn training_is_deterministic_and_lr_zero_freezes_params() {
        let vocab = Vocabulary::build();
        let cfg = tiny_cfg();
        let seq = tiny_song(&vocab);
        let tc = TrainConfig {
            batch_size: 2,
            epochs: 3,
            learning_rate: 1e-3,
            max_seq_len: 8,
            seed: 9,
            checkpoint_every: 0,
            ..TrainConfig::default()
        };

        let mut p1 = TransformerParams::<f32>::init(&cfg, &vocab, 1);
        let r1 = train(std::slice::from_ref(&seq), &mut p1, &cfg, &tc, &vocab, 0, |_, _, _| Ok(())).unwrap();
        let mut p2 = TransformerParams::<f32>::init(&cfg, &vocab, 1);
        let r2 = train(std::slice::from_ref(&seq), &mut p2, &cfg, &tc, &vocab, 0, |_, _, _| Ok(())).unwrap();
        assert_eq!(r1, r2);
        for (a, b) in p1.flatten().iter().zip(p2.flatten()) {
            assert_eq!(a.data(), b.data());
        }

        let mut frozen = TransformerParams::<f32>::init(&cfg, &vocab, 1);
        let before: Vec<Vec<f32>> =
            frozen.flatten().iter().map(|a| a.data().to_vec()).collect();
        let tc0 = TrainConfig { learning_rate: 0.0, ..tc };
        train(&[seq], &mut frozen, &cfg, &tc0, &vocab, 0, |_, _, _| Ok(())).unwrap();
        for (a, b) in frozen.flatten().iter().zip(before) {
            assert_eq!(a.data(), b.as_slice());
        }
    }

    #[test]
    fn loss_decreases_on_tiny_pattern() {
        let vocab = Vocabulary::build();
        let cfg = tiny_cfg();
        let seq = tiny_song(&vocab);
        let tc = TrainConfig {
            batch_size: 1,
            epochs: 30,
            learning_rate: 5e-3,
            max_seq_len: 16,
            seed: 4,
            checkpoint_every: 0,
            ..TrainConfig::default()
        };
        let mut params = TransformerParams::<f32>::init(&cfg, &vocab, 2);
        let report = train(&[seq], &mut params, &cfg, &tc, &vocab, 0, |_, _, _| Ok(())).unwrap();
        let first = report.epochs.first().unwrap().mean;
        let last = report.epochs.last().unwrap().mean;
        assert!(last < first * 0.8, "mean loss {first} → {last} should drop meaningfully");
        // epoch numbering starts at 1 and the mean is the average of types
        for e in &report.epochs {
            let expect = e.per_type.iter().sum::<f64>() / 8.0;
            assert!((e.mean - expect).abs() < 1e-12);
        }
        assert_eq!(report.epochs[0].epoch, 1);
    }

    #[test]
    fn resume_offsets_epoch_numbers() {
        let vocab = Vocabulary::build();
        let cfg = tiny_cfg();
        let seq = tiny_song(&vocab);
        let tc = TrainConfig {
            batch_size: 1,
            epochs: 2,
            learning_rate: 1e-3,
            max_seq_len: 8,
            seed: 4,
            checkpoint_every: 0,
            ..TrainConfig::default()
        };
        let mut params = TransformerParams::<f32>::init(&cfg, &vocab, 2);
        let report = train(&[seq], &mut params, &cfg, &tc, &vocab, 10, |_, _, _| Ok(())).unwrap();
        let epochs: Vec<u64> = report.epochs.iter().map(|e| e.epoch).collect();
        assert_eq!(epochs, vec![11, 12]);
    }

    #[test]
    fn csv_has_nine_series_per_epoch() {
        let report = LossReport {
            epochs: vec![EpochLoss { epoch: 1, per_type: [1.0; 8], mean: 1.0 }],
        };
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 1 + 9);
        assert!(csv.lines().any(|l| l == "1,mean,1"));
    }
}

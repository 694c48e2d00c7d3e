//! Type-conditioned autoregressive generation with per-type nucleus
//! sampling.
//!
//! Sampling math runs in f64. Every token type draws from its own ChaCha8
//! stream (stream id = type ordinal, seeded with the policy seed), so
//! per-type draws are reproducible regardless of evaluation order.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{family_logits, rest_logits, GenState, TransformerConfig, TransformerParams};
use crate::tokenizer::TokenSequence;
use crate::vocab::{
    validate, CompoundWord, TokenType, Vocabulary, FAMILY_EOS, FAMILY_METRIC, FAMILY_NOTE,
    FAMILY_PAD, IGNORE_ID, PAD_ID,
};

/// Slack when accumulating probability mass toward the nucleus threshold;
/// absorbs rounding in the cumulative sum.
const CUMSUM_SLACK: f64 = 1e-9;

/// Per-type nucleus thresholds and temperatures plus run limits.
#[derive(Debug, Clone)]
pub struct GenerationPolicy {
    /// Nucleus threshold p ∈ (0, 1] per token type.
    pub top_p: [f64; TokenType::COUNT],
    /// Temperature τ > 0 per token type.
    pub temperature: [f64; TokenType::COUNT],
    pub seed: u64,
    pub max_words: usize,
    pub max_bars: usize,
    /// When false, eos stays masked and generation always runs to a limit
    /// (used by the timing harness).
    pub stop_on_eos: bool,
    pub record_timing: bool,
}

impl Default for GenerationPolicy {
    fn default() -> Self {
        let mut top_p = [0.9; TokenType::COUNT];
        top_p[TokenType::Family.index()] = 0.99;
        let mut temperature = [1.0; TokenType::COUNT];
        temperature[TokenType::Chord.index()] = 1.2;
        GenerationPolicy {
            top_p,
            temperature,
            seed: 0,
            max_words: 2048,
            max_bars: 128,
            stop_on_eos: true,
            record_timing: false,
        }
    }
}

impl GenerationPolicy {
    pub fn validate(&self) -> Result<()> {
        for t in TokenType::ALL {
            let p = self.top_p[t.index()];
            let tau = self.temperature[t.index()];
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::param(format!("top_p for {t} must be in (0,1], got {p}")));
            }
            if !(tau > 0.0) {
                return Err(Error::param(format!("temperature for {t} must be positive, got {tau}")));
            }
        }
        if self.max_words < 2 || self.max_bars == 0 {
            return Err(Error::param("max_words must be ≥ 2 and max_bars ≥ 1"));
        }
        Ok(())
    }

    /// Same temperature and threshold for every type.
    pub fn uniform(p: f64, tau: f64) -> Self {
        GenerationPolicy {
            top_p: [p; TokenType::COUNT],
            temperature: [tau; TokenType::COUNT],
            ..Default::default()
        }
    }
}

/// One sampling decision, for the audit log.
#[derive(Debug, Clone)]
pub struct AuditRow {
    /// Word index in the generated sequence.
    pub step: usize,
    pub token_type: TokenType,
    pub chosen: u32,
    /// Probability of the chosen class under the final (renormalized
    /// nucleus) distribution.
    pub probability: f64,
    pub nucleus_size: usize,
}

#[derive(Debug)]
pub struct GenerationResult {
    pub sequence: TokenSequence,
    pub audit: Vec<AuditRow>,
    /// Wall time per generation step; empty when timing is disabled.
    pub step_times: Vec<Duration>,
}

impl GenerationResult {
    /// `step,type,chosen_id,probability,nucleus_size` rows.
    pub fn audit_csv(&self) -> String {
        let mut out = String::from("step,type,chosen_id,probability,nucleus_size\n");
        for row in &self.audit {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                row.step,
                row.token_type.name(),
                row.chosen,
                row.probability,
                row.nucleus_size
            );
        }
        out
    }

    /// `step,microseconds` rows (wall time, deliberately segregated from
    /// deterministic outputs).
    pub fn timing_csv(&self) -> String {
        let mut out = String::from("step,microseconds\n");
        for (i, d) in self.step_times.iter().enumerate() {
            let _ = writeln!(out, "{},{}", i + 1, d.as_micros());
        }
        out
    }
}

/// Stable softmax over f32 logits, computed in f64.
pub fn probs_from_logits(logits: &[f32]) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for &l in logits {
        max = max.max(l as f64);
    }
    let mut out: Vec<f64> = logits.iter().map(|&l| (l as f64 - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Draw one class by nucleus (top-p) sampling.
///
/// Logits are reshaped by temperature on log-probabilities (`ln p / τ`,
/// re-normalized), classes are sorted by descending probability, and the
/// nucleus is the smallest prefix whose cumulative mass reaches `p` — the
/// boundary token is included. Sampling happens on the renormalized
/// nucleus. Returns (class, its renormalized probability, nucleus size).
pub fn nucleus_sample(
    probs: &[f64],
    p: f64,
    tau: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, f64, usize)> {
    if probs.is_empty() {
        return Err(Error::param("nucleus_sample: empty distribution"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::param(format!("nucleus_sample: p must be in (0,1], got {p}")));
    }
    if !(tau > 0.0) {
        return Err(Error::param(format!("nucleus_sample: τ must be positive, got {tau}")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-5 {
        return Err(Error::contract(format!(
            "nucleus_sample: probabilities sum to {sum}, not 1"
        )));
    }

    // temperature reshape on log-probabilities; zero mass stays zero
    let mut max = f64::NEG_INFINITY;
    let scaled: Vec<f64> = probs
        .iter()
        .map(|&q| {
            let lp = if q > 0.0 { q.ln() / tau } else { f64::NEG_INFINITY };
            max = max.max(lp);
            lp
        })
        .collect();
    let mut reshaped: Vec<f64> = scaled
        .iter()
        .map(|&lp| if lp.is_finite() { (lp - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = reshaped.iter().sum();
    for v in &mut reshaped {
        *v /= z;
    }

    // descending probability, ties broken by class index for determinism
    let mut order: Vec<usize> = (0..reshaped.len()).collect();
    order.sort_by(|&a, &b| {
        reshaped[b].partial_cmp(&reshaped[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });

    let mut cumulative = 0.0;
    let mut nucleus = reshaped.len();
    for (rank, &cls) in order.iter().enumerate() {
        cumulative += reshaped[cls];
        if cumulative >= p - CUMSUM_SLACK {
            nucleus = rank + 1;
            break;
        }
    }
    let mass: f64 = order[..nucleus].iter().map(|&c| reshaped[c]).sum();

    let u: f64 = rng.gen::<f64>() * mass;
    let mut acc = 0.0;
    let mut chosen = order[nucleus - 1];
    for &cls in &order[..nucleus] {
        acc += reshaped[cls];
        if u < acc {
            chosen = cls;
            break;
        }
    }
    Ok((chosen, reshaped[chosen] / mass, nucleus))
}

/// Per-type RNG streams: one ChaCha8 generator per token type, identical
/// seed, stream id = type ordinal.
pub struct TypeRngs {
    rngs: Vec<ChaCha8Rng>,
}

impl TypeRngs {
    pub fn new(seed: u64) -> Self {
        let rngs = TokenType::ALL
            .iter()
            .map(|&t| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(t.index() as u64);
                r
            })
            .collect();
        TypeRngs { rngs }
    }

    pub fn get(&mut self, t: TokenType) -> &mut ChaCha8Rng {
        &mut self.rngs[t.index()]
    }
}

/// Autoregressive generation.
///
/// Starts from the prompt (or the canonical bar word), predicts the family
/// first, then samples every type the family admits; inapplicable types are
/// forced to `[ignore]` and the genre field is forced to the requested
/// genre. Specials that would make a word structurally invalid (`[pad]`
/// everywhere; `[ignore]` on barbeat/pitch/duration/velocity) are excluded
/// from the nucleus, and eos is masked until the sequence is decodable as
/// at least one note, so every generated word passes validation and every
/// finished sequence yields notes. Stops on eos, max words, or max bars.
pub fn generate(
    params: &TransformerParams<f32>,
    cfg: &TransformerConfig,
    vocab: &Vocabulary,
    policy: &GenerationPolicy,
    genre: &str,
    prompt: Option<&TokenSequence>,
) -> Result<GenerationResult> {
    policy.validate()?;
    let genre_id = vocab.genre_id_of(genre)?;

    let mut words: Vec<CompoundWord> = match prompt {
        Some(seq) => {
            if seq.words.is_empty() {
                return Err(Error::param("generate: prompt must not be empty"));
            }
            if seq.words.len() >= policy.max_words {
                return Err(Error::param(format!(
                    "generate: prompt length {} must be below max_words {}",
                    seq.words.len(),
                    policy.max_words
                )));
            }
            for (i, w) in seq.words.iter().enumerate() {
                let violations = validate(w, vocab);
                if !violations.is_empty() {
                    return Err(Error::param(format!(
                        "generate: prompt word {i} is invalid: {}",
                        violations.join("; ")
                    )));
                }
            }
            seq.words.clone()
        }
        None => vec![CompoundWord::bar_word(vocab, genre_id)],
    };

    let mut rngs = TypeRngs::new(policy.seed);
    let mut state = GenState::new(params, cfg);
    let mut saw_beat = words.iter().any(|w| {
        w.family() == FAMILY_METRIC && vocab.beat_of_barbeat_id(w.get(TokenType::BarBeat)).is_some()
    });
    let mut saw_note = words.iter().any(|w| w.family() == FAMILY_NOTE);
    let mut bars = words
        .iter()
        .filter(|w| w.family() == FAMILY_METRIC && w.get(TokenType::BarBeat) == vocab.barbeat_bar_id())
        .count();

    let mut hidden = Vec::new();
    for w in &words {
        hidden = state.step(w)?;
    }

    let mut audit = Vec::new();
    let mut step_times = Vec::new();
    let bar_id = vocab.barbeat_bar_id();

    while words.len() < policy.max_words {
        let step_start = policy.record_timing.then(Instant::now);
        let step = words.len();

        // family first
        let fam_logits = family_logits(params, &hidden);
        let mut fam_probs = probs_from_logits(&fam_logits);
        fam_probs[FAMILY_PAD as usize] = 0.0;
        if !saw_beat {
            fam_probs[FAMILY_NOTE as usize] = 0.0; // a note here could not be decoded
        }
        if !saw_note || !policy.stop_on_eos {
            fam_probs[FAMILY_EOS as usize] = 0.0; // keep going until the piece has content
        }
        renormalize(&mut fam_probs);
        let (family, fam_p, fam_nucleus) = nucleus_sample(
            &fam_probs,
            policy.top_p[TokenType::Family.index()],
            policy.temperature[TokenType::Family.index()],
            rngs.get(TokenType::Family),
        )?;
        let family = family as u32;
        audit.push(AuditRow {
            step,
            token_type: TokenType::Family,
            chosen: family,
            probability: fam_p,
            nucleus_size: fam_nucleus,
        });

        if family == FAMILY_EOS {
            words.push(CompoundWord::eos_word(genre_id));
            if let Some(t0) = step_start {
                step_times.push(t0.elapsed());
            }
            break;
        }

        let rest = rest_logits(params, vocab, &hidden, family)?;
        let mut word = CompoundWord::from_ids([IGNORE_ID; TokenType::COUNT]);
        word.set(TokenType::Family, family);
        word.set(TokenType::Genre, genre_id); // genre is chosen by the caller, not sampled

        let applicable: &[TokenType] = match family {
            FAMILY_METRIC => &[TokenType::Tempo, TokenType::Chord, TokenType::BarBeat],
            FAMILY_NOTE => &[TokenType::Pitch, TokenType::Duration, TokenType::Velocity],
            _ => &[],
        };
        for &t in applicable {
            let head_idx = t.index() - 1; // NON_FAMILY_TYPES order
            let mut probs = probs_from_logits(&rest[head_idx]);
            probs[PAD_ID as usize] = 0.0;
            // barbeat and the note fields must carry real values to decode
            if matches!(t, TokenType::BarBeat | TokenType::Pitch | TokenType::Duration | TokenType::Velocity) {
                probs[IGNORE_ID as usize] = 0.0;
            }
            renormalize(&mut probs);
            let (chosen, prob, nucleus) = nucleus_sample(
                &probs,
                policy.top_p[t.index()],
                policy.temperature[t.index()],
                rngs.get(t),
            )?;
            word.set(t, chosen as u32);
            audit.push(AuditRow {
                step,
                token_type: t,
                chosen: chosen as u32,
                probability: prob,
                nucleus_size: nucleus,
            });
        }

        debug_assert!(validate(&word, vocab).is_empty(), "{:?}", validate(&word, vocab));

        if family == FAMILY_METRIC {
            if word.get(TokenType::BarBeat) == bar_id {
                if bars >= policy.max_bars {
                    if let Some(t0) = step_start {
                        step_times.push(t0.elapsed());
                    }
                    break; // the next bar would exceed the limit
                }
                bars += 1;
            } else {
                saw_beat = true;
            }
        } else if family == FAMILY_NOTE {
            saw_note = true;
        }

        words.push(word);
        hidden = state.step(&word)?;
        if let Some(t0) = step_start {
            step_times.push(t0.elapsed());
        }
    }

    Ok(GenerationResult {
        sequence: TokenSequence { source_id: format!("gen-{}", policy.seed), words },
        audit,
        step_times,
    })
}

fn renormalize(probs: &mut [f64]) {
    let sum: f64 = probs.iter().sum();
    if sum > 0.0 {
        for v in probs.iter_mut() {
            *v /= sum;
        }
    }
}

/// Median of the step times over a 1-based inclusive position range.
pub fn median_step_micros(result: &GenerationResult, lo: usize, hi: usize) -> Option<f64> {
    if lo == 0 || hi < lo || hi > result.step_times.len() {
        return None;
    }
    let mut window: Vec<u128> =
        result.step_times[lo - 1..hi].iter().map(|d| d.as_micros()).collect();
    window.sort_unstable();
    let n = window.len();
    Some(if n % 2 == 1 {
        window[n / 2] as f64
    } else {
        (window[n / 2 - 1] + window[n / 2]) as f64 / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn nucleus_hand_example() {
        // p=0.8 keeps {0,1} renormalized to [0.625, 0.375]
        let probs = [0.5, 0.3, 0.15, 0.05];
        let mut counts = [0usize; 4];
        let mut r = rng();
        for _ in 0..10_000 {
            let (c, p, nucleus) = nucleus_sample(&probs, 0.8, 1.0, &mut r).unwrap();
            counts[c] += 1;
            assert_eq!(nucleus, 2);
            if c == 0 {
                assert!((p - 0.625).abs() < 1e-12);
            } else {
                assert!((p - 0.375).abs() < 1e-12);
            }
        }
        assert_eq!(counts[2] + counts[3], 0, "outside the nucleus is never drawn");
        let f0 = counts[0] as f64 / 10_000.0;
        let se = (0.625 * 0.375 / 10_000.0f64).sqrt();
        assert!((f0 - 0.625).abs() < 3.0 * se, "freq {f0} vs 0.625 ± {}", 3.0 * se);
    }

    #[test]
    fn full_nucleus_matches_plain_categorical() {
        let probs = [0.25, 0.4, 0.1, 0.25];
        let mut counts = [0usize; 4];
        let mut r = rng();
        for _ in 0..10_000 {
            let (c, _, nucleus) = nucleus_sample(&probs, 1.0, 1.0, &mut r).unwrap();
            assert_eq!(nucleus, 4);
            counts[c] += 1;
        }
        for (i, &p) in probs.iter().enumerate() {
            let f = counts[i] as f64 / 10_000.0;
            let se = (p * (1.0 - p) / 10_000.0f64).sqrt();
            assert!((f - p).abs() < 3.0 * se, "class {i}: {f} vs {p}");
        }
    }

    #[test]
    fn near_zero_temperature_is_argmax() {
        let probs = [0.2, 0.5, 0.3];
        let mut r = rng();
        for _ in 0..1000 {
            let (c, p, _) = nucleus_sample(&probs, 0.9, 1e-4, &mut r).unwrap();
            assert_eq!(c, 1);
            assert!((p - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn temperature_preserves_argmax() {
        let probs = [0.05, 0.3, 0.15, 0.5];
        let mut r = rng();
        for tau in [0.25, 0.5, 1.0, 2.0, 8.0] {
            // p=tiny forces the nucleus to the single top class
            let (c, _, n) = nucleus_sample(&probs, 1e-9, tau, &mut r).unwrap();
            assert_eq!(c, 3, "τ={tau}");
            assert_eq!(n, 1);
        }
    }

    #[test]
    fn parameter_and_contract_errors() {
        let probs = [0.5, 0.5];
        let mut r = rng();
        assert!(nucleus_sample(&probs, 0.0, 1.0, &mut r).is_err());
        assert!(nucleus_sample(&probs, 1.1, 1.0, &mut r).is_err());
        assert!(nucleus_sample(&probs, 0.9, 0.0, &mut r).is_err());
        assert!(nucleus_sample(&[0.5, 0.4], 0.9, 1.0, &mut r).is_err());
    }

    #[test]
    fn cold_start_generation_is_valid_and_deterministic() {
        let vocab = Vocabulary::build();
        let cfg = TransformerConfig::toy();
        let params = TransformerParams::<f32>::zeros(&cfg, &vocab);
        let policy = GenerationPolicy {
            seed: 3,
            max_words: 64,
            max_bars: 8,
            ..GenerationPolicy::default()
        };
        let a = generate(&params, &cfg, &vocab, &policy, "edm", None).unwrap();
        for (i, w) in a.sequence.words.iter().enumerate() {
            let v = validate(w, &vocab);
            assert!(v.is_empty(), "word {i}: {v:?}");
        }
        // terminates with eos or at a limit
        let last = a.sequence.words.last().unwrap();
        assert!(
            last.family() == FAMILY_EOS
                || a.sequence.words.len() == policy.max_words
                || a.sequence.words.iter().filter(|w| w.get(TokenType::BarBeat) == vocab.barbeat_bar_id() && w.family() == FAMILY_METRIC).count() == policy.max_bars
        );
        let b = generate(&params, &cfg, &vocab, &policy, "edm", None).unwrap();
        assert_eq!(a.sequence, b.sequence);
        // timing disabled → empty series
        assert!(a.step_times.is_empty());
    }

    #[test]
    fn unknown_genre_is_lookup_error() {
        let vocab = Vocabulary::build();
        let cfg = TransformerConfig::toy();
        let params = TransformerParams::<f32>::zeros(&cfg, &vocab);
        let policy = GenerationPolicy::default();
        assert!(matches!(
            generate(&params, &cfg, &vocab, &policy, "salsa", None),
            Err(Error::Lookup { .. })
        ));
    }

    #[test]
    fn generated_sequences_decode_with_notes() {
        let vocab = Vocabulary::build();
        let cfg = TransformerConfig::toy();
        let params = TransformerParams::<f32>::init(&cfg, &vocab, 50);
        let policy = GenerationPolicy {
            seed: 11,
            max_words: 128,
            max_bars: 16,
            ..GenerationPolicy::default()
        };
        let out = generate(&params, &cfg, &vocab, &policy, "indie", None).unwrap();
        let track = crate::tokenizer::from_compound_words(&out.sequence, &vocab).unwrap();
        assert!(!track.notes.is_empty(), "eos is masked until a note exists");
        assert_eq!(track.genre, "indie");
    }

    #[test]
    fn timing_series_is_monotone_in_cumulative_time() {
        let vocab = Vocabulary::build();
        let cfg = TransformerConfig::toy();
        let params = TransformerParams::<f32>::zeros(&cfg, &vocab);
        let policy = GenerationPolicy {
            seed: 5,
            max_words: 32,
            max_bars: 64,
            record_timing: true,
            stop_on_eos: false,
            ..GenerationPolicy::default()
        };
        let out = generate(&params, &cfg, &vocab, &policy, "pop", None).unwrap();
        assert_eq!(out.step_times.len(), out.sequence.words.len() - 1);
        let mut cumulative = Duration::ZERO;
        for d in &out.step_times {
            let next = cumulative + *d;
            assert!(next >= cumulative);
            cumulative = next;
        }
        assert!(median_step_micros(&out, 1, out.step_times.len()).is_some());
        assert!(median_step_micros(&out, 5, 4).is_none());
    }

    #[test]
    fn prompt_must_be_valid() {
        let vocab = Vocabulary::build();
        let cfg = TransformerConfig::toy();
        let params = TransformerParams::<f32>::zeros(&cfg, &vocab);
        let policy = GenerationPolicy::default();
        let mut bad = CompoundWord::bar_word(&vocab, vocab.genre_id_of("edm").unwrap());
        bad.set(TokenType::Pitch, 3); // note field on a metric word
        let prompt = TokenSequence { source_id: "p".into(), words: vec![bad] };
        assert!(generate(&params, &cfg, &vocab, &policy, "edm", Some(&prompt)).is_err());
    }
}

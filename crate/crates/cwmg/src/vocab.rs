//! The eight token types, their closed-form tables, and compound-word
//! validation.
//!
//! Every table is fixed (not corpus-derived): `[pad]` is id 0 everywhere and
//! `[ignore]` is id 1 in every type except FAMILY and GENRE. Two builds
//! produce byte-identical tables; `VOCAB_VERSION` stamps the layout.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const VOCAB_VERSION: &str = "1";

pub const PAD_ID: u32 = 0;
pub const IGNORE_ID: u32 = 1;

/// Family values (ids in the FAMILY table).
pub const FAMILY_PAD: u32 = 0;
pub const FAMILY_METRIC: u32 = 1;
pub const FAMILY_NOTE: u32 = 2;
pub const FAMILY_EOS: u32 = 3;

pub const TEMPO_BIN_COUNT: u32 = 32;
pub const TEMPO_BPM_MIN: f64 = 32.0;
pub const TEMPO_BPM_STEP: f64 = 6.0;
pub const VELOCITY_BIN_COUNT: u32 = 32;
pub const PITCH_MIN: u8 = 21;
pub const PITCH_MAX: u8 = 108;
pub const DURATION_MAX: u32 = 32;
pub const BEATS_PER_BAR: u32 = 16;

pub const CHORD_ROOTS: [&str; 12] =
    ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];
pub const CHORD_QUALITIES: [&str; 10] =
    ["maj", "min", "dim", "aug", "dom7", "min7", "maj7", "sus2", "sus4", "none"];

/// One of the eight token types of a compound word. The ordinal is the
/// array index used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(usize)]
pub enum TokenType {
    Family = 0,
    Tempo = 1,
    Chord = 2,
    BarBeat = 3,
    Pitch = 4,
    Duration = 5,
    Velocity = 6,
    Genre = 7,
}

impl TokenType {
    pub const COUNT: usize = 8;
    pub const ALL: [TokenType; 8] = [
        TokenType::Family,
        TokenType::Tempo,
        TokenType::Chord,
        TokenType::BarBeat,
        TokenType::Pitch,
        TokenType::Duration,
        TokenType::Velocity,
        TokenType::Genre,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TokenType::Family => "family",
            TokenType::Tempo => "tempo",
            TokenType::Chord => "chord",
            TokenType::BarBeat => "barbeat",
            TokenType::Pitch => "pitch",
            TokenType::Duration => "duration",
            TokenType::Velocity => "velocity",
            TokenType::Genre => "genre",
        }
    }

    /// Whether this type's table contains the `[ignore]` special.
    pub fn has_ignore(self) -> bool {
        !matches!(self, TokenType::Family | TokenType::Genre)
    }
}

impl std::fmt::Display for TokenType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn specials() -> Vec<String> {
    vec!["[pad]".into(), "[ignore]".into()]
}

struct TypeTable {
    labels: Vec<String>,
    by_label: HashMap<String, u32>,
}

impl TypeTable {
    fn new(labels: Vec<String>) -> Self {
        let by_label = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i as u32))
            .collect();
        TypeTable { labels, by_label }
    }
}

/// Immutable id↔label tables for all eight token types.
pub struct Vocabulary {
    tables: [TypeTable; TokenType::COUNT],
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::build()
    }
}

impl Vocabulary {
    /// Construct the fixed tables. Idempotent and deterministic.
    pub fn build() -> Self {
        let family = vec!["[pad]".into(), "metric".into(), "note".into(), "eos".into()];

        let mut tempo = specials();
        for i in 0..TEMPO_BIN_COUNT {
            tempo.push(format!("bin_{i}"));
        }

        let mut chord = specials();
        for root in CHORD_ROOTS {
            for quality in CHORD_QUALITIES {
                chord.push(format!("{root}:{quality}"));
            }
        }

        let mut barbeat = specials();
        barbeat.push("bar".into());
        for i in 0..BEATS_PER_BAR {
            barbeat.push(format!("beat_{i}"));
        }

        let mut pitch = specials();
        for p in PITCH_MIN..=PITCH_MAX {
            pitch.push(p.to_string());
        }

        let mut duration = specials();
        for d in 1..=DURATION_MAX {
            duration.push(d.to_string());
        }

        let mut velocity = specials();
        for i in 0..VELOCITY_BIN_COUNT {
            velocity.push(format!("bin_{i}"));
        }

        let genre = vec![
            "[pad]".into(),
            "edm".into(),
            "indie".into(),
            "hiphop".into(),
            "pop".into(),
            "unknown".into(),
        ];

        Vocabulary {
            tables: [
                TypeTable::new(family),
                TypeTable::new(tempo),
                TypeTable::new(chord),
                TypeTable::new(barbeat),
                TypeTable::new(pitch),
                TypeTable::new(duration),
                TypeTable::new(velocity),
                TypeTable::new(genre),
            ],
        }
    }

    pub fn size(&self, t: TokenType) -> u32 {
        self.tables[t.index()].labels.len() as u32
    }

    pub fn sizes(&self) -> [u32; TokenType::COUNT] {
        let mut out = [0; TokenType::COUNT];
        for t in TokenType::ALL {
            out[t.index()] = self.size(t);
        }
        out
    }

    pub fn labels(&self, t: TokenType) -> &[String] {
        &self.tables[t.index()].labels
    }

    pub fn encode_label(&self, t: TokenType, label: &str) -> Result<u32> {
        self.tables[t.index()].by_label.get(label).copied().ok_or_else(|| Error::Lookup {
            token_type: t.name().to_string(),
            value: label.to_string(),
        })
    }

    pub fn decode_id(&self, t: TokenType, id: u32) -> Result<&str> {
        self.tables[t.index()].labels.get(id as usize).map(String::as_str).ok_or_else(|| {
            Error::Lookup { token_type: t.name().to_string(), value: format!("id {id}") }
        })
    }

    // ---- domain-value helpers -------------------------------------------

    /// BPM → tempo token id; values outside 32–224 clamp to the edge bins.
    pub fn tempo_id_of_bpm(&self, bpm: f64) -> u32 {
        let bin = ((bpm - TEMPO_BPM_MIN) / TEMPO_BPM_STEP).floor();
        let bin = bin.clamp(0.0, (TEMPO_BIN_COUNT - 1) as f64) as u32;
        2 + bin
    }

    /// Representative BPM (bin center) for a tempo token id.
    pub fn bpm_of_tempo_id(&self, id: u32) -> Result<f64> {
        if id < 2 || id >= self.size(TokenType::Tempo) {
            return Err(Error::Lookup {
                token_type: "tempo".into(),
                value: format!("id {id} is not a bin"),
            });
        }
        let bin = (id - 2) as f64;
        Ok(TEMPO_BPM_MIN + bin * TEMPO_BPM_STEP + TEMPO_BPM_STEP / 2.0)
    }

    /// Velocity 0–127 → velocity token id (bins of 4).
    pub fn velocity_id_of(&self, velocity: u8) -> u32 {
        let bin = (velocity as u32 / 4).min(VELOCITY_BIN_COUNT - 1);
        2 + bin
    }

    /// Representative velocity (bin center) for a velocity token id.
    pub fn velocity_of_id(&self, id: u32) -> Result<u8> {
        if id < 2 || id >= self.size(TokenType::Velocity) {
            return Err(Error::Lookup {
                token_type: "velocity".into(),
                value: format!("id {id} is not a bin"),
            });
        }
        Ok(((id - 2) * 4 + 2) as u8)
    }

    pub fn pitch_id_of(&self, midi: u8) -> Result<u32> {
        if !(PITCH_MIN..=PITCH_MAX).contains(&midi) {
            return Err(Error::Lookup {
                token_type: "pitch".into(),
                value: format!("midi {midi} outside {PITCH_MIN}-{PITCH_MAX}"),
            });
        }
        Ok(2 + (midi - PITCH_MIN) as u32)
    }

    pub fn pitch_of_id(&self, id: u32) -> Result<u8> {
        if id < 2 || id >= self.size(TokenType::Pitch) {
            return Err(Error::Lookup {
                token_type: "pitch".into(),
                value: format!("id {id} is not a key"),
            });
        }
        Ok(PITCH_MIN + (id - 2) as u8)
    }

    /// Duration in grid ticks (1–32) → duration token id.
    pub fn duration_id_of(&self, ticks: u32) -> Result<u32> {
        if !(1..=DURATION_MAX).contains(&ticks) {
            return Err(Error::Lookup {
                token_type: "duration".into(),
                value: format!("{ticks} ticks outside 1-{DURATION_MAX}"),
            });
        }
        Ok(2 + (ticks - 1))
    }

    pub fn duration_of_id(&self, id: u32) -> Result<u32> {
        if id < 2 || id >= self.size(TokenType::Duration) {
            return Err(Error::Lookup {
                token_type: "duration".into(),
                value: format!("id {id} is not a duration"),
            });
        }
        Ok(id - 1)
    }

    /// `bar` marker id in the BARBEAT table.
    pub fn barbeat_bar_id(&self) -> u32 {
        2
    }

    /// Beat-position id for beat 0–15.
    pub fn barbeat_beat_id(&self, beat: u32) -> Result<u32> {
        if beat >= BEATS_PER_BAR {
            return Err(Error::Lookup {
                token_type: "barbeat".into(),
                value: format!("beat {beat} outside 0-15"),
            });
        }
        Ok(3 + beat)
    }

    /// Inverse of `barbeat_beat_id`; `None` for the bar marker or specials.
    pub fn beat_of_barbeat_id(&self, id: u32) -> Option<u32> {
        if (3..3 + BEATS_PER_BAR).contains(&id) {
            Some(id - 3)
        } else {
            None
        }
    }

    /// Chord (root pitch class 0–11, quality index 0–9) → chord token id.
    pub fn chord_id_of(&self, root: usize, quality: usize) -> u32 {
        2 + (root * CHORD_QUALITIES.len() + quality) as u32
    }

    pub fn genre_id_of(&self, label: &str) -> Result<u32> {
        self.encode_label(TokenType::Genre, label)
    }

    pub fn genre_labels(&self) -> Vec<&str> {
        // all real genres (skip [pad])
        self.labels(TokenType::Genre).iter().skip(1).map(String::as_str).collect()
    }

    /// Serialize the tables as `{type: {labels: [...], version: "..."}}`
    /// with byte-stable key ordering.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{\n");
        for (i, t) in TokenType::ALL.iter().enumerate() {
            let labels: Vec<serde_json::Value> = self
                .labels(*t)
                .iter()
                .map(|l| serde_json::Value::String(l.clone()))
                .collect();
            let _ = write!(
                out,
                "  {}: {{\"labels\": {}, \"version\": \"{}\"}}",
                serde_json::Value::String(t.name().to_string()),
                serde_json::Value::Array(labels),
                VOCAB_VERSION
            );
            out.push_str(if i + 1 < TokenType::COUNT { ",\n" } else { "\n" });
        }
        out.push_str("}\n");
        out
    }
}

/// One musical event: one token id per type. Invariants are enforced by
/// [`validate`], not by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CompoundWord {
    ids: [u32; TokenType::COUNT],
}

impl CompoundWord {
    pub fn from_ids(ids: [u32; TokenType::COUNT]) -> Self {
        CompoundWord { ids }
    }

    pub fn get(&self, t: TokenType) -> u32 {
        self.ids[t.index()]
    }

    pub fn set(&mut self, t: TokenType, id: u32) {
        self.ids[t.index()] = id;
    }

    pub fn ids(&self) -> &[u32; TokenType::COUNT] {
        &self.ids
    }

    pub fn family(&self) -> u32 {
        self.get(TokenType::Family)
    }

    /// All-pad word used for batch padding.
    pub fn padding() -> Self {
        CompoundWord { ids: [PAD_ID; TokenType::COUNT] }
    }

    /// The canonical sequence opener: a metric word carrying the bar marker.
    pub fn bar_word(vocab: &Vocabulary, genre_id: u32) -> Self {
        let mut w = CompoundWord { ids: [IGNORE_ID; TokenType::COUNT] };
        w.set(TokenType::Family, FAMILY_METRIC);
        w.set(TokenType::BarBeat, vocab.barbeat_bar_id());
        w.set(TokenType::Genre, genre_id);
        w
    }

    /// Terminal word: family eos, all other event fields `[ignore]`.
    pub fn eos_word(genre_id: u32) -> Self {
        let mut w = CompoundWord { ids: [IGNORE_ID; TokenType::COUNT] };
        w.set(TokenType::Family, FAMILY_EOS);
        w.set(TokenType::Genre, genre_id);
        w
    }

    pub fn is_padding(&self) -> bool {
        self.family() == FAMILY_PAD
    }
}

/// Check every compound-word invariant; returns all violations (empty iff
/// the word is valid). Never fails — validation reports, it does not throw.
pub fn validate(word: &CompoundWord, vocab: &Vocabulary) -> Vec<String> {
    let mut violations = Vec::new();
    for t in TokenType::ALL {
        let id = word.get(t);
        if id >= vocab.size(t) {
            violations.push(format!("{} id {} out of range (size {})", t, id, vocab.size(t)));
        }
    }
    if !violations.is_empty() {
        return violations; // range errors make the rules below meaningless
    }
    // FAMILY and GENRE tables contain no [ignore] label, so "genre is never
    // [ignore]" holds by construction once ids are in range.

    match word.family() {
        FAMILY_METRIC => {
            for t in [TokenType::Pitch, TokenType::Duration, TokenType::Velocity] {
                if word.get(t) != IGNORE_ID {
                    violations.push(format!("note field set on metric event: {t} id {}", word.get(t)));
                }
            }
            let bb = word.get(TokenType::BarBeat);
            if bb == PAD_ID || bb == IGNORE_ID {
                violations.push("metric event must carry a bar or beat token".to_string());
            }
            for t in [TokenType::Tempo, TokenType::Chord] {
                if word.get(t) == PAD_ID {
                    violations.push(format!("{t} on metric event must be a value or [ignore], got [pad]"));
                }
            }
        }
        FAMILY_NOTE => {
            for t in [TokenType::Tempo, TokenType::Chord, TokenType::BarBeat] {
                if word.get(t) != IGNORE_ID {
                    violations.push(format!("metric field set on note event: {t} id {}", word.get(t)));
                }
            }
            for t in [TokenType::Pitch, TokenType::Duration, TokenType::Velocity] {
                let id = word.get(t);
                if id == PAD_ID || id == IGNORE_ID {
                    violations.push(format!("note event must carry a real {t} token"));
                }
            }
        }
        FAMILY_EOS => {
            for t in [
                TokenType::Tempo,
                TokenType::Chord,
                TokenType::BarBeat,
                TokenType::Pitch,
                TokenType::Duration,
                TokenType::Velocity,
            ] {
                let id = word.get(t);
                if id != IGNORE_ID && id != PAD_ID {
                    violations.push(format!("eos event: {t} must be [ignore] or [pad], got id {id}"));
                }
            }
        }
        FAMILY_PAD => {
            for t in TokenType::ALL {
                if word.get(t) != PAD_ID {
                    violations.push(format!("padding word must be [pad] everywhere, {t} id {}", word.get(t)));
                }
            }
        }
        other => violations.push(format!("unknown family id {other}")),
    }

    if word.family() != FAMILY_PAD && word.get(TokenType::Genre) == PAD_ID {
        violations.push("genre must be set on every non-padding word".to_string());
    }

    violations
}

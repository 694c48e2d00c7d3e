//! Symbolic-music ↔ compound-word codec: SMF parsing and writing, chord
//! detection, token encoding/decoding, piano-roll rendering, corpus I/O and
//! statistics.
//!
//! Input is beat-aligned symbolic music on a sixteenth-note grid in 4/4;
//! audio is out of scope by design.

mod chords;
mod codec;
mod corpus;
mod pianoroll;
mod smf;
mod stats;

pub use chords::{detect_chords, ChordAt};
pub use codec::{from_compound_words, to_compound_words};
pub use corpus::{parse_corpus_line, read_corpus, write_corpus, CorpusSong};
pub use pianoroll::render_piano_roll;
pub use smf::{parse_smf, write_smf};
pub use stats::{corpus_stats, CorpusStats};

use crate::vocab::CompoundWord;

/// Grid resolution: four ticks per beat — the sixteenth-note grid.
pub const TICKS_PER_BEAT: u32 = 4;
/// Sixteenth positions per 4/4 bar.
pub const TICKS_PER_BAR: u32 = 16;

/// One quantized note: onset and duration in grid ticks, MIDI pitch,
/// MIDI velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Note {
    pub onset: u32,
    pub pitch: u8,
    pub duration: u32,
    pub velocity: u8,
}

/// Quantized symbolic music: notes plus tempo annotations and a genre label.
/// Meter is fixed 4/4; the grid is sixteenth notes.
#[derive(Debug, Clone, PartialEq)]
pub struct NoteEventTrack {
    /// Sorted by (onset, pitch, duration, velocity).
    pub notes: Vec<Note>,
    /// (grid tick, BPM) — first entry at tick 0.
    pub tempo_changes: Vec<(u32, f64)>,
    pub genre: String,
}

impl NoteEventTrack {
    pub fn new(genre: impl Into<String>) -> Self {
        NoteEventTrack {
            notes: Vec::new(),
            tempo_changes: vec![(0, 120.0)],
            genre: genre.into(),
        }
    }

    /// Restore the (onset, pitch, duration, velocity) sort invariant.
    pub fn normalize(&mut self) {
        self.notes.sort_unstable();
    }

    /// BPM in effect at a grid tick.
    pub fn tempo_at(&self, tick: u32) -> f64 {
        let mut bpm = 120.0;
        for &(t, b) in &self.tempo_changes {
            if t <= tick {
                bpm = b;
            } else {
                break;
            }
        }
        bpm
    }

    /// Index of the last bar touched by a note onset (0 for an empty track).
    pub fn last_bar(&self) -> u32 {
        self.notes.iter().map(|n| n.onset / TICKS_PER_BAR).max().unwrap_or(0)
    }
}

/// A tokenized song: an ordered compound-word sequence plus its source id.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub source_id: String,
    pub words: Vec<CompoundWord>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

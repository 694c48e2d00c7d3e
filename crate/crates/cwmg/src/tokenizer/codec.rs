//! Note events ↔ compound words.
//!
//! Encoding walks musical time bar by bar: a bar-marker word opens every
//! bar, each sixteenth position with note onsets gets one metric word
//! (beat + tempo + chord) followed by one note word per onset in descending
//! pitch order, and a single eos word terminates the sequence. Decoding
//! inverts this exactly on the quantized grid.

use super::chords::detect_chords;
use super::{NoteEventTrack, Note, TokenSequence, TICKS_PER_BAR};
use crate::error::{Error, Result};
use crate::vocab::{
    validate, CompoundWord, TokenType, Vocabulary, DURATION_MAX, FAMILY_EOS, FAMILY_METRIC,
    FAMILY_NOTE, FAMILY_PAD, IGNORE_ID, PITCH_MAX, PITCH_MIN,
};

/// Encode a quantized track as a compound-word sequence. Returns the
/// sequence and clamping warnings.
pub fn to_compound_words(
    track: &NoteEventTrack,
    vocab: &Vocabulary,
    source_id: &str,
) -> Result<(TokenSequence, Vec<String>)> {
    let genre_id = vocab.genre_id_of(&track.genre)?;
    let mut warnings = Vec::new();
    let chords = detect_chords(track);
    let chord_at = |bar: u32, beat: u32| -> &str {
        let half = beat / 8;
        &chords[(bar * 2 + half) as usize].label
    };

    // walk a sorted view so an unnormalized input cannot drop notes
    let mut notes = track.notes.clone();
    notes.sort_unstable();

    let mut words = Vec::new();
    let last_bar = track.last_bar();
    let mut note_idx = 0usize;

    for bar in 0..=last_bar {
        words.push(CompoundWord::bar_word(vocab, genre_id));
        for beat in 0..TICKS_PER_BAR {
            let tick = bar * TICKS_PER_BAR + beat;
            let mut onsets: Vec<Note> = Vec::new();
            while note_idx < notes.len() && notes[note_idx].onset == tick {
                onsets.push(notes[note_idx]);
                note_idx += 1;
            }
            if onsets.is_empty() {
                continue;
            }

            let mut beat_word = CompoundWord::from_ids([IGNORE_ID; TokenType::COUNT]);
            beat_word.set(TokenType::Family, FAMILY_METRIC);
            beat_word.set(TokenType::BarBeat, vocab.barbeat_beat_id(beat)?);
            beat_word.set(TokenType::Tempo, vocab.tempo_id_of_bpm(track.tempo_at(tick)));
            let chord_label = chord_at(bar, beat);
            match vocab.encode_label(TokenType::Chord, chord_label) {
                Ok(id) => beat_word.set(TokenType::Chord, id),
                Err(_) => {
                    // only "none" (a fully silent half-bar) is unencodable,
                    // which cannot normally coincide with an onset
                    warnings.push(format!(
                        "no chord vocabulary entry for {chord_label:?} at bar {bar} beat {beat}"
                    ));
                }
            }
            beat_word.set(TokenType::Genre, genre_id);
            words.push(beat_word);

            // same onset: highest pitch first, then longer, then louder
            onsets.sort_by(|a, b| {
                (b.pitch, b.duration, b.velocity).cmp(&(a.pitch, a.duration, a.velocity))
            });
            for n in onsets {
                let pitch = if n.pitch < PITCH_MIN || n.pitch > PITCH_MAX {
                    let clamped = n.pitch.clamp(PITCH_MIN, PITCH_MAX);
                    warnings.push(format!(
                        "pitch {} at tick {tick} clamped to {clamped}",
                        n.pitch
                    ));
                    clamped
                } else {
                    n.pitch
                };
                let duration = if n.duration > DURATION_MAX {
                    warnings.push(format!(
                        "duration {} at tick {tick} clamped to {DURATION_MAX}",
                        n.duration
                    ));
                    DURATION_MAX
                } else {
                    n.duration
                };
                let mut w = CompoundWord::from_ids([IGNORE_ID; TokenType::COUNT]);
                w.set(TokenType::Family, FAMILY_NOTE);
                w.set(TokenType::Pitch, vocab.pitch_id_of(pitch)?);
                w.set(TokenType::Duration, vocab.duration_id_of(duration)?);
                w.set(TokenType::Velocity, vocab.velocity_id_of(n.velocity));
                w.set(TokenType::Genre, genre_id);
                words.push(w);
            }
        }
    }
    words.push(CompoundWord::eos_word(genre_id));

    debug_assert!(words.iter().all(|w| validate(w, vocab).is_empty()));
    Ok((TokenSequence { source_id: source_id.to_string(), words }, warnings))
}

/// Decode a compound-word sequence back into a quantized track.
///
/// Words must be individually valid (see [`validate`]); structural problems
/// (a note word before any beat word) are reported with the word index.
pub fn from_compound_words(seq: &TokenSequence, vocab: &Vocabulary) -> Result<NoteEventTrack> {
    let mut track = NoteEventTrack::new("unknown");
    track.tempo_changes.clear();

    let mut current_bar: i64 = -1;
    let mut current_beat: Option<u32> = None;
    let mut last_tempo_id: Option<u32> = None;
    let mut genre_set = false;

    for (idx, word) in seq.words.iter().enumerate() {
        match word.family() {
            FAMILY_PAD => continue,
            FAMILY_EOS => break,
            FAMILY_METRIC => {
                if !genre_set {
                    track.genre = vocab.decode_id(TokenType::Genre, word.get(TokenType::Genre))?.to_string();
                    genre_set = true;
                }
                let bb = word.get(TokenType::BarBeat);
                if bb == vocab.barbeat_bar_id() {
                    current_bar += 1;
                } else if let Some(beat) = vocab.beat_of_barbeat_id(bb) {
                    if current_bar < 0 {
                        return Err(Error::Structural {
                            index: idx,
                            msg: "beat word before any bar word".into(),
                        });
                    }
                    current_beat = Some(beat);
                    let tempo_id = word.get(TokenType::Tempo);
                    if tempo_id != IGNORE_ID && Some(tempo_id) != last_tempo_id {
                        let bpm = vocab.bpm_of_tempo_id(tempo_id)?;
                        let tick = if last_tempo_id.is_none() {
                            0 // first tempo token defines the song tempo
                        } else {
                            current_bar as u32 * TICKS_PER_BAR + beat
                        };
                        track.tempo_changes.push((tick, bpm));
                        last_tempo_id = Some(tempo_id);
                    }
                } else {
                    return Err(Error::Structural {
                        index: idx,
                        msg: format!("metric word carries barbeat id {bb}, not a bar or beat"),
                    });
                }
            }
            FAMILY_NOTE => {
                if !genre_set {
                    track.genre = vocab.decode_id(TokenType::Genre, word.get(TokenType::Genre))?.to_string();
                    genre_set = true;
                }
                let Some(beat) = current_beat else {
                    return Err(Error::Structural {
                        index: idx,
                        msg: "note word before any beat word".into(),
                    });
                };
                let pitch = vocab.pitch_of_id(word.get(TokenType::Pitch)).map_err(|e| {
                    Error::Structural { index: idx, msg: e.to_string() }
                })?;
                let duration = vocab.duration_of_id(word.get(TokenType::Duration)).map_err(|e| {
                    Error::Structural { index: idx, msg: e.to_string() }
                })?;
                let velocity = vocab.velocity_of_id(word.get(TokenType::Velocity)).map_err(|e| {
                    Error::Structural { index: idx, msg: e.to_string() }
                })?;
                track.notes.push(Note {
                    onset: current_bar.max(0) as u32 * TICKS_PER_BAR + beat,
                    pitch,
                    duration,
                    velocity,
                });
            }
            other => {
                return Err(Error::Structural {
                    index: idx,
                    msg: format!("unknown family id {other}"),
                })
            }
        }
    }

    if track.tempo_changes.is_empty() {
        track.tempo_changes.push((0, 120.0));
    }
    track.normalize();
    Ok(track)
}

//! Corpus file format: JSON lines, one song per line.
//!
//! `{"id": "...", "genre": "...", "words": [[8 ints], ...]}` — auditable,
//! diff-friendly, byte-stable for identical inputs.

use serde::{Deserialize, Serialize};

use super::TokenSequence;
use crate::error::{Error, Result};
use crate::vocab::{CompoundWord, TokenType, Vocabulary};

#[derive(Debug, Serialize, Deserialize)]
pub struct CorpusSong {
    pub id: String,
    pub genre: String,
    pub words: Vec<[u32; TokenType::COUNT]>,
}

/// Serialize one song as a corpus line (no trailing newline).
pub fn song_to_line(seq: &TokenSequence, vocab: &Vocabulary) -> String {
    let genre = seq
        .words
        .iter()
        .find(|w| !w.is_padding())
        .and_then(|w| vocab.decode_id(TokenType::Genre, w.get(TokenType::Genre)).ok())
        .unwrap_or("unknown");
    let song = CorpusSong {
        id: seq.source_id.clone(),
        genre: genre.to_string(),
        words: seq.words.iter().map(|w| *w.ids()).collect(),
    };
    serde_json::to_string(&song).expect("corpus serialization cannot fail")
}

/// Write a whole corpus: one line per song, `\n`-terminated.
pub fn write_corpus(songs: &[TokenSequence], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for seq in songs {
        out.push_str(&song_to_line(seq, vocab));
        out.push('\n');
    }
    out
}

/// Parse one corpus line. `line_no` is 1-based and used in errors; all token
/// ids are range-checked against the vocabulary.
pub fn parse_corpus_line(line: &str, line_no: usize, vocab: &Vocabulary) -> Result<TokenSequence> {
    let song: CorpusSong = serde_json::from_str(line).map_err(|e| Error::Corpus {
        line: line_no,
        msg: e.to_string(),
    })?;
    let mut words = Vec::with_capacity(song.words.len());
    for (w_idx, ids) in song.words.iter().enumerate() {
        for t in TokenType::ALL {
            let id = ids[t.index()];
            if id >= vocab.size(t) {
                return Err(Error::Corpus {
                    line: line_no,
                    msg: format!(
                        "word {w_idx}: {t} id {id} exceeds vocabulary size {}",
                        vocab.size(t)
                    ),
                });
            }
        }
        words.push(CompoundWord::from_ids(*ids));
    }
    Ok(TokenSequence { source_id: song.id, words })
}

/// Parse a whole corpus file. Empty lines are ignored.
pub fn read_corpus(text: &str, vocab: &Vocabulary) -> Result<Vec<TokenSequence>> {
    let mut songs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        songs.push(parse_corpus_line(line, i + 1, vocab)?);
    }
    Ok(songs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{to_compound_words, Note, NoteEventTrack};

    #[test]
    fn corpus_round_trips_through_text() {
        let vocab = Vocabulary::build();
        let mut track = NoteEventTrack::new("indie");
        track.notes.push(Note { onset: 0, pitch: 60, duration: 4, velocity: 62 });
        track.notes.push(Note { onset: 20, pitch: 72, duration: 2, velocity: 90 });
        track.normalize();
        let (seq, _) = to_compound_words(&track, &vocab, "song-a").unwrap();
        let text = write_corpus(std::slice::from_ref(&seq), &vocab);
        let back = read_corpus(&text, &vocab).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0], seq);
        // serialization is deterministic
        assert_eq!(text, write_corpus(&[back[0].clone()], &vocab));
    }

    #[test]
    fn malformed_line_names_its_line_number() {
        let vocab = Vocabulary::build();
        let text = "\n\n{\"id\": \"x\", \"genre\": \"edm\", \"words\": []}\nnot json\n";
        let err = read_corpus(text, &vocab).unwrap_err();
        match err {
            Error::Corpus { line, .. } => assert_eq!(line, 4),
            other => panic!("expected corpus error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_id_is_rejected() {
        let vocab = Vocabulary::build();
        let text = r#"{"id": "x", "genre": "edm", "words": [[0,0,0,0,9999,0,0,0]]}"#;
        let err = parse_corpus_line(text, 1, &vocab).unwrap_err();
        assert!(err.to_string().contains("pitch id 9999"));
    }
}

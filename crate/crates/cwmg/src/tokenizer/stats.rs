//! Corpus statistics: per-type token histograms and per-song word counts.

use std::fmt::Write;

use super::TokenSequence;
use crate::error::{Error, Result};
use crate::vocab::{TokenType, Vocabulary};

#[derive(Debug, Clone)]
pub struct CorpusStats {
    /// `counts[type][id]`
    pub per_type: Vec<Vec<u64>>,
    /// (song id, word count) in corpus order
    pub per_song: Vec<(String, usize)>,
}

impl CorpusStats {
    pub fn total_words(&self) -> u64 {
        self.per_song.iter().map(|(_, n)| *n as u64).sum()
    }

    pub fn mean_words_per_song(&self) -> f64 {
        self.total_words() as f64 / self.per_song.len() as f64
    }

    /// `type,label,count` rows for every id of every type (zeros included).
    pub fn to_csv(&self, vocab: &Vocabulary) -> String {
        let mut out = String::from("type,label,count\n");
        for t in TokenType::ALL {
            for (id, count) in self.per_type[t.index()].iter().enumerate() {
                let label = vocab.decode_id(t, id as u32).unwrap_or("?");
                let _ = writeln!(out, "{},{},{}", t.name(), label, count);
            }
        }
        out
    }

    /// Simple stacked bar panels, one per token type.
    pub fn to_svg(&self, vocab: &Vocabulary) -> String {
        const PANEL_H: u32 = 64;
        const BAR_W: u32 = 5;
        const LABEL_W: u32 = 70;
        let max_ids = self.per_type.iter().map(Vec::len).max().unwrap_or(0) as u32;
        let width = LABEL_W + max_ids * BAR_W + 10;
        let height = TokenType::COUNT as u32 * (PANEL_H + 14) + 10;
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
        );
        for t in TokenType::ALL {
            let counts = &self.per_type[t.index()];
            let top = 5 + t.index() as u32 * (PANEL_H + 14);
            let peak = counts.iter().copied().max().unwrap_or(0).max(1);
            let _ = writeln!(
                svg,
                "<text x=\"4\" y=\"{}\" font-size=\"10\" font-family=\"monospace\">{} ({})</text>",
                top + PANEL_H / 2,
                t.name(),
                vocab.size(t)
            );
            for (id, &c) in counts.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let h = ((c as f64 / peak as f64) * PANEL_H as f64).ceil() as u32;
                let x = LABEL_W + id as u32 * BAR_W;
                let y = top + PANEL_H - h;
                let _ = writeln!(
                    svg,
                    "<rect x=\"{x}\" y=\"{y}\" width=\"{}\" height=\"{h}\" fill=\"#3566b0\"/>",
                    BAR_W - 1
                );
            }
            let _ = writeln!(
                svg,
                "<line x1=\"{LABEL_W}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>",
                top + PANEL_H,
                LABEL_W + max_ids * BAR_W,
                top + PANEL_H
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Histogram every token type across the corpus. Errors on an empty corpus.
pub fn corpus_stats(songs: &[TokenSequence], vocab: &Vocabulary) -> Result<CorpusStats> {
    if songs.is_empty() {
        return Err(Error::param("corpus_stats: empty dataset"));
    }
    let mut per_type: Vec<Vec<u64>> =
        TokenType::ALL.iter().map(|&t| vec![0u64; vocab.size(t) as usize]).collect();
    let mut per_song = Vec::with_capacity(songs.len());
    for song in songs {
        for word in &song.words {
            for t in TokenType::ALL {
                let id = word.get(t) as usize;
                if let Some(slot) = per_type[t.index()].get_mut(id) {
                    *slot += 1;
                }
            }
        }
        per_song.push((song.source_id.clone(), song.len()));
    }
    Ok(CorpusStats { per_type, per_song })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{to_compound_words, Note, NoteEventTrack};
    use crate::vocab::FAMILY_NOTE;

    fn toy_song(id: &str) -> TokenSequence {
        let vocab = Vocabulary::build();
        let mut track = NoteEventTrack::new("edm");
        track.notes.push(Note { onset: 0, pitch: 60, duration: 4, velocity: 62 });
        track.notes.push(Note { onset: 8, pitch: 64, duration: 4, velocity: 62 });
        track.normalize();
        to_compound_words(&track, &vocab, id).unwrap().0
    }

    #[test]
    fn totals_equal_sum_of_lengths() {
        let vocab = Vocabulary::build();
        let songs = vec![toy_song("a"), toy_song("b")];
        let stats = corpus_stats(&songs, &vocab).unwrap();
        let expect: u64 = songs.iter().map(|s| s.len() as u64).sum();
        assert_eq!(stats.total_words(), expect);
        // each word contributes once to every type histogram
        for t in TokenType::ALL {
            let sum: u64 = stats.per_type[t.index()].iter().sum();
            assert_eq!(sum, expect, "{t}");
        }
    }

    #[test]
    fn duplicate_sequences_double_all_counts() {
        let vocab = Vocabulary::build();
        let one = corpus_stats(&[toy_song("a")], &vocab).unwrap();
        let two = corpus_stats(&[toy_song("a"), toy_song("a")], &vocab).unwrap();
        for t in TokenType::ALL {
            for (x, y) in one.per_type[t.index()].iter().zip(&two.per_type[t.index()]) {
                assert_eq!(*y, 2 * x);
            }
        }
    }

    #[test]
    fn hand_counted_histogram() {
        let vocab = Vocabulary::build();
        let song = toy_song("a");
        // bar, beat, note, beat, note, eos = 6 words
        assert_eq!(song.len(), 6);
        let stats = corpus_stats(&[song], &vocab).unwrap();
        assert_eq!(stats.per_type[TokenType::Family.index()][FAMILY_NOTE as usize], 2);
        let pitch60 = vocab.pitch_id_of(60).unwrap() as usize;
        assert_eq!(stats.per_type[TokenType::Pitch.index()][pitch60], 1);
        assert_eq!(stats.per_song, vec![("a".to_string(), 6)]);
    }

    #[test]
    fn empty_dataset_is_parameter_error() {
        let vocab = Vocabulary::build();
        assert!(corpus_stats(&[], &vocab).is_err());
    }

    #[test]
    fn csv_has_full_table_rows() {
        let vocab = Vocabulary::build();
        let stats = corpus_stats(&[toy_song("a")], &vocab).unwrap();
        let csv = stats.to_csv(&vocab);
        let rows: Vec<&str> = csv.lines().collect();
        let expect: u32 = TokenType::ALL.iter().map(|&t| vocab.size(t)).sum();
        assert_eq!(rows.len() as u32, expect + 1); // header
        assert!(rows.contains(&"family,metric,3")); // bar + 2 beats
    }
}

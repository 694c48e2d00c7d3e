//! Half-bar chord labels from pitch-class template matching.

use super::{NoteEventTrack, TICKS_PER_BAR};
use crate::vocab::{CHORD_QUALITIES, CHORD_ROOTS};

/// Intervals (semitones above the root) per quality, in
/// [`CHORD_QUALITIES`] order. "none" is a bare root.
const QUALITY_INTERVALS: [&[u8]; 10] = [
    &[0, 4, 7],     // maj
    &[0, 3, 7],     // min
    &[0, 3, 6],     // dim
    &[0, 4, 8],     // aug
    &[0, 4, 7, 10], // dom7
    &[0, 3, 7, 10], // min7
    &[0, 4, 7, 11], // maj7
    &[0, 2, 7],     // sus2
    &[0, 5, 7],     // sus4
    &[0],           // none
];

/// A detected chord: half-bar position plus the winning label
/// ("root:quality", or "none" when the half-bar is silent).
#[derive(Debug, Clone, PartialEq)]
pub struct ChordAt {
    pub bar: u32,
    /// 0 for the first half-bar, 8 for the second.
    pub beat: u32,
    pub label: String,
}

/// Score half-bars of sounding notes against the 120 root×quality templates.
/// Deterministic: ties break toward the lower (root, quality) index.
pub fn detect_chords(track: &NoteEventTrack) -> Vec<ChordAt> {
    let last_bar = track.last_bar();
    let mut out = Vec::new();
    for bar in 0..=last_bar {
        for half in 0..2u32 {
            let start = bar * TICKS_PER_BAR + half * 8;
            let end = start + 8;
            let hist = pitch_class_histogram(track, start, end);
            out.push(ChordAt { bar, beat: half * 8, label: best_label(&hist) });
        }
    }
    out
}

/// Duration-weighted histogram of pitch classes sounding in [start, end).
fn pitch_class_histogram(track: &NoteEventTrack, start: u32, end: u32) -> [f64; 12] {
    let mut hist = [0.0; 12];
    for n in &track.notes {
        let n_end = n.onset + n.duration;
        let overlap_start = n.onset.max(start);
        let overlap_end = n_end.min(end);
        if overlap_end > overlap_start {
            hist[(n.pitch % 12) as usize] += (overlap_end - overlap_start) as f64;
        }
    }
    hist
}

/// Best-scoring template over the histogram, or "none" for silence.
/// Score favours template mass, penalizes off-template mass and absent
/// chord tones.
fn best_label(hist: &[f64; 12]) -> String {
    let total: f64 = hist.iter().sum();
    if total <= 0.0 {
        return "none".to_string();
    }
    let mut best_score = f64::NEG_INFINITY;
    let mut best = (0usize, 0usize);
    for root in 0..12 {
        for (quality, intervals) in QUALITY_INTERVALS.iter().enumerate() {
            let mut on = 0.0;
            let mut missing = 0usize;
            for &iv in *intervals {
                let mass = hist[(root + iv as usize) % 12];
                on += mass;
                if mass == 0.0 {
                    missing += 1;
                }
            }
            let off = total - on;
            let score = on - off - 0.5 * missing as f64 * (total / intervals.len() as f64);
            if score > best_score {
                best_score = score;
                best = (root, quality);
            }
        }
    }
    format!("{}:{}", CHORD_ROOTS[best.0], CHORD_QUALITIES[best.1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Note;

    fn track_with(pitches: &[u8]) -> NoteEventTrack {
        let mut t = NoteEventTrack::new("unknown");
        for &p in pitches {
            t.notes.push(Note { onset: 0, pitch: p, duration: 8, velocity: 64 });
        }
        t.normalize();
        t
    }

    #[test]
    fn c_major_triad() {
        let chords = detect_chords(&track_with(&[60, 64, 67]));
        assert_eq!(chords[0].label, "C:maj");
    }

    #[test]
    fn a_minor_triad() {
        let chords = detect_chords(&track_with(&[57, 60, 64]));
        assert_eq!(chords[0].label, "A:min");
    }

    #[test]
    fn silent_half_bar_is_none() {
        let chords = detect_chords(&track_with(&[60, 64, 67]));
        // second half of bar 0 has no sounding notes
        assert_eq!(chords[1].beat, 8);
        assert_eq!(chords[1].label, "none");
    }

    #[test]
    fn lone_pitch_maps_to_bare_root() {
        let chords = detect_chords(&track_with(&[62]));
        assert_eq!(chords[0].label, "D:none");
    }

    #[test]
    fn dominant_seventh() {
        let chords = detect_chords(&track_with(&[55, 59, 62, 65])); // G B D F
        assert_eq!(chords[0].label, "G:dom7");
    }

    #[test]
    fn every_half_bar_reported() {
        let mut t = track_with(&[60]);
        t.notes.push(Note { onset: 40, pitch: 65, duration: 2, velocity: 64 });
        t.normalize();
        let chords = detect_chords(&t);
        // bars 0..=2, two half-bars each
        assert_eq!(chords.len(), 6);
        assert_eq!(chords[5].bar, 2);
        assert_eq!(chords[4].label, "none"); // ticks 32..40 are silent
        assert_eq!(chords[5].label, "F:none"); // pitch 65 sounds at tick 40
    }
}

//! Piano-roll rendering: time vs pitch, one rectangle per note.
//!
//! All geometry is integer pixels, so identical tracks produce byte-identical
//! SVG documents.

use std::fmt::Write;

use super::{NoteEventTrack, TICKS_PER_BAR};

const CELL_W: u32 = 8; // pixels per sixteenth
const CELL_H: u32 = 6; // pixels per semitone
const MARGIN_LEFT: u32 = 36;
const MARGIN_TOP: u32 = 12;
const MARGIN_RIGHT: u32 = 12;
const MARGIN_BOTTOM: u32 = 18;

/// Render a track as an SVG piano roll. An empty track yields a four-bar
/// empty grid.
pub fn render_piano_roll(track: &NoteEventTrack) -> String {
    let end_tick = track
        .notes
        .iter()
        .map(|n| n.onset + n.duration)
        .max()
        .unwrap_or(0);
    let bars = (end_tick.div_ceil(TICKS_PER_BAR)).max(4);
    let ticks = bars * TICKS_PER_BAR;

    let (lo, hi) = match (
        track.notes.iter().map(|n| n.pitch).min(),
        track.notes.iter().map(|n| n.pitch).max(),
    ) {
        (Some(lo), Some(hi)) => (lo.saturating_sub(2).max(21), (hi + 2).min(108)),
        _ => (48, 72),
    };
    let rows = (hi - lo + 1) as u32;

    let grid_w = ticks * CELL_W;
    let grid_h = rows * CELL_H;
    let width = MARGIN_LEFT + grid_w + MARGIN_RIGHT;
    let height = MARGIN_TOP + grid_h + MARGIN_BOTTOM;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );
    let _ = writeln!(
        svg,
        "<rect x=\"{MARGIN_LEFT}\" y=\"{MARGIN_TOP}\" width=\"{grid_w}\" height=\"{grid_h}\" fill=\"#fcfcfc\" stroke=\"#888\"/>"
    );

    // beat lines (light) and bar lines (dark)
    for tick in (0..=ticks).step_by(4) {
        let x = MARGIN_LEFT + tick * CELL_W;
        let (color, w) = if tick % TICKS_PER_BAR == 0 { ("#999", 1) } else { ("#e0e0e0", 1) };
        let _ = writeln!(
            svg,
            "<line x1=\"{x}\" y1=\"{MARGIN_TOP}\" x2=\"{x}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"{w}\"/>",
            MARGIN_TOP + grid_h
        );
    }
    // octave lines at every C
    for pitch in lo..=hi {
        if pitch % 12 == 0 {
            let y = MARGIN_TOP + (hi - pitch) as u32 * CELL_H;
            let _ = writeln!(
                svg,
                "<line x1=\"{MARGIN_LEFT}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#d8d8d8\"/>",
                MARGIN_LEFT + grid_w
            );
            let _ = writeln!(
                svg,
                "<text x=\"4\" y=\"{}\" font-size=\"8\" font-family=\"monospace\" fill=\"#555\">C{}</text>",
                y + 3,
                (pitch / 12) as i32 - 1
            );
        }
    }
    // bar numbers
    for bar in 0..bars {
        let x = MARGIN_LEFT + bar * TICKS_PER_BAR * CELL_W;
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"8\" font-family=\"monospace\" fill=\"#555\">{}</text>",
            x + 2,
            height - 6,
            bar
        );
    }

    // one rectangle per note; overlaps are both drawn, never merged
    for n in &track.notes {
        if n.pitch < lo || n.pitch > hi {
            continue;
        }
        let x = MARGIN_LEFT + n.onset * CELL_W;
        let y = MARGIN_TOP + (hi - n.pitch) as u32 * CELL_H;
        let w = n.duration * CELL_W;
        let shade = 40 + (n.velocity as u32 * 120) / 127;
        let _ = writeln!(
            svg,
            "<rect class=\"note\" x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{CELL_H}\" fill=\"rgb(30,{shade},160)\" stroke=\"#223\"/>"
        );
    }

    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::Note;

    fn count_notes(svg: &str) -> usize {
        svg.matches("class=\"note\"").count()
    }

    #[test]
    fn single_note_draws_single_rectangle() {
        let mut t = NoteEventTrack::new("edm");
        t.notes.push(Note { onset: 4, pitch: 60, duration: 3, velocity: 90 });
        let svg = render_piano_roll(&t);
        assert_eq!(count_notes(&svg), 1);
        // x = 36 + 4*8, width = 3*8
        assert!(svg.contains("x=\"68\""));
        assert!(svg.contains("width=\"24\""));
    }

    #[test]
    fn empty_track_renders_grid_only() {
        let svg = render_piano_roll(&NoteEventTrack::new("edm"));
        assert_eq!(count_notes(&svg), 0);
        assert!(svg.contains("<svg"));
        assert!(svg.contains("</svg>"));
    }

    #[test]
    fn overlapping_notes_both_present() {
        let mut t = NoteEventTrack::new("edm");
        t.notes.push(Note { onset: 0, pitch: 60, duration: 8, velocity: 90 });
        t.notes.push(Note { onset: 2, pitch: 60, duration: 8, velocity: 90 });
        t.normalize();
        let svg = render_piano_roll(&t);
        assert_eq!(count_notes(&svg), 2);
    }

    #[test]
    fn rendering_is_byte_stable() {
        let mut t = NoteEventTrack::new("pop");
        t.notes.push(Note { onset: 0, pitch: 55, duration: 2, velocity: 33 });
        assert_eq!(render_piano_roll(&t), render_piano_roll(&t));
    }
}

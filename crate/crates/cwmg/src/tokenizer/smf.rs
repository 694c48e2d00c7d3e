//! Standard MIDI File (format 0/1) reader and writer.
//!
//! The reader accepts untrusted bytes: every access is bounds-checked and
//! malformed input yields a parse error carrying the byte offset. Only 4/4
//! input is supported; the drum channel (10) is skipped with a warning.

use super::{Note, NoteEventTrack, TICKS_PER_BEAT};
use crate::error::{Error, Result};

const DRUM_CHANNEL: u8 = 9;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { offset: self.pos, msg: msg.into() }
    }

    fn u8(&mut self) -> Result<u8> {
        let b = *self.bytes.get(self.pos).ok_or_else(|| self.err("unexpected end of data"))?;
        self.pos += 1;
        Ok(b)
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(((self.u8()? as u16) << 8) | self.u8()? as u16)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(((self.u16()? as u32) << 16) | self.u16()? as u32)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err(format!("expected {n} bytes, only {} remain", self.bytes.len() - self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    /// MIDI variable-length quantity, at most four bytes.
    fn varint(&mut self) -> Result<u32> {
        let mut value: u32 = 0;
        for i in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
            if i == 3 {
                break;
            }
        }
        Err(self.err("variable-length quantity exceeds four bytes"))
    }
}

#[derive(Debug, Clone, Copy)]
struct RawNote {
    onset_ticks: u64,
    off_ticks: u64,
    pitch: u8,
    velocity: u8,
}

/// Parse SMF bytes into a quantized track. Returns the track and any
/// warnings (dangling note-ons, skipped drum notes).
pub fn parse_smf(bytes: &[u8]) -> Result<(NoteEventTrack, Vec<String>)> {
    let mut r = Reader::new(bytes);
    let mut warnings = Vec::new();

    if r.take(4)? != b"MThd" {
        return Err(Error::Parse { offset: 0, msg: "missing MThd header".into() });
    }
    let header_len = r.u32()?;
    if header_len < 6 {
        return Err(r.err(format!("header length {header_len} < 6")));
    }
    let format = r.u16()?;
    if format > 1 {
        return Err(r.err(format!("unsupported SMF format {format}, only 0 and 1")));
    }
    let ntrks = r.u16()?;
    let division = r.u16()?;
    if division & 0x8000 != 0 {
        return Err(r.err("SMPTE time division is not supported"));
    }
    if division == 0 {
        return Err(r.err("time division of zero"));
    }
    let ppq = division as f64;
    // skip any extra header bytes
    r.take(header_len as usize - 6)?;

    let mut raw_notes: Vec<RawNote> = Vec::new();
    let mut tempi: Vec<(u64, f64)> = Vec::new(); // (tick, bpm)

    for _ in 0..ntrks {
        let chunk_start = r.pos;
        let tag = r.take(4)?;
        if tag != b"MTrk" {
            return Err(Error::Parse {
                offset: chunk_start,
                msg: format!("expected MTrk chunk, got {:?}", String::from_utf8_lossy(tag)),
            });
        }
        let len = r.u32()? as usize;
        let end = r.pos.checked_add(len).ok_or_else(|| r.err("track length overflows"))?;
        if end > r.bytes.len() {
            return Err(r.err(format!("track length {len} exceeds remaining data")));
        }

        let mut tick: u64 = 0;
        let mut running_status: Option<u8> = None;
        // (channel, pitch) → stack of (onset, velocity); note-off closes the
        // most recent onset
        let mut open: Vec<Vec<(u64, u8)>> = vec![Vec::new(); 16 * 128];

        while r.pos < end {
            let delta = r.varint()?;
            tick += delta as u64;

            let status = match r.peek() {
                Some(b) if b & 0x80 != 0 => {
                    r.pos += 1;
                    if b < 0xf0 {
                        running_status = Some(b);
                    }
                    b
                }
                Some(_) => running_status.okorparse(&r)?,
                None => return Err(r.err("event truncated")),
            };

            match status {
                0xff => {
                    let meta = r.u8()?;
                    let len = r.varint()? as usize;
                    let data = r.take(len)?;
                    match meta {
                        0x51 => {
                            if data.len() != 3 {
                                return Err(r.err("tempo meta must be three bytes"));
                            }
                            let us = ((data[0] as u32) << 16) | ((data[1] as u32) << 8) | data[2] as u32;
                            if us == 0 {
                                return Err(r.err("tempo of zero microseconds"));
                            }
                            tempi.push((tick, 60_000_000.0 / us as f64));
                        }
                        0x58 => {
                            if data.len() < 2 {
                                return Err(r.err("time-signature meta too short"));
                            }
                            let (nn, dd) = (data[0], data[1]);
                            if nn != 4 || dd != 2 {
                                return Err(Error::UnsupportedMeter {
                                    numerator: nn,
                                    denominator: 1u8 << dd.min(7),
                                });
                            }
                        }
                        _ => {} // other meta events carry no note information
                    }
                }
                0xf0 | 0xf7 => {
                    let len = r.varint()? as usize;
                    r.take(len)?;
                }
                _ => {
                    let kind = status >> 4;
                    let channel = status & 0x0f;
                    match kind {
                        0x8 | 0x9 => {
                            let pitch = r.u8()? & 0x7f;
                            let velocity = r.u8()? & 0x7f;
                            if channel == DRUM_CHANNEL {
                                if kind == 0x9 && velocity > 0 {
                                    warnings.push(format!(
                                        "drum-channel note {pitch} at tick {tick} skipped"
                                    ));
                                }
                                continue;
                            }
                            let slot = channel as usize * 128 + pitch as usize;
                            if kind == 0x9 && velocity > 0 {
                                open[slot].push((tick, velocity));
                            } else if let Some((onset, vel)) = open[slot].pop() {
                                raw_notes.push(RawNote {
                                    onset_ticks: onset,
                                    off_ticks: tick,
                                    pitch,
                                    velocity: vel,
                                });
                            }
                            // note-off without a matching note-on is ignored
                        }
                        0xa | 0xb | 0xe => {
                            r.take(2)?;
                        }
                        0xc | 0xd => {
                            r.take(1)?;
                        }
                        _ => return Err(r.err(format!("unexpected status byte {status:#x}"))),
                    }
                }
            }
        }
        if r.pos != end {
            return Err(r.err("event ran past declared track length"));
        }

        for (slot, stack) in open.iter().enumerate() {
            for &(onset, vel) in stack {
                let pitch = (slot % 128) as u8;
                warnings.push(format!(
                    "dangling note-on (pitch {pitch}) at tick {onset} closed at track end"
                ));
                raw_notes.push(RawNote {
                    onset_ticks: onset,
                    off_ticks: tick.max(onset + 1),
                    pitch,
                    velocity: vel,
                });
            }
        }
    }

    // Quantize to the sixteenth grid: nearest neighbour, ties round up.
    let grid = ppq / TICKS_PER_BEAT as f64;
    let quantize = |ticks: u64| -> u32 { ((ticks as f64 / grid) + 0.5).floor() as u32 };

    // grid-length ceiling keeps downstream bar arithmetic in range
    const MAX_GRID_TICKS: u32 = 1 << 24;

    let mut track = NoteEventTrack::new("unknown");
    for n in &raw_notes {
        let onset = quantize(n.onset_ticks);
        let dur_ticks = n.off_ticks.saturating_sub(n.onset_ticks);
        let duration = quantize(dur_ticks).max(1);
        if onset > MAX_GRID_TICKS || duration > MAX_GRID_TICKS {
            return Err(Error::Parse {
                offset: bytes.len(),
                msg: format!("note at grid tick {onset} exceeds the maximum song length"),
            });
        }
        track.notes.push(Note { onset, pitch: n.pitch, duration, velocity: n.velocity });
    }
    track.normalize();

    tempi.sort_by_key(|&(t, _)| t);
    if tempi.is_empty() {
        track.tempo_changes = vec![(0, 120.0)];
    } else {
        track.tempo_changes = tempi.iter().map(|&(t, bpm)| (quantize(t), bpm)).collect();
        if track.tempo_changes[0].0 != 0 {
            track.tempo_changes.insert(0, (0, 120.0));
        }
    }

    Ok((track, warnings))
}

trait OkOrParse {
    fn okorparse(self, r: &Reader<'_>) -> Result<u8>;
}

impl OkOrParse for Option<u8> {
    fn okorparse(self, r: &Reader<'_>) -> Result<u8> {
        self.ok_or_else(|| Error::Parse {
            offset: r.pos,
            msg: "data byte with no running status".into(),
        })
    }
}

const WRITE_PPQ: u32 = 480;

fn push_varint(out: &mut Vec<u8>, mut value: u32) {
    let mut stack = [0u8; 4];
    let mut n = 0;
    loop {
        stack[n] = (value & 0x7f) as u8;
        value >>= 7;
        n += 1;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(stack[i] | if i > 0 { 0x80 } else { 0 });
    }
}

/// Serialize a track as a single-track (format 0) SMF byte stream.
/// Deterministic: identical tracks produce identical bytes.
pub fn write_smf(track: &NoteEventTrack) -> Vec<u8> {
    let ticks = |grid: u32| grid * (WRITE_PPQ / TICKS_PER_BEAT);

    // (tick, order, payload) events; order keeps off-before-on at equal ticks
    let mut events: Vec<(u32, u8, Vec<u8>)> = Vec::new();
    for &(tick, bpm) in &track.tempo_changes {
        let us = (60_000_000.0 / bpm).round() as u32;
        events.push((
            ticks(tick),
            0,
            vec![0xff, 0x51, 0x03, (us >> 16) as u8, (us >> 8) as u8, us as u8],
        ));
    }
    // fixed 4/4 time signature at tick 0
    events.push((0, 0, vec![0xff, 0x58, 0x04, 0x04, 0x02, 0x18, 0x08]));
    for n in &track.notes {
        events.push((ticks(n.onset), 2, vec![0x90, n.pitch & 0x7f, n.velocity.max(1) & 0x7f]));
        events.push((ticks(n.onset + n.duration), 1, vec![0x80, n.pitch & 0x7f, 0x40]));
    }
    events.sort_by(|a, b| (a.0, a.1, &a.2).cmp(&(b.0, b.1, &b.2)));

    let mut body = Vec::new();
    let mut last_tick = 0u32;
    for (tick, _, payload) in &events {
        push_varint(&mut body, tick - last_tick);
        body.extend_from_slice(payload);
        last_tick = *tick;
    }
    push_varint(&mut body, 0);
    body.extend_from_slice(&[0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(body.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&(WRITE_PPQ as u16).to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-assembled SMF: format 0, 480 PPQ, one C4 quarter note at beat 0.
    fn single_note_smf() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"MThd");
        b.extend_from_slice(&6u32.to_be_bytes());
        b.extend_from_slice(&0u16.to_be_bytes()); // format 0
        b.extend_from_slice(&1u16.to_be_bytes()); // one track
        b.extend_from_slice(&480u16.to_be_bytes());
        let mut t = Vec::new();
        t.extend_from_slice(&[0x00, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20]); // 500000 µs/qn
        t.extend_from_slice(&[0x00, 0x90, 60, 64]); // note on C4
        t.extend_from_slice(&[0x83, 0x60, 0x80, 60, 0x40]); // delta 480, note off
        t.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
        b.extend_from_slice(b"MTrk");
        b.extend_from_slice(&(t.len() as u32).to_be_bytes());
        b.extend_from_slice(&t);
        b
    }

    #[test]
    fn parses_single_quarter_note() {
        let (track, warnings) = parse_smf(&single_note_smf()).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(
            track.notes,
            vec![Note { onset: 0, pitch: 60, duration: 4, velocity: 64 }]
        );
    }

    #[test]
    fn tempo_meta_converts_to_bpm() {
        let (track, _) = parse_smf(&single_note_smf()).unwrap();
        assert_eq!(track.tempo_changes.len(), 1);
        assert_eq!(track.tempo_changes[0].0, 0);
        assert!((track.tempo_changes[0].1 - 120.0).abs() < 1e-9);
    }

    #[test]
    fn zero_note_file_gives_empty_track() {
        let mut b = Vec::new();
        b.extend_from_slice(b"MThd");
        b.extend_from_slice(&6u32.to_be_bytes());
        b.extend_from_slice(&0u16.to_be_bytes());
        b.extend_from_slice(&1u16.to_be_bytes());
        b.extend_from_slice(&480u16.to_be_bytes());
        let t = [0x00, 0xff, 0x2f, 0x00];
        b.extend_from_slice(b"MTrk");
        b.extend_from_slice(&(t.len() as u32).to_be_bytes());
        b.extend_from_slice(&t);
        let (track, _) = parse_smf(&b).unwrap();
        assert!(track.notes.is_empty());
    }

    #[test]
    fn bad_header_reports_offset_zero() {
        let err = parse_smf(b"RIFFxxxx").unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_track_reports_offset() {
        let mut bytes = single_note_smf();
        bytes.truncate(bytes.len() - 6);
        let err = parse_smf(&bytes).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "got {err:?}");
    }

    #[test]
    fn non_four_four_is_unsupported_meter() {
        let mut b = Vec::new();
        b.extend_from_slice(b"MThd");
        b.extend_from_slice(&6u32.to_be_bytes());
        b.extend_from_slice(&0u16.to_be_bytes());
        b.extend_from_slice(&1u16.to_be_bytes());
        b.extend_from_slice(&480u16.to_be_bytes());
        let t = [0x00, 0xff, 0x58, 0x04, 0x03, 0x02, 0x18, 0x08, 0x00, 0xff, 0x2f, 0x00];
        b.extend_from_slice(b"MTrk");
        b.extend_from_slice(&(t.len() as u32).to_be_bytes());
        b.extend_from_slice(&t);
        let err = parse_smf(&b).unwrap_err();
        assert!(matches!(err, Error::UnsupportedMeter { numerator: 3, denominator: 4 }));
    }

    #[test]
    fn dangling_note_on_closes_with_warning() {
        let mut b = Vec::new();
        b.extend_from_slice(b"MThd");
        b.extend_from_slice(&6u32.to_be_bytes());
        b.extend_from_slice(&0u16.to_be_bytes());
        b.extend_from_slice(&1u16.to_be_bytes());
        b.extend_from_slice(&480u16.to_be_bytes());
        let t = [0x00, 0x90, 60, 64, 0x60, 0xff, 0x2f, 0x00]; // on, never off
        b.extend_from_slice(b"MTrk");
        b.extend_from_slice(&(t.len() as u32).to_be_bytes());
        b.extend_from_slice(&t);
        let (track, warnings) = parse_smf(&b).unwrap();
        assert_eq!(track.notes.len(), 1);
        assert!(warnings.iter().any(|w| w.contains("dangling")));
    }

    #[test]
    fn write_then_parse_round_trips_notes() {
        let mut track = NoteEventTrack::new("edm");
        track.notes = vec![
            Note { onset: 0, pitch: 64, duration: 2, velocity: 80 },
            Note { onset: 0, pitch: 60, duration: 4, velocity: 64 },
            Note { onset: 19, pitch: 72, duration: 8, velocity: 100 },
        ];
        track.normalize();
        track.tempo_changes = vec![(0, 119.0)];
        let bytes = write_smf(&track);
        let (parsed, warnings) = parse_smf(&bytes).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(parsed.notes, track.notes);
        assert_eq!(parsed.tempo_changes.len(), 1);
        assert!((parsed.tempo_changes[0].1 - 119.0).abs() < 0.01);
    }

    #[test]
    fn writer_is_deterministic() {
        let mut track = NoteEventTrack::new("pop");
        track.notes = vec![Note { onset: 3, pitch: 60, duration: 1, velocity: 10 }];
        assert_eq!(write_smf(&track), write_smf(&track));
    }

    #[test]
    fn drum_channel_notes_are_skipped_with_warning() {
        let mut b = Vec::new();
        b.extend_from_slice(b"MThd");
        b.extend_from_slice(&6u32.to_be_bytes());
        b.extend_from_slice(&0u16.to_be_bytes());
        b.extend_from_slice(&1u16.to_be_bytes());
        b.extend_from_slice(&480u16.to_be_bytes());
        let t = [
            0x00, 0x99, 36, 100, // note on, channel 10 (kick)
            0x60, 0x89, 36, 0x40, // note off, channel 10
            0x00, 0x90, 60, 64, // note on, channel 1
            0x60, 0x80, 60, 0x40,
            0x00, 0xff, 0x2f, 0x00,
        ];
        b.extend_from_slice(b"MTrk");
        b.extend_from_slice(&(t.len() as u32).to_be_bytes());
        b.extend_from_slice(&t);
        let (track, warnings) = parse_smf(&b).unwrap();
        assert_eq!(track.notes.len(), 1);
        assert_eq!(track.notes[0].pitch, 60);
        assert!(warnings.iter().any(|w| w.contains("drum")), "{warnings:?}");
    }

    #[test]
    fn running_status_is_honored() {
        // two notes sharing one status byte
        let mut b = Vec::new();
        b.extend_from_slice(b"MThd");
        b.extend_from_slice(&6u32.to_be_bytes());
        b.extend_from_slice(&0u16.to_be_bytes());
        b.extend_from_slice(&1u16.to_be_bytes());
        b.extend_from_slice(&480u16.to_be_bytes());
        let t = [
            0x00, 0x90, 60, 64, // on C4
            0x00, 64, 64, // running status: on E4
            0x83, 0x60, 0x80, 60, 0x40, // off C4 after a quarter
            0x00, 64, 0x40, // running status: off E4
            0x00, 0xff, 0x2f, 0x00,
        ];
        b.extend_from_slice(b"MTrk");
        b.extend_from_slice(&(t.len() as u32).to_be_bytes());
        b.extend_from_slice(&t);
        let (track, _) = parse_smf(&b).unwrap();
        assert_eq!(track.notes.len(), 2);
        assert_eq!(track.notes[0].pitch, 60);
        assert_eq!(track.notes[1].pitch, 64);
    }
}

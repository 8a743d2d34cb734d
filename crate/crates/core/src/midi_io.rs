//! Standard MIDI File reading and writing.
//!
//! This layer knows nothing about the token representation. It turns SMF
//! bytes (format 0 or 1, tick division) into [`RawMidi`]: matched notes per
//! track plus the tempo and time-signature map, and writes the same structure
//! back out as a format 1 file with a conductor track.

use std::collections::HashMap;

use thiserror::Error;

/// Tempo reported when a file carries no set-tempo event.
pub const DEFAULT_TEMPO_BPM: f64 = 120.0;

const DRUM_CHANNEL: u8 = 9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MidiError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported SMF format {0} (only 0 and 1 are accepted)")]
    UnsupportedFormat(u16),
    #[error("SMPTE time division is not supported")]
    UnsupportedDivision,
    #[error("truncated chunk at byte {offset}")]
    TruncatedChunk { offset: usize },
    #[error("data byte without running status at byte {offset}")]
    RunningStatusViolation { offset: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// One sounding note with absolute timing in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RawNote {
    pub onset_tick: u64,
    pub pitch: u8,
    pub velocity: u8,
    pub duration_ticks: u64,
}

impl RawNote {
    pub fn new(onset_tick: u64, pitch: u8, velocity: u8, duration_ticks: u64) -> Self {
        Self { onset_tick, pitch, velocity, duration_ticks }
    }

    pub fn end_tick(&self) -> u64 {
        self.onset_tick + self.duration_ticks
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawTrack {
    pub name: String,
    pub program: u8,
    pub is_drum: bool,
    pub events: Vec<RawNote>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeSignature {
    pub tick: u64,
    pub numerator: u8,
    pub denominator: u8,
}

impl TimeSignature {
    pub fn new(tick: u64, numerator: u8, denominator: u8) -> Self {
        Self { tick, numerator, denominator }
    }

    pub fn is_four_four(&self) -> bool {
        self.numerator == 4 && self.denominator == 4
    }
}

/// Unquantized contents of a MIDI file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMidi {
    pub ticks_per_beat: u16,
    pub tempo_bpm: f64,
    pub time_signatures: Vec<TimeSignature>,
    pub tracks: Vec<RawTrack>,
}

impl Default for RawMidi {
    fn default() -> Self {
        Self { ticks_per_beat: 480, tempo_bpm: DEFAULT_TEMPO_BPM, time_signatures: Vec::new(), tracks: Vec::new() }
    }
}

impl RawMidi {
    pub fn note_count(&self) -> usize {
        self.tracks.iter().map(|t| t.events.len()).sum()
    }

    /// Checks the structural invariants that `write_smf` relies on.
    pub fn validate(&self) -> Result<(), MidiError> {
        if self.ticks_per_beat == 0 || self.ticks_per_beat > 0x7fff {
            return Err(MidiError::InvalidInput(format!("ticks_per_beat {} out of range", self.ticks_per_beat)));
        }
        if !(self.tempo_bpm.is_finite() && self.tempo_bpm > 0.0) {
            return Err(MidiError::InvalidInput(format!("tempo {} is not positive", self.tempo_bpm)));
        }
        let us = (60_000_000.0 / self.tempo_bpm).round();
        if !(1.0..=16_777_215.0).contains(&us) {
            return Err(MidiError::InvalidInput(format!("tempo {} not encodable", self.tempo_bpm)));
        }
        for pair in self.time_signatures.windows(2) {
            if pair[0].tick >= pair[1].tick {
                return Err(MidiError::InvalidInput("time signatures not strictly sorted".into()));
            }
        }
        for ts in &self.time_signatures {
            if ts.numerator == 0 || !ts.denominator.is_power_of_two() {
                return Err(MidiError::InvalidInput(format!(
                    "time signature {}/{} not encodable",
                    ts.numerator, ts.denominator
                )));
            }
        }
        for (i, track) in self.tracks.iter().enumerate() {
            if track.program > 127 {
                return Err(MidiError::InvalidInput(format!("track {i}: program {}", track.program)));
            }
            for n in &track.events {
                if n.pitch > 127 || n.velocity == 0 || n.velocity > 127 || n.duration_ticks == 0 {
                    return Err(MidiError::InvalidInput(format!("track {i}: bad note {n:?}")));
                }
            }
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.remaining() < n {
            return Err(MidiError::TruncatedChunk { offset: self.pos });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, MidiError> {
        Ok(self.take(1)?[0])
    }

    fn peek(&self) -> Result<u8, MidiError> {
        self.bytes.get(self.pos).copied().ok_or(MidiError::TruncatedChunk { offset: self.pos })
    }

    fn u16(&mut self) -> Result<u16, MidiError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, MidiError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn varlen(&mut self) -> Result<u32, MidiError> {
        let mut value: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | u32::from(b & 0x7f);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(MidiError::TruncatedChunk { offset: self.pos })
    }
}

/// Per-chunk, per-channel note collector.
#[derive(Default)]
struct ChannelState {
    program: Option<u8>,
    has_events: bool,
    open: HashMap<u8, (u64, u8)>,
    notes: Vec<RawNote>,
}

impl ChannelState {
    fn close(&mut self, pitch: u8, tick: u64) {
        if let Some((onset, vel)) = self.open.remove(&pitch) {
            if tick > onset {
                self.notes.push(RawNote::new(onset, pitch, vel, tick - onset));
            }
        }
    }
}

/// Parses SMF bytes into a [`RawMidi`].
pub fn parse_smf(bytes: &[u8]) -> Result<RawMidi, MidiError> {
    let mut r = Reader::new(bytes);
    if r.remaining() < 14 || r.take(4)? != b"MThd" {
        return Err(MidiError::MalformedHeader("missing MThd magic".into()));
    }
    let header_len = r.u32()? as usize;
    if header_len < 6 {
        return Err(MidiError::MalformedHeader(format!("header length {header_len}")));
    }
    let format = r.u16()?;
    let ntracks = r.u16()?;
    let division = r.u16()?;
    r.take(header_len - 6)?;
    if format > 1 {
        return Err(MidiError::UnsupportedFormat(format));
    }
    if division & 0x8000 != 0 {
        return Err(MidiError::UnsupportedDivision);
    }
    if division == 0 {
        return Err(MidiError::MalformedHeader("zero ticks per beat".into()));
    }

    let mut tempo_us: Option<u32> = None;
    let mut time_sigs: Vec<TimeSignature> = Vec::new();
    let mut tracks = Vec::new();

    let mut seen = 0u16;
    while seen < ntracks && r.remaining() > 0 {
        let chunk_start = r.pos;
        let id = r.take(4)?;
        let len = r.u32()? as usize;
        if r.remaining() < len {
            return Err(MidiError::TruncatedChunk { offset: chunk_start });
        }
        let body = r.take(len)?;
        if id != b"MTrk" {
            // Unknown chunks are skipped per the SMF rules.
            continue;
        }
        seen += 1;
        parse_track(body, r.pos - len, &mut tempo_us, &mut time_sigs, &mut tracks)?;
    }
    if seen < ntracks {
        return Err(MidiError::TruncatedChunk { offset: r.pos });
    }

    time_sigs.sort_by_key(|t| t.tick);
    // Several chunks may repeat the same meter at the same tick; keep the last.
    let mut dedup: Vec<TimeSignature> = Vec::with_capacity(time_sigs.len());
    for ts in time_sigs {
        match dedup.last_mut() {
            Some(last) if last.tick == ts.tick => *last = ts,
            _ => dedup.push(ts),
        }
    }

    Ok(RawMidi {
        ticks_per_beat: division,
        tempo_bpm: tempo_us.map_or(DEFAULT_TEMPO_BPM, |us| 60_000_000.0 / f64::from(us)),
        time_signatures: dedup,
        tracks,
    })
}

fn parse_track(
    body: &[u8],
    base: usize,
    tempo_us: &mut Option<u32>,
    time_sigs: &mut Vec<TimeSignature>,
    out: &mut Vec<RawTrack>,
) -> Result<(), MidiError> {
    let mut r = Reader::new(body);
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut name = String::new();
    let mut channels: Vec<ChannelState> = (0..16).map(|_| ChannelState::default()).collect();

    let off = |r: &Reader| base + r.pos;

    while r.remaining() > 0 {
        let delta = r.varlen().map_err(|_| MidiError::TruncatedChunk { offset: off(&r) })?;
        tick += u64::from(delta);
        let lead = r.peek().map_err(|_| MidiError::TruncatedChunk { offset: off(&r) })?;
        match lead {
            0xff => {
                r.u8()?;
                let kind = r.u8().map_err(|_| MidiError::TruncatedChunk { offset: off(&r) })?;
                let len = r.varlen().map_err(|_| MidiError::TruncatedChunk { offset: off(&r) })? as usize;
                let data = r.take(len).map_err(|_| MidiError::TruncatedChunk { offset: off(&r) })?;
                match kind {
                    0x03 if name.is_empty() => name = String::from_utf8_lossy(data).into_owned(),
                    0x51 if len == 3 && tempo_us.is_none() => {
                        let us = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                        if us > 0 {
                            *tempo_us = Some(us);
                        }
                    }
                    0x58 if len >= 2 => {
                        let denominator = 1u32.checked_shl(u32::from(data[1])).unwrap_or(0);
                        if denominator > 0 && denominator <= 128 {
                            time_sigs.push(TimeSignature::new(tick, data[0], denominator as u8));
                        }
                    }
                    0x2f => break,
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                r.u8()?;
                let len = r.varlen().map_err(|_| MidiError::TruncatedChunk { offset: off(&r) })? as usize;
                r.take(len).map_err(|_| MidiError::TruncatedChunk { offset: off(&r) })?;
            }
            _ => {
                let status = if lead & 0x80 != 0 {
                    r.u8()?;
                    running = Some(lead);
                    lead
                } else {
                    running.ok_or(MidiError::RunningStatusViolation { offset: off(&r) })?
                };
                let kind = status & 0xf0;
                let ch = usize::from(status & 0x0f);
                let data_len = match kind {
                    0xc0 | 0xd0 => 1,
                    0x80 | 0x90 | 0xa0 | 0xb0 | 0xe0 => 2,
                    _ => return Err(MidiError::RunningStatusViolation { offset: off(&r) }),
                };
                let data = r.take(data_len).map_err(|_| MidiError::TruncatedChunk { offset: off(&r) })?;
                let state = &mut channels[ch];
                state.has_events = true;
                match kind {
                    0x90 if data[1] > 0 => {
                        let pitch = data[0] & 0x7f;
                        // Last-on-wins: a repeated note-on closes the sounding note.
                        state.close(pitch, tick);
                        state.open.insert(pitch, (tick, data[1] & 0x7f));
                    }
                    0x80 | 0x90 => state.close(data[0] & 0x7f, tick),
                    0xc0 if state.program.is_none() => {
                        state.program = Some(data[0] & 0x7f);
                    }
                    _ => {}
                }
            }
        }
    }

    for (ch, mut state) in channels.into_iter().enumerate() {
        if !state.has_events {
            continue;
        }
        let open: Vec<(u8, (u64, u8))> = state.open.drain().collect();
        for (pitch, (onset, vel)) in open {
            let dur = tick.saturating_sub(onset).max(1);
            state.notes.push(RawNote::new(onset, pitch, vel, dur));
        }
        state.notes.sort();
        out.push(RawTrack {
            name: name.clone(),
            program: state.program.unwrap_or(0),
            is_drum: ch as u8 == DRUM_CHANNEL,
            events: state.notes,
        });
    }
    Ok(())
}

fn push_varlen(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut i = 3;
    buf[i] = (value & 0x7f) as u8;
    value >>= 7;
    while value > 0 {
        i -= 1;
        buf[i] = ((value & 0x7f) as u8) | 0x80;
        value >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

fn push_chunk(out: &mut Vec<u8>, body: &[u8]) {
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
}

/// Events sorted by tick; note-offs (rank 0) precede note-ons (rank 1) at equal ticks.
fn write_events(body: &mut Vec<u8>, mut events: Vec<(u64, u8, Vec<u8>)>) -> Result<(), MidiError> {
    events.sort_by_key(|a| (a.0, a.1));
    let mut last = 0u64;
    for (tick, _, bytes) in events {
        let delta = u32::try_from(tick - last)
            .ok()
            .filter(|d| *d <= 0x0fff_ffff)
            .ok_or_else(|| MidiError::InvalidInput("delta time too large".into()))?;
        push_varlen(body, delta);
        body.extend_from_slice(&bytes);
        last = tick;
    }
    Ok(())
}

/// Serializes to SMF format 1 with a leading conductor track.
pub fn write_smf(m: &RawMidi) -> Result<Vec<u8>, MidiError> {
    write_smf_with_text(m, None)
}

/// Like [`write_smf`], optionally embedding a text meta event in the conductor track.
pub fn write_smf_with_text(m: &RawMidi, text: Option<&str>) -> Result<Vec<u8>, MidiError> {
    m.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    let ntracks = u16::try_from(m.tracks.len() + 1).map_err(|_| MidiError::InvalidInput("too many tracks".into()))?;
    out.extend_from_slice(&ntracks.to_be_bytes());
    out.extend_from_slice(&m.ticks_per_beat.to_be_bytes());

    let mut conductor = Vec::new();
    let mut events: Vec<(u64, u8, Vec<u8>)> = Vec::new();
    if let Some(text) = text {
        let mut ev = vec![0xff, 0x01];
        push_varlen(&mut ev, text.len() as u32);
        ev.extend_from_slice(text.as_bytes());
        events.push((0, 0, ev));
    }
    let us = (60_000_000.0 / m.tempo_bpm).round() as u32;
    let tb = us.to_be_bytes();
    events.push((0, 1, vec![0xff, 0x51, 0x03, tb[1], tb[2], tb[3]]));
    for ts in &m.time_signatures {
        let pow = ts.denominator.trailing_zeros() as u8;
        events.push((ts.tick, 2, vec![0xff, 0x58, 0x04, ts.numerator, pow, 24, 8]));
    }
    write_events(&mut conductor, events)?;
    conductor.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
    push_chunk(&mut out, &conductor);

    let mut melodic_channel = 0u8;
    for track in &m.tracks {
        let ch = if track.is_drum {
            DRUM_CHANNEL
        } else {
            let ch = melodic_channel;
            melodic_channel = (melodic_channel + 1) % 16;
            if melodic_channel == DRUM_CHANNEL {
                melodic_channel += 1;
            }
            ch
        };
        let mut body = Vec::new();
        if !track.name.is_empty() {
            body.push(0x00);
            body.extend_from_slice(&[0xff, 0x03]);
            push_varlen(&mut body, track.name.len() as u32);
            body.extend_from_slice(track.name.as_bytes());
        }
        body.extend_from_slice(&[0x00, 0xc0 | ch, track.program]);
        let mut events = Vec::with_capacity(track.events.len() * 2);
        for n in &track.events {
            events.push((n.onset_tick, 1, vec![0x90 | ch, n.pitch, n.velocity]));
            events.push((n.end_tick(), 0, vec![0x80 | ch, n.pitch, 0]));
        }
        write_events(&mut body, events)?;
        body.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
        push_chunk(&mut out, &body);
    }
    Ok(out)
}

/// Reads the first text meta event (FF 01) found in any track, if present.
pub fn read_text_meta(bytes: &[u8]) -> Option<String> {
    let needle = [0xffu8, 0x01];
    let start = bytes.windows(2).position(|w| w == needle)?;
    let mut r = Reader::new(&bytes[start + 2..]);
    let len = r.varlen().ok()? as usize;
    let data = r.take(len).ok()?;
    Some(String::from_utf8_lossy(data).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(format: u16, ntracks: u16, division: u16) -> Vec<u8> {
        let mut v = b"MThd".to_vec();
        v.extend_from_slice(&6u32.to_be_bytes());
        v.extend_from_slice(&format.to_be_bytes());
        v.extend_from_slice(&ntracks.to_be_bytes());
        v.extend_from_slice(&division.to_be_bytes());
        v
    }

    fn file(format: u16, division: u16, tracks: &[Vec<u8>]) -> Vec<u8> {
        let mut v = header(format, tracks.len() as u16, division);
        for t in tracks {
            push_chunk(&mut v, t);
        }
        v
    }

    #[test]
    fn single_matched_pair() {
        let body = vec![0x00, 0x90, 60, 100, 0x83, 0x60, 0x80, 60, 0, 0x00, 0xff, 0x2f, 0x00];
        let m = parse_smf(&file(0, 480, &[body])).unwrap();
        assert_eq!(m.ticks_per_beat, 480);
        assert_eq!(m.tracks.len(), 1);
        assert_eq!(m.tracks[0].events, vec![RawNote::new(0, 60, 100, 480)]);
        assert_eq!(m.tempo_bpm, DEFAULT_TEMPO_BPM);
    }

    #[test]
    fn velocity_zero_is_note_off() {
        // Second event uses running status.
        let body = vec![0x00, 0x90, 60, 100, 0x81, 0x70, 60, 0, 0x00, 0xff, 0x2f, 0x00];
        let m = parse_smf(&file(0, 480, &[body])).unwrap();
        assert_eq!(m.tracks[0].events, vec![RawNote::new(0, 60, 100, 240)]);
    }

    #[test]
    fn last_on_wins_for_overlapping_pitch() {
        let body = vec![0x00, 0x90, 60, 100, 0x64, 0x90, 60, 90, 0x64, 0x80, 60, 0, 0x00, 0xff, 0x2f, 0x00];
        let m = parse_smf(&file(0, 96, &[body])).unwrap();
        assert_eq!(m.tracks[0].events, vec![RawNote::new(0, 60, 100, 100), RawNote::new(100, 60, 90, 100)]);
    }

    #[test]
    fn unmatched_note_closed_at_track_end() {
        let body = vec![0x00, 0x90, 64, 80, 0x60, 0xff, 0x2f, 0x00];
        let m = parse_smf(&file(0, 96, &[body])).unwrap();
        assert_eq!(m.tracks[0].events, vec![RawNote::new(0, 64, 80, 96)]);
    }

    #[test]
    fn rejects_bad_magic_and_smpte_and_format2() {
        assert!(matches!(parse_smf(b"RIFF0000000000"), Err(MidiError::MalformedHeader(_))));
        let smpte = file(1, 0xe728, &[]);
        assert_eq!(parse_smf(&smpte), Err(MidiError::UnsupportedDivision));
        let f2 = file(2, 96, &[]);
        assert_eq!(parse_smf(&f2), Err(MidiError::UnsupportedFormat(2)));
    }

    #[test]
    fn truncated_chunk_and_running_status() {
        let mut bytes = file(0, 96, &[vec![0x00, 0x90, 60, 100, 0x00, 0xff, 0x2f, 0x00]]);
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(parse_smf(&bytes), Err(MidiError::TruncatedChunk { .. })));

        let body = vec![0x00, 60, 100, 0x00, 0xff, 0x2f, 0x00];
        assert!(matches!(parse_smf(&file(0, 96, &[body])), Err(MidiError::RunningStatusViolation { .. })));
    }

    #[test]
    fn empty_midi_roundtrips_to_conductor_only() {
        let m = RawMidi::default();
        let bytes = write_smf(&m).unwrap();
        let back = parse_smf(&bytes).unwrap();
        assert!(back.tracks.is_empty());
        assert_eq!(back.tempo_bpm, 120.0);
        assert!(back.time_signatures.is_empty());
    }

    #[test]
    fn tempo_ninety_within_microsecond_rounding() {
        let m = RawMidi { tempo_bpm: 90.0, ..RawMidi::default() };
        let back = parse_smf(&write_smf(&m).unwrap()).unwrap();
        // 60e6 / 90 is not an integer; the stored value is 666_667 us per beat.
        assert!(((back.tempo_bpm - 90.0) / 90.0).abs() < 1e-6);
        assert_eq!(back.tempo_bpm, 60_000_000.0 / 666_667.0);
    }

    #[test]
    fn writer_rejects_invalid_input() {
        let mut m = RawMidi::default();
        m.tracks.push(RawTrack { events: vec![RawNote::new(0, 60, 0, 10)], ..RawTrack::default() });
        assert!(matches!(write_smf(&m), Err(MidiError::InvalidInput(_))));
        let m = RawMidi { time_signatures: vec![TimeSignature::new(0, 3, 3)], ..RawMidi::default() };
        assert!(matches!(write_smf(&m), Err(MidiError::InvalidInput(_))));
    }

    #[test]
    fn text_meta_is_readable() {
        let bytes = write_smf_with_text(&RawMidi::default(), Some("{\"seed\":7}")).unwrap();
        assert_eq!(read_text_meta(&bytes).as_deref(), Some("{\"seed\":7}"));
        assert!(parse_smf(&bytes).unwrap().tracks.is_empty());
    }
}

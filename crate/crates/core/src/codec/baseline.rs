//! Token counts for two event-based baseline encodings of the same score.
//!
//! * `Remi`: `Bar` per bar; `Position, Chord` per chord; `Position, Track,
//!   Pitch, Duration, Velocity` per note.
//! * `MidiLike`: `Bar` per bar; within a bar, instrument-specific
//!   `NoteOn`/`NoteOff` events, a `SetVelocity` before each `NoteOn`, one
//!   `Chord` per chord and `TimeShift` tokens (at most one bar each) between
//!   distinct event times. A non-empty piece is closed with shifts up to the
//!   end of its last bar.

use std::collections::BTreeSet;

use super::types::{Score, STEPS_PER_BAR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineStyle {
    MidiLike,
    Remi,
}

pub fn encode_baseline(s: &Score, style: BaselineStyle) -> usize {
    match style {
        BaselineStyle::Remi => remi_len(s),
        BaselineStyle::MidiLike => midi_like_len(s),
    }
}

fn remi_len(s: &Score) -> usize {
    s.bars() as usize + 2 * s.chords().len() + 5 * s.note_count()
}

fn midi_like_len(s: &Score) -> usize {
    let bars = s.bars();
    if bars == 0 {
        return 0;
    }
    let mut per_bar_times: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); bars as usize];
    let mut event_tokens = 0usize;
    let bar_of = |t: u32| (t / STEPS_PER_BAR).min(bars - 1) as usize;
    for notes in s.tracks().values() {
        for n in notes {
            let off = n.onset_step + u32::from(n.dur_steps);
            per_bar_times[bar_of(n.onset_step)].insert(n.onset_step);
            per_bar_times[bar_of(off)].insert(off);
            // SetVelocity + NoteOn + NoteOff
            event_tokens += 3;
        }
    }
    for c in s.chords() {
        per_bar_times[bar_of(c.onset_step())].insert(c.onset_step());
        event_tokens += 1;
    }
    if event_tokens > 0 {
        per_bar_times[bars as usize - 1].insert(bars * STEPS_PER_BAR);
    }
    let mut shifts = 0usize;
    for (b, times) in per_bar_times.iter().enumerate() {
        let mut cursor = b as u32 * STEPS_PER_BAR;
        for &t in times {
            if t > cursor {
                shifts += (t - cursor).div_ceil(STEPS_PER_BAR) as usize;
                cursor = t;
            }
        }
    }
    bars as usize + event_tokens + shifts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode, QNote, Role, TempoClass};
    use std::collections::BTreeMap;

    #[test]
    fn single_note_counts() {
        let tracks = BTreeMap::from([(Role::Piano, vec![QNote::new(0, 61, 10, 4)])]);
        let s = Score::new(TempoClass::Mid, 1, tracks, vec![]).unwrap();
        // Bar, Pos, Track, Note
        assert_eq!(encode(&s).len(), 4);
        // Bar, Position, Track, Pitch, Duration, Velocity
        assert_eq!(encode_baseline(&s, BaselineStyle::Remi), 6);
        // Bar, SetVelocity, NoteOn, TimeShift, NoteOff, TimeShift
        assert_eq!(encode_baseline(&s, BaselineStyle::MidiLike), 6);
    }

    #[test]
    fn empty_score_counts_bars_only() {
        let s = Score::empty(TempoClass::Low, 3);
        assert_eq!(encode_baseline(&s, BaselineStyle::Remi), 3);
        assert_eq!(encode_baseline(&s, BaselineStyle::MidiLike), 3);
    }

    #[test]
    fn note_off_past_last_bar_needs_shift() {
        let tracks = BTreeMap::from([(Role::Bass, vec![QNote::new(0, 37, 10, 32)])]);
        let s = Score::new(TempoClass::Mid, 1, tracks, vec![]).unwrap();
        // Bar, SetVelocity, NoteOn, TimeShift(32), NoteOff
        assert_eq!(encode_baseline(&s, BaselineStyle::MidiLike), 5);
    }
}

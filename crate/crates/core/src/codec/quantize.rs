use std::collections::BTreeMap;

use thiserror::Error;

use super::types::{QNote, Role, Score, TempoClass, MAX_DUR_STEPS, STEPS_PER_BAR, VEL_LEVELS};
use crate::midi_io::RawMidi;

/// Timesteps per quarter-note beat (32 per 4/4 bar).
const STEPS_PER_BEAT: f64 = 8.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QuantizeError {
    #[error("no notes left after quantization")]
    EmptyInput,
}

/// `floor(velocity / 4) + 1`, clamped to the 32 levels.
pub fn velocity_level(velocity: u8) -> u8 {
    (velocity / 4 + 1).clamp(1, VEL_LEVELS)
}

fn ticks_to_steps(ticks: u64, ticks_per_beat: u16) -> f64 {
    ticks as f64 * STEPS_PER_BEAT / f64::from(ticks_per_beat)
}

/// Snaps a 4/4 [`RawMidi`] onto the 32-steps-per-bar grid.
///
/// Tracks missing from `role_assignment` are dropped; tracks sharing a role
/// are merged. Bar count covers the last note onset.
pub fn quantize(raw: &RawMidi, role_assignment: &BTreeMap<usize, Role>) -> Result<Score, QuantizeError> {
    let mut tracks: BTreeMap<Role, Vec<QNote>> = BTreeMap::new();
    let mut last_onset: Option<u32> = None;
    for (idx, role) in role_assignment {
        let Some(track) = raw.tracks.get(*idx) else {
            continue;
        };
        for n in &track.events {
            let onset = ticks_to_steps(n.onset_tick, raw.ticks_per_beat).round() as u32;
            let dur =
                ticks_to_steps(n.duration_ticks, raw.ticks_per_beat).round().clamp(1.0, f64::from(MAX_DUR_STEPS)) as u8;
            let note = QNote::new(onset, n.pitch + 1, velocity_level(n.velocity), dur);
            last_onset = Some(last_onset.map_or(onset, |l| l.max(onset)));
            tracks.entry(*role).or_default().push(note);
        }
    }
    let Some(last) = last_onset else {
        return Err(QuantizeError::EmptyInput);
    };
    let bars = last / STEPS_PER_BAR + 1;
    Ok(Score::new(TempoClass::from_bpm(raw.tempo_bpm), bars, tracks, Vec::new())
        .expect("quantized notes satisfy score ranges"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi_io::{RawNote, RawTrack};

    fn raw_with(notes: Vec<RawNote>, tempo: f64) -> RawMidi {
        RawMidi {
            ticks_per_beat: 480,
            tempo_bpm: tempo,
            time_signatures: vec![],
            tracks: vec![RawTrack { name: "p".into(), program: 0, is_drum: false, events: notes }],
        }
    }

    #[test]
    fn velocity_endpoints() {
        assert_eq!(velocity_level(127), 32);
        assert_eq!(velocity_level(1), 1);
        assert_eq!(velocity_level(4), 2);
    }

    #[test]
    fn durations_round_and_clamp() {
        // 2.4 beats = 19.2 steps; 5 beats = 40 steps.
        let raw = raw_with(vec![RawNote::new(0, 60, 64, 1152), RawNote::new(1920, 62, 64, 2400)], 100.0);
        let roles = BTreeMap::from([(0, Role::Piano)]);
        let s = quantize(&raw, &roles).unwrap();
        let notes = s.notes(Role::Piano);
        assert_eq!(notes[0].dur_steps, 19);
        assert_eq!(notes[1].dur_steps, 32);
        assert_eq!(notes[1].onset_step, 32);
        assert_eq!(s.bars(), 2);
        assert_eq!(notes[0].pitch_or_drum, 61);
    }

    #[test]
    fn onsets_snap_to_nearest_step() {
        // One step is 60 ticks at 480 tpb.
        let raw = raw_with(vec![RawNote::new(89, 60, 64, 60), RawNote::new(91, 64, 64, 60)], 120.0);
        let s = quantize(&raw, &BTreeMap::from([(0, Role::Piano)])).unwrap();
        let onsets: Vec<u32> = s.notes(Role::Piano).iter().map(|n| n.onset_step).collect();
        assert_eq!(onsets, vec![1, 2]);
    }

    #[test]
    fn tempo_classes() {
        let notes = vec![RawNote::new(0, 60, 64, 60)];
        let roles = BTreeMap::from([(0, Role::Piano)]);
        assert_eq!(quantize(&raw_with(notes.clone(), 90.0), &roles).unwrap().tempo, TempoClass::Mid);
        assert_eq!(quantize(&raw_with(notes.clone(), 89.9), &roles).unwrap().tempo, TempoClass::Low);
        assert_eq!(quantize(&raw_with(notes, 161.0), &roles).unwrap().tempo, TempoClass::High);
    }

    #[test]
    fn empty_input() {
        let raw = raw_with(vec![], 120.0);
        assert_eq!(quantize(&raw, &BTreeMap::from([(0, Role::Piano)])), Err(QuantizeError::EmptyInput));
    }
}

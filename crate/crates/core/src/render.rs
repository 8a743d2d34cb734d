//! Score to MIDI export, the inverse of quantization on the 32-step grid.

use crate::codec::{Role, Score};
use crate::midi_io::{RawMidi, RawNote, RawTrack, TimeSignature};

pub const RENDER_TICKS_PER_BEAT: u16 = 480;
/// 480 ticks per beat, 8 steps per beat.
pub const TICKS_PER_STEP: u64 = 60;

/// General MIDI program used for each role on export (0-indexed).
pub fn role_program(role: Role) -> u8 {
    match role {
        Role::Melody => 73,
        Role::Drum => 0,
        Role::Piano => 0,
        Role::String => 48,
        Role::Guitar => 25,
        Role::Bass => 33,
    }
}

/// Midpoint of a velocity level's bin.
pub fn level_velocity(level: u8) -> u8 {
    4 * (level - 1) + 2
}

/// Track name written for a role. The melody track name is what
/// melody extraction looks for.
pub fn role_track_name(role: Role) -> &'static str {
    match role {
        Role::Melody => "Melody",
        Role::Drum => "Drums",
        Role::Piano => "Piano",
        Role::String => "Strings",
        Role::Guitar => "Guitar",
        Role::Bass => "Bass",
    }
}

pub fn render_score_to_midi(s: &Score) -> RawMidi {
    let tracks = s
        .tracks()
        .iter()
        .map(|(role, notes)| RawTrack {
            name: role_track_name(*role).to_string(),
            program: role_program(*role),
            is_drum: role.is_drum(),
            events: notes
                .iter()
                .map(|n| {
                    RawNote::new(
                        u64::from(n.onset_step) * TICKS_PER_STEP,
                        n.midi_pitch(),
                        level_velocity(n.vel_level),
                        u64::from(n.dur_steps) * TICKS_PER_STEP,
                    )
                })
                .collect(),
        })
        .collect();
    RawMidi {
        ticks_per_beat: RENDER_TICKS_PER_BEAT,
        tempo_bpm: s.tempo.center_bpm(),
        time_signatures: vec![TimeSignature::new(0, 4, 4)],
        tracks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{QNote, TempoClass};
    use std::collections::BTreeMap;

    #[test]
    fn full_bar_duration_is_1920_ticks() {
        let s = Score::new(TempoClass::Mid, 1, BTreeMap::from([(Role::Bass, vec![QNote::new(0, 37, 1, 32)])]), vec![])
            .unwrap();
        let m = render_score_to_midi(&s);
        assert_eq!(m.tracks[0].events[0].duration_ticks, 1920);
        assert_eq!(m.tracks[0].events[0].velocity, 2);
        assert_eq!(m.tracks[0].program, 33);
    }

    #[test]
    fn empty_score_renders_conductor_only() {
        let m = render_score_to_midi(&Score::empty(TempoClass::High, 2));
        assert!(m.tracks.is_empty());
        assert_eq!(m.tempo_bpm, 170.0);
        let bytes = crate::midi_io::write_smf(&m).unwrap();
        assert!(crate::midi_io::parse_smf(&bytes).unwrap().tracks.is_empty());
    }
}

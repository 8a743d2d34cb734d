use mumidi::codec::{QNote, Role, Score, TempoClass};
use mumidi::midi_io::{RawMidi, RawNote, RawTrack, TimeSignature};
use mumidi::pipeline::{assign_roles, compress_tracks, extract_melody, filter_piece, segment};

fn track(name: &str, program: u8, is_drum: bool, n: usize) -> RawTrack {
    RawTrack {
        name: name.into(),
        program,
        is_drum,
        events: (0..n as u64).map(|i| RawNote::new(i * 240, 60, 80, 240)).collect(),
    }
}

fn raw(tracks: Vec<RawTrack>) -> RawMidi {
    RawMidi { tracks, ..RawMidi::default() }
}

pub fn melody_by_name_then_flute() {
    assert_eq!(extract_melody(&raw(vec![track("Bass", 33, false, 1), track("Melody ", 0, false, 1)])), Some(1));
    assert_eq!(extract_melody(&raw(vec![track("a", 0, false, 1), track("b", 73, false, 1)])), Some(1));
    assert_eq!(extract_melody(&raw(vec![track("a", 73, true, 1), track("b", 0, false, 1)])), None);
}

pub fn program_families() {
    let r = raw(vec![
        track("m", 73, false, 5),
        track("b", 33, false, 5),
        track("g", 25, false, 5),
        track("p", 0, false, 5),
        track("s", 48, false, 5),
        track("d", 0, true, 5),
    ]);
    let roles: Vec<Role> = assign_roles(&r, Some(0)).into_values().collect();
    assert_eq!(roles, vec![Role::Melody, Role::Bass, Role::Guitar, Role::Piano, Role::String, Role::Drum]);
}

pub fn overlapping_bass_keeps_larger() {
    let r = raw(vec![track("m", 73, false, 5), track("b1", 33, false, 30), track("b2", 34, false, 50)]);
    let roles = assign_roles(&r, Some(0));
    assert_eq!(roles.get(&1), None);
    assert_eq!(roles.get(&2), Some(&Role::Bass));
}

pub fn same_role_tracks_merge() {
    let mut p2 = track("p2", 1, false, 3);
    p2.events.iter_mut().for_each(|n| n.pitch = 64);
    let r = raw(vec![track("m", 73, false, 3), track("p1", 0, false, 3), p2]);
    let s = compress_tracks(&r, Some(0)).unwrap();
    assert_eq!(s.notes(Role::Piano).len(), 6);
}

fn score(counts: &[(Role, usize)]) -> Score {
    let tracks = counts.iter().map(|&(r, n)| (r, (0..n as u32).map(|i| QNote::new(i, 61, 10, 1)).collect())).collect();
    Score::new(TempoClass::Mid, 4, tracks, vec![]).unwrap()
}

pub fn filtration_rules() {
    assert!(!filter_piece(&score(&[(Role::Melody, 25), (Role::Piano, 19), (Role::Bass, 40)])));
    assert!(filter_piece(&score(&[(Role::Melody, 25), (Role::Piano, 30), (Role::Bass, 40)])));
    assert!(!filter_piece(&score(&[(Role::Piano, 100), (Role::Bass, 100), (Role::Drum, 100)])));
}

fn with_signatures(sigs: Vec<TimeSignature>) -> RawMidi {
    RawMidi { time_signatures: sigs, tracks: vec![track("p", 0, false, 40)], ..RawMidi::default() }
}

pub fn segmentation_cases() {
    let one = with_signatures(vec![TimeSignature::new(0, 4, 4)]);
    assert_eq!(segment(&one), vec![one.clone()]);

    let mixed = with_signatures(vec![
        TimeSignature::new(0, 4, 4),
        TimeSignature::new(1920, 3, 4),
        TimeSignature::new(3360, 4, 4),
    ]);
    let segs = segment(&mixed);
    assert_eq!(segs.len(), 2);
    // notes every 240 ticks: 8 start before 1920, 26 at or after 3360
    assert_eq!(segs[0].note_count(), 8);
    assert_eq!(segs[1].note_count(), 26);
    assert_eq!(segs[1].tracks[0].events[0].onset_tick, 0);

    assert!(segment(&with_signatures(vec![TimeSignature::new(0, 3, 4)])).is_empty());
}

pub fn boundary_notes_are_truncated() {
    let mut r = with_signatures(vec![TimeSignature::new(0, 4, 4), TimeSignature::new(1000, 6, 8)]);
    r.tracks[0].events = vec![RawNote::new(900, 60, 80, 500)];
    let segs = segment(&r);
    assert_eq!(segs[0].tracks[0].events[0].duration_ticks, 100);
}

pub fn repeated_four_four_does_not_split() {
    let r = with_signatures(vec![TimeSignature::new(0, 4, 4), TimeSignature::new(3840, 4, 4)]);
    assert_eq!(segment(&r).len(), 1);
    assert_eq!(segment(&r)[0].note_count(), 40);
}

mod run {
    #[test]
    fn melody_by_name_then_flute() {
        super::melody_by_name_then_flute()
    }
    #[test]
    fn program_families() {
        super::program_families()
    }
    #[test]
    fn overlapping_bass_keeps_larger() {
        super::overlapping_bass_keeps_larger()
    }
    #[test]
    fn same_role_tracks_merge() {
        super::same_role_tracks_merge()
    }
    #[test]
    fn filtration_rules() {
        super::filtration_rules()
    }
    #[test]
    fn segmentation_cases() {
        super::segmentation_cases()
    }
    #[test]
    fn boundary_notes_are_truncated() {
        super::boundary_notes_are_truncated()
    }
    #[test]
    fn repeated_four_four_does_not_split() {
        super::repeated_four_four_does_not_split()
    }
}

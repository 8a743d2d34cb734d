//! Seeded generators for scores, raw MIDI and small pop-style corpora.
//!
//! Used by the test suites and examples; everything is deterministic for a
//! given RNG state.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{ChordEntry, ChordSymbol, QNote, Quality, Role, Score, TempoClass, STEPS_PER_BAR};
use crate::midi_io::{write_smf, RawMidi, RawNote, RawTrack, TimeSignature};

/// Shape of randomly generated scores.
#[derive(Debug, Clone)]
pub struct ScoreGen {
    pub max_bars: u32,
    pub max_notes_per_role: usize,
    pub with_chords: bool,
    /// Forbid overlapping notes of equal pitch within a role and keep the
    /// last bar occupied, so that MIDI rendering is lossless.
    pub render_safe: bool,
}

impl Default for ScoreGen {
    fn default() -> Self {
        Self { max_bars: 6, max_notes_per_role: 24, with_chords: true, render_safe: false }
    }
}

pub fn random_score<R: Rng>(rng: &mut R, cfg: &ScoreGen) -> Score {
    let min_bars = u32::from(cfg.render_safe);
    let bars = rng.gen_range(min_bars..=cfg.max_bars);
    let tempo = *TempoClass::ALL.choose(rng).unwrap();
    let mut tracks: BTreeMap<Role, Vec<QNote>> = BTreeMap::new();
    if bars > 0 {
        for role in Role::ALL {
            if rng.gen_bool(0.4) {
                continue;
            }
            let count = rng.gen_range(0..=cfg.max_notes_per_role);
            let mut notes: Vec<QNote> = Vec::with_capacity(count);
            for _ in 0..count {
                let n = QNote::new(
                    rng.gen_range(0..bars * STEPS_PER_BAR),
                    rng.gen_range(1..=128),
                    rng.gen_range(1..=32),
                    rng.gen_range(1..=32),
                );
                let clash = |m: &QNote| {
                    m.pitch_or_drum == n.pitch_or_drum
                        && n.onset_step < m.onset_step + u32::from(m.dur_steps)
                        && m.onset_step < n.onset_step + u32::from(n.dur_steps)
                };
                if cfg.render_safe && notes.iter().any(clash) {
                    continue;
                }
                notes.push(n);
            }
            tracks.insert(role, notes);
        }
        if cfg.render_safe {
            let last_bar = (bars - 1) * STEPS_PER_BAR;
            let occupied = tracks.values().flatten().any(|n| n.onset_step >= last_bar);
            if !occupied {
                let n = QNote::new(last_bar + rng.gen_range(0..STEPS_PER_BAR), rng.gen_range(1..=128), 16, 4);
                tracks.entry(Role::Piano).or_default().retain(|m| m.pitch_or_drum != n.pitch_or_drum);
                tracks.entry(Role::Piano).or_default().push(n);
            }
        }
    }
    let mut chords = Vec::new();
    if cfg.with_chords {
        for bar in 0..bars {
            for half in 0..2 {
                if rng.gen_bool(0.5) {
                    let c = ChordSymbol::from_index(rng.gen_range(0..ChordSymbol::COUNT)).unwrap();
                    chords.push(ChordEntry::new(bar, half, c));
                }
            }
        }
    }
    Score::new(tempo, bars, tracks, chords).expect("generator respects score ranges")
}

/// Random raw MIDI whose every field survives an SMF round trip.
pub fn random_raw_midi<R: Rng>(rng: &mut R) -> RawMidi {
    let ticks_per_beat = *[96u16, 192, 384, 480, 960].choose(rng).unwrap();
    let us: u32 = rng.gen_range(250_000..1_500_000);
    let mut time_signatures = Vec::new();
    let mut tick = 0u64;
    for _ in 0..rng.gen_range(0..4) {
        let num = rng.gen_range(1..=12);
        let den = *[2u8, 4, 8, 16].choose(rng).unwrap();
        time_signatures.push(TimeSignature::new(tick, num, den));
        tick += rng.gen_range(1..20_000);
    }
    let tracks = (0..rng.gen_range(0..5))
        .map(|i| {
            let is_drum = rng.gen_bool(0.2);
            let mut events: Vec<RawNote> = Vec::new();
            for _ in 0..rng.gen_range(0..40) {
                let n = RawNote::new(
                    rng.gen_range(0..20_000),
                    rng.gen_range(0..128),
                    rng.gen_range(1..128),
                    rng.gen_range(1..4_000),
                );
                let clash = events
                    .iter()
                    .any(|m| m.pitch == n.pitch && n.onset_tick < m.end_tick() && m.onset_tick < n.end_tick());
                if !clash {
                    events.push(n);
                }
            }
            events.sort();
            RawTrack { name: format!("track {i}"), program: rng.gen_range(0..128), is_drum, events }
        })
        .collect();
    RawMidi { ticks_per_beat, tempo_bpm: 60_000_000.0 / f64::from(us), time_signatures, tracks }
}

const PROGRESSIONS: [[(u8, Quality); 4]; 4] = [
    [(0, Quality::Major), (7, Quality::Major), (9, Quality::Minor), (5, Quality::Major)],
    [(9, Quality::Minor), (5, Quality::Major), (0, Quality::Major), (7, Quality::Major)],
    [(0, Quality::Major), (9, Quality::Minor), (5, Quality::Major), (7, Quality::Major)],
    [(5, Quality::Major7), (4, Quality::Minor7), (2, Quality::Minor7), (0, Quality::Major)],
];

/// Pitch (1-based) of a chord tone `degree` in the octave starting at MIDI `base`.
fn chord_tone(chord: ChordSymbol, degree: usize, base: u8) -> u8 {
    let pcs: Vec<u8> = chord.pitch_classes().collect();
    let pc = pcs[degree % pcs.len()];
    let octave = (degree / pcs.len()) as u8 * 12;
    base + ((pc + 12 - base % 12) % 12) + octave + 1
}

/// Options for [`pop_piece`].
#[derive(Debug, Clone)]
pub struct PopGen {
    pub bars: u32,
    /// Probability of nudging an onset by one timestep.
    pub timing_jitter: f64,
    /// Probability that a track is "performed": every note of it, chord
    /// tones included, gets its own onset nudge instead of sharing one.
    pub performed_track_prob: f64,
}

impl Default for PopGen {
    fn default() -> Self {
        Self { bars: 16, timing_jitter: 0.15, performed_track_prob: 0.3 }
    }
}

/// A six-role pop-style arrangement over a four-chord loop, with the chord
/// lane filled in (one chord per half bar).
pub fn pop_piece<R: Rng>(rng: &mut R, cfg: &PopGen) -> Score {
    let prog = PROGRESSIONS.choose(rng).unwrap();
    let transpose: u8 = rng.gen_range(0..12);
    let bars = cfg.bars;
    let mut tracks: BTreeMap<Role, Vec<QNote>> = BTreeMap::new();
    let mut chords = Vec::new();
    let total = bars * STEPS_PER_BAR;
    let jitter = |rng: &mut R, step: u32| -> u32 {
        if rng.gen_bool(cfg.timing_jitter) {
            if rng.gen_bool(0.5) && step > 0 {
                step - 1
            } else {
                (step + 1).min(total - 1)
            }
        } else {
            step
        }
    };
    let performed: BTreeMap<Role, bool> =
        Role::ALL.into_iter().map(|r| (r, rng.gen_bool(cfg.performed_track_prob))).collect();
    // Onset for one note of `role` whose chord-level onset is `on`.
    let spread = |rng: &mut R, role: Role, on: u32| -> u32 {
        if performed[&role] {
            (on + rng.gen_range(0..=3)).saturating_sub(1).min(total - 1)
        } else {
            on
        }
    };
    let vel = |rng: &mut R, center: u8| -> u8 { (i16::from(center) + rng.gen_range(-3i16..=3)).clamp(1, 32) as u8 };

    let piano_pattern: &[u32] = [&[0u32, 12, 16, 28][..], &[0, 16][..], &[0, 8, 16, 24][..]].choose(rng).unwrap();
    let guitar_pattern: &[u32] =
        [&[0u32, 4, 8, 12, 16, 20, 24, 28][..], &[0, 6, 12, 16, 22, 28][..]].choose(rng).unwrap();
    let piano_broken = rng.gen_bool(0.5);
    let guitar_picked = rng.gen_bool(0.5);
    let bass_pattern: &[u32] = [&[0u32, 8, 16, 24][..], &[0, 6, 12, 16, 22, 28][..], &[0, 16][..]].choose(rng).unwrap();

    for bar in 0..bars {
        let chord_of = |half: u32| {
            let (root, q) = prog[((bar * 2 + half) / 2 % 4) as usize];
            ChordSymbol::new((root + transpose) % 12, q)
        };
        for half in 0..2u8 {
            chords.push(ChordEntry::new(bar, half, chord_of(u32::from(half))));
        }
        let start = bar * STEPS_PER_BAR;

        // melody: a phrase of mixed note values over the chord
        let mut t = 0u32;
        while t < STEPS_PER_BAR {
            let dur = *[2u8, 4, 4, 6, 8].choose(rng).unwrap();
            if rng.gen_bool(0.8) {
                let chord = chord_of(t / 16);
                let pitch = if rng.gen_bool(0.7) {
                    chord_tone(chord, rng.gen_range(0..4), 72)
                } else {
                    chord_tone(chord, 0, 72) + [2u8, 5].choose(rng).unwrap()
                };
                let on = jitter(rng, start + t);
                tracks.entry(Role::Melody).or_default().push(QNote::new(on, pitch, vel(rng, 24), dur));
            }
            t += u32::from(dur);
        }

        // drums: kick/snare backbeat, eighth hats, occasional fills
        for step in (0..STEPS_PER_BAR).step_by(4) {
            let on = start + step;
            let mut hits: Vec<u8> = vec![43]; // closed hi-hat
            if step % 16 == 0 || (step == 20 && rng.gen_bool(0.3)) {
                hits.push(37); // bass drum
            }
            if step % 16 == 8 {
                hits.push(39); // snare
            }
            if step == 0 && bar % 4 == 0 {
                hits.push(50); // crash cymbal
            }
            if rng.gen_bool(0.1) {
                continue;
            }
            let on = jitter(rng, on);
            for h in hits {
                let on = spread(rng, Role::Drum, on);
                tracks.entry(Role::Drum).or_default().push(QNote::new(on, h, vel(rng, 22), 2));
            }
            if rng.gen_bool(0.2) {
                let ghost = (start + step + 2).min(total - 1);
                tracks.entry(Role::Drum).or_default().push(QNote::new(ghost, 43, vel(rng, 12), 1));
            }
        }

        // bass: chord roots
        for &step in bass_pattern {
            let chord = chord_of(step / 16);
            let pitch = chord_tone(chord, if rng.gen_bool(0.8) { 0 } else { 2 }, 36);
            let on = jitter(rng, start + step);
            let on = spread(rng, Role::Bass, on);
            tracks.entry(Role::Bass).or_default().push(QNote::new(on, pitch, vel(rng, 24), 6));
        }

        // piano: block chords or a broken-chord figure
        if piano_broken {
            for (i, step) in (0..STEPS_PER_BAR).step_by(4).enumerate() {
                let chord = chord_of(step / 16);
                let on = jitter(rng, start + step);
                let on = spread(rng, Role::Piano, on);
                tracks.entry(Role::Piano).or_default().push(QNote::new(
                    on,
                    chord_tone(chord, i % 4, 60),
                    vel(rng, 20),
                    4,
                ));
            }
        } else {
            for &step in piano_pattern {
                let chord = chord_of(step / 16);
                let on = jitter(rng, start + step);
                for d in 0..rng.gen_range(3..=4) {
                    let on = spread(rng, Role::Piano, on);
                    tracks.entry(Role::Piano).or_default().push(QNote::new(
                        on,
                        chord_tone(chord, d, 60),
                        vel(rng, 20),
                        8,
                    ));
                }
            }
        }

        // guitar: strums of two or three strings, or single picked notes
        for &step in guitar_pattern {
            if rng.gen_bool(0.25) {
                continue;
            }
            let chord = chord_of(step / 16);
            let on = jitter(rng, start + step);
            let strings = if guitar_picked { 1 } else { rng.gen_range(2..=3) };
            for d in 0..strings {
                let on = spread(rng, Role::Guitar, on);
                let degree = if guitar_picked { rng.gen_range(0..4) } else { d + 1 };
                tracks.entry(Role::Guitar).or_default().push(QNote::new(
                    on,
                    chord_tone(chord, degree, 52),
                    vel(rng, 18),
                    3,
                ));
            }
        }

        // strings: sustained pads per half bar
        for half in 0..2u32 {
            let chord = chord_of(half);
            for d in 0..2 {
                let on = spread(rng, Role::String, start + half * 16);
                tracks.entry(Role::String).or_default().push(QNote::new(
                    on,
                    chord_tone(chord, d, 60),
                    vel(rng, 16),
                    16,
                ));
            }
        }
    }
    Score::new(TempoClass::ALL[rng.gen_range(0..3)], bars, tracks, chords).expect("pop generator stays in range")
}

/// Renders a pop piece into a raw MIDI file with General MIDI programs.
pub fn pop_midi<R: Rng>(rng: &mut R, cfg: &PopGen, tempo_bpm: f64) -> RawMidi {
    let score = pop_piece(rng, cfg);
    let mut raw = crate::render::render_score_to_midi(&score);
    raw.tempo_bpm = tempo_bpm;
    raw
}

/// One bar of piano over bass under a C major chord: block and broken
/// triads in the piano (10 notes), root-fifth bass (5 notes).
pub fn two_track_excerpt() -> Score {
    let (c4, e4, g4) = (61, 65, 68);
    let (c2, g2) = (37, 44);
    let piano = vec![
        QNote::new(0, c4, 20, 8),
        QNote::new(0, e4, 20, 8),
        QNote::new(0, g4, 20, 8),
        QNote::new(8, e4, 18, 8),
        QNote::new(8, g4, 18, 8),
        QNote::new(16, c4, 20, 8),
        QNote::new(16, e4, 20, 8),
        QNote::new(16, g4, 20, 8),
        QNote::new(24, e4, 18, 8),
        QNote::new(24, g4, 18, 8),
    ];
    let bass = vec![
        QNote::new(0, c2, 22, 8),
        QNote::new(8, c2, 20, 8),
        QNote::new(16, c2, 22, 8),
        QNote::new(24, c2, 20, 4),
        QNote::new(28, g2, 20, 4),
    ];
    let chords = vec![ChordEntry::new(0, 0, ChordSymbol::new(0, Quality::Major))];
    Score::new(TempoClass::Mid, 1, BTreeMap::from([(Role::Piano, piano), (Role::Bass, bass)]), chords)
        .expect("excerpt is a valid score")
}

/// Writes `files` synthetic pop MIDI files (`pop-NNN.mid`) into `dir`.
/// Every fifth file keeps only melody and bass, so preprocessing drops it.
pub fn write_pop_corpus(dir: &Path, files: usize, cfg: &PopGen, seed: u64) -> io::Result<Vec<PathBuf>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fs::create_dir_all(dir)?;
    let mut out = Vec::with_capacity(files);
    for i in 0..files {
        let tempo = f64::from(rng.gen_range(70u32..=180));
        let mut raw = pop_midi(&mut rng, cfg, tempo);
        if i % 5 == 4 {
            raw.tracks.retain(|t| t.name == "Melody" || t.name == "Bass");
        }
        let path = dir.join(format!("pop-{i:03}.mid"));
        fs::write(&path, write_smf(&raw).map_err(io::Error::other)?)?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        let a = pop_piece(&mut ChaCha8Rng::seed_from_u64(3), &PopGen::default());
        let b = pop_piece(&mut ChaCha8Rng::seed_from_u64(3), &PopGen::default());
        assert_eq!(a, b);
        assert_eq!(a.chords().len(), 32);
        assert_eq!(a.roles().count(), 6);
    }

    #[test]
    fn chord_tones_are_in_chord() {
        let c = ChordSymbol::new(9, Quality::Minor);
        for d in 0..6 {
            let p = chord_tone(c, d, 60);
            assert!(c.pitch_classes().any(|pc| pc == (p - 1) % 12));
        }
    }
}

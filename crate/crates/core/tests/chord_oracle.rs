use std::collections::BTreeMap;

use mumidi::codec::{ChordSymbol, QNote, Quality, Role, Score, TempoClass};
use mumidi::pipeline::{infer_chords, ChordHmm};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

/// Per-step pitch-class counts summed into half-bar frames.
fn oracle_frames(s: &Score) -> Vec<[f64; 12]> {
    let steps = 32 * s.bars();
    let mut out = vec![[0.0; 12]; 2 * s.bars() as usize];
    for (role, notes) in s.tracks() {
        if role.is_drum() {
            continue;
        }
        for n in notes {
            let pc = usize::from((n.pitch_or_drum - 1) % 12);
            for step in n.onset_step..(n.onset_step + u32::from(n.dur_steps)).min(steps) {
                out[(step / 16) as usize][pc] += 1.0;
            }
        }
    }
    out
}

fn oracle_template(chord: Option<ChordSymbol>) -> [f64; 12] {
    let mut t = [0.0; 12];
    match chord {
        Some(c) => {
            for (pc, v) in t.iter_mut().enumerate() {
                *v = 1e-3 + if c.pitch_classes().any(|p| usize::from(p) == pc) { 1.0 } else { 0.0 };
            }
        }
        None => t = [1.0; 12],
    }
    let norm = t.iter().map(|x| x * x).sum::<f64>().sqrt();
    t.map(|x| x / norm)
}

struct Oracle {
    /// `None` is the no-chord state, last in order.
    states: Vec<Option<ChordSymbol>>,
    emit: Vec<Vec<f64>>,
}

impl Oracle {
    fn new(chords: &[ChordSymbol], frames: &[[f64; 12]]) -> Self {
        let states: Vec<Option<ChordSymbol>> = chords.iter().copied().map(Some).chain([None]).collect();
        let emit = frames
            .iter()
            .map(|h| {
                let silent = h.iter().all(|&x| x == 0.0);
                states
                    .iter()
                    .map(|s| match (silent, s) {
                        (true, None) => 0.0,
                        (true, Some(_)) => f64::NEG_INFINITY,
                        _ => oracle_template(*s).iter().zip(h).map(|(a, b)| a * b).sum(),
                    })
                    .collect()
            })
            .collect();
        Self { states, emit }
    }

    /// Visits every path in lexicographic order with its score.
    fn walk<F: FnMut(&[usize], f64) -> bool>(&self, path: &mut Vec<usize>, score: f64, visit: &mut F) -> bool {
        if path.len() == self.emit.len() {
            return visit(path, score);
        }
        let t = path.len();
        for s in 0..self.states.len() {
            let trans = match path.last() {
                None => 0.0,
                Some(&p) if p == s => 0.0,
                Some(_) => -2.0,
            };
            path.push(s);
            let stop = self.walk(path, score + trans + self.emit[t][s], visit);
            path.pop();
            if stop {
                return true;
            }
        }
        false
    }

    /// First path in lexicographic order whose score is within `TOL` of the
    /// maximum.
    fn best_path(&self) -> Vec<usize> {
        let mut best = f64::NEG_INFINITY;
        let mut near: Vec<(f64, u64)> = Vec::new();
        let base = self.states.len() as u64;
        self.walk(&mut Vec::new(), 0.0, &mut |p, s| {
            if s > best {
                best = s;
                near.retain(|(x, _)| *x >= best - TOL);
            }
            if s >= best - TOL {
                near.push((s, p.iter().fold(0, |acc, &x| acc * base + x as u64)));
            }
            false
        });
        let mut code = near[0].1;
        let mut path = vec![0; self.emit.len()];
        for x in path.iter_mut().rev() {
            *x = (code % base) as usize;
            code /= base;
        }
        path
    }

    fn lane(&self, path: &[usize]) -> Vec<ChordSymbol> {
        let mut prev = ChordSymbol::new(0, Quality::Major);
        path.iter()
            .map(|&s| {
                prev = self.states[s].unwrap_or(prev);
                prev
            })
            .collect()
    }
}

fn random_fixture(rng: &mut ChaCha8Rng) -> (Vec<ChordSymbol>, Score) {
    let mut all: Vec<ChordSymbol> = ChordSymbol::all().collect();
    all.shuffle(rng);
    let chords = all[..13].to_vec();
    let bars = rng.gen_range(1..=3u32);
    let mut tracks: BTreeMap<Role, Vec<QNote>> = BTreeMap::new();
    for role in [Role::Piano, Role::Bass, Role::Drum] {
        let mut notes = Vec::new();
        for half in 0..2 * bars {
            if rng.gen_bool(0.2) {
                continue;
            }
            // mostly tones of a state chord, sometimes noise
            let c = chords[rng.gen_range(0..chords.len())];
            let pcs: Vec<u8> = c.pitch_classes().collect();
            for _ in 0..rng.gen_range(1..4) {
                let pc = if rng.gen_bool(0.8) { *pcs.choose(rng).unwrap() } else { rng.gen_range(0..12) };
                let onset = half * 16 + rng.gen_range(0..16);
                let pitch = 48 + pc + 1;
                let dur = rng.gen_range(1..=20);
                notes.push(QNote::new(onset, pitch, 16, dur));
            }
        }
        tracks.insert(role, notes);
    }
    (chords, Score::new(TempoClass::Mid, bars, tracks, vec![]).unwrap())
}

pub fn viterbi_matches_exhaustive_search() {
    // 13 chords plus the no-chord state
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let (chords, score) = random_fixture(&mut rng);
        let frames = oracle_frames(&score);
        if frames.iter().all(|h| h.iter().all(|&x| x == 0.0)) {
            continue;
        }
        let oracle = Oracle::new(&chords, &frames);
        let path = oracle.best_path();
        let hmm = ChordHmm::with_chords(chords.iter().copied());
        assert_eq!(hmm.decode(&frames), path, "case {case}");
        let lane = hmm.infer(&score, |_| true).unwrap();
        assert_eq!(lane.entries(), oracle.lane(&path).as_slice(), "case {case}");
    }
}

pub fn c_major_triad_gives_c_major_twice() {
    let notes = [61, 65, 68].map(|p| QNote::new(0, p, 20, 32)).to_vec();
    let s = Score::new(TempoClass::Mid, 1, BTreeMap::from([(Role::Piano, notes)]), vec![]).unwrap();
    let lane = infer_chords(&s).unwrap();
    let c = ChordSymbol::new(0, Quality::Major);
    assert_eq!(lane.entries(), &[c, c]);
}

pub fn silent_bar_inherits_previous_chord() {
    let notes = [58, 61, 65].map(|p| QNote::new(0, p, 20, 32)).to_vec();
    let s = Score::new(TempoClass::Mid, 2, BTreeMap::from([(Role::Piano, notes)]), vec![]).unwrap();
    let lane = infer_chords(&s).unwrap();
    let a_minor = ChordSymbol::new(9, Quality::Minor);
    assert_eq!(lane.entries(), &[a_minor; 4]);
}

mod run {
    #[test]
    fn viterbi_matches_exhaustive_search() {
        super::viterbi_matches_exhaustive_search()
    }
    #[test]
    fn c_major_triad_gives_c_major_twice() {
        super::c_major_triad_gives_c_major_twice()
    }
    #[test]
    fn silent_bar_inherits_previous_chord() {
        super::silent_bar_inherits_previous_chord()
    }
}

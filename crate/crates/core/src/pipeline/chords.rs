//! Half-bar chord recognition: pitch-class template matching decoded with
//! Viterbi over chord states plus a `NoChord` state.

use crate::codec::{ChordEntry, ChordSymbol, Quality, Role, Score, STEPS_PER_HALF_BAR};

use super::PipelineError;

/// Weight added to every pitch class of a chord template before normalizing.
pub const TEMPLATE_SMOOTHING: f64 = 1e-3;
/// Scores closer than this are treated as ties.
const TIE_TOLERANCE: f64 = 1e-9;

pub type PitchHistogram = [f64; 12];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HmmState {
    Chord(ChordSymbol),
    NoChord,
}

/// Two chords per bar; `entries[2 * bar + half]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChordLane {
    entries: Vec<ChordSymbol>,
}

impl ChordLane {
    pub fn new(entries: Vec<ChordSymbol>) -> Result<Self, PipelineError> {
        if !entries.len().is_multiple_of(2) {
            return Err(PipelineError::LaneLength(entries.len()));
        }
        Ok(Self { entries })
    }

    /// Reads a score's chord lane, filling halves without a chord from the
    /// previous half (C major before the first chord). `None` if the score
    /// has no chords at all.
    pub fn from_score(s: &Score) -> Option<Self> {
        if s.chords().is_empty() {
            return None;
        }
        let mut slots: Vec<Option<ChordSymbol>> = vec![None; 2 * s.bars() as usize];
        for c in s.chords() {
            slots[2 * c.bar as usize + c.half as usize] = Some(c.chord);
        }
        let mut prev = ChordSymbol::new(0, Quality::Major);
        let entries = slots
            .into_iter()
            .map(|c| {
                prev = c.unwrap_or(prev);
                prev
            })
            .collect();
        Some(Self { entries })
    }

    pub fn bars(&self) -> u32 {
        (self.entries.len() / 2) as u32
    }

    pub fn entries(&self) -> &[ChordSymbol] {
        &self.entries
    }

    pub fn get(&self, bar: u32, half: u8) -> Option<ChordSymbol> {
        self.entries.get(2 * bar as usize + half as usize).copied()
    }

    pub fn to_chord_entries(&self) -> Vec<ChordEntry> {
        self.entries.iter().enumerate().map(|(i, c)| ChordEntry::new((i / 2) as u32, (i % 2) as u8, *c)).collect()
    }
}

/// Duration-weighted pitch-class histograms, one per half bar, over the
/// non-drum roles accepted by `include`. Weights are in timesteps.
pub fn frame_histograms(s: &Score, include: impl Fn(Role) -> bool) -> Vec<PitchHistogram> {
    let frames = 2 * s.bars() as usize;
    let mut out = vec![[0.0; 12]; frames];
    for (role, notes) in s.tracks() {
        if role.is_drum() || !include(*role) {
            continue;
        }
        for n in notes {
            let pc = usize::from(n.midi_pitch() % 12);
            let (start, end) = (n.onset_step, n.onset_step + u32::from(n.dur_steps));
            let mut f = (start / STEPS_PER_HALF_BAR) as usize;
            while f < frames {
                let lo = f as u32 * STEPS_PER_HALF_BAR;
                let hi = lo + STEPS_PER_HALF_BAR;
                if lo >= end {
                    break;
                }
                out[f][pc] += f64::from(end.min(hi) - start.max(lo));
                f += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ChordHmm {
    states: Vec<HmmState>,
    templates: Vec<PitchHistogram>,
    pub stay_logit: f64,
    pub switch_logit: f64,
}

impl Default for ChordHmm {
    /// All 84 chords followed by `NoChord`.
    fn default() -> Self {
        Self::with_chords(ChordSymbol::all())
    }
}

fn unit(mut v: PitchHistogram) -> PitchHistogram {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

impl ChordHmm {
    /// A model over the given chords (in that order) and a trailing `NoChord`.
    pub fn with_chords(chords: impl IntoIterator<Item = ChordSymbol>) -> Self {
        let mut states: Vec<HmmState> = chords.into_iter().map(HmmState::Chord).collect();
        states.push(HmmState::NoChord);
        let templates = states
            .iter()
            .map(|s| match s {
                HmmState::Chord(c) => {
                    let mut t = [TEMPLATE_SMOOTHING; 12];
                    for pc in c.pitch_classes() {
                        t[usize::from(pc)] += 1.0;
                    }
                    unit(t)
                }
                HmmState::NoChord => unit([1.0; 12]),
            })
            .collect();
        Self { states, templates, stay_logit: 0.0, switch_logit: -2.0 }
    }

    pub fn states(&self) -> &[HmmState] {
        &self.states
    }

    pub fn template(&self, state: usize) -> &PitchHistogram {
        &self.templates[state]
    }

    /// Log-space emission score. A silent frame can only be `NoChord`.
    pub fn emission(&self, state: usize, hist: &PitchHistogram) -> f64 {
        let silent = hist.iter().all(|&x| x == 0.0);
        match (silent, self.states[state]) {
            (true, HmmState::NoChord) => 0.0,
            (true, HmmState::Chord(_)) => f64::NEG_INFINITY,
            (false, _) => self.templates[state].iter().zip(hist).map(|(t, h)| t * h).sum(),
        }
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        if from == to {
            self.stay_logit
        } else {
            self.switch_logit
        }
    }

    pub fn path_score(&self, frames: &[PitchHistogram], path: &[usize]) -> f64 {
        let mut score = 0.0;
        for (t, (&s, h)) in path.iter().zip(frames).enumerate() {
            score += self.emission(s, h);
            if t > 0 {
                score += self.transition(path[t - 1], s);
            }
        }
        score
    }

    /// Highest-scoring state path; among (near-)ties the lexicographically
    /// smallest by state index.
    pub fn decode(&self, frames: &[PitchHistogram]) -> Vec<usize> {
        let n = self.states.len();
        let len = frames.len();
        if len == 0 {
            return Vec::new();
        }
        let emissions: Vec<Vec<f64>> = frames.iter().map(|h| (0..n).map(|s| self.emission(s, h)).collect()).collect();
        // best score obtainable from frame t onward, starting in state s
        let mut to_go = vec![vec![0.0; n]; len];
        to_go[len - 1].clone_from(&emissions[len - 1]);
        for t in (0..len - 1).rev() {
            for s in 0..n {
                let best_next =
                    (0..n).map(|s2| self.transition(s, s2) + to_go[t + 1][s2]).fold(f64::NEG_INFINITY, f64::max);
                to_go[t][s] = emissions[t][s] + best_next;
            }
        }
        let pick = |scores: &mut dyn Iterator<Item = f64>| -> usize {
            let v: Vec<f64> = scores.collect();
            let best = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            v.iter().position(|&x| x >= best - TIE_TOLERANCE).unwrap_or(0)
        };
        let mut path = Vec::with_capacity(len);
        path.push(pick(&mut to_go[0].iter().copied()));
        for t in 1..len {
            let prev = path[t - 1];
            path.push(pick(&mut (0..n).map(|s| self.transition(prev, s) + to_go[t][s])));
        }
        path
    }

    /// Chord symbols for a state path; `NoChord` repeats the previous chord
    /// (C major at the start).
    pub fn path_chords(&self, path: &[usize]) -> Vec<ChordSymbol> {
        let mut prev = ChordSymbol::new(0, Quality::Major);
        path.iter()
            .map(|&s| {
                if let HmmState::Chord(c) = self.states[s] {
                    prev = c;
                }
                prev
            })
            .collect()
    }

    /// Chord lane of the roles accepted by `include`.
    pub fn infer(&self, s: &Score, include: impl Fn(Role) -> bool) -> Result<ChordLane, PipelineError> {
        let frames = frame_histograms(s, include);
        if frames.iter().all(|h| h.iter().all(|&x| x == 0.0)) {
            return Err(PipelineError::EmptyInput);
        }
        ChordLane::new(self.path_chords(&self.decode(&frames)))
    }
}

/// Two chords per bar from every non-drum track of `s`.
pub fn infer_chords(s: &Score) -> Result<ChordLane, PipelineError> {
    ChordHmm::default().infer(s, |_| true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{QNote, TempoClass};
    use std::collections::BTreeMap;

    fn piano(notes: Vec<QNote>, bars: u32) -> Score {
        Score::new(TempoClass::Mid, bars, BTreeMap::from([(Role::Piano, notes)]), vec![]).unwrap()
    }

    // C4 = MIDI 60 = pitch_or_drum 61
    fn sustained(pcs: &[u8], bar: u32) -> Vec<QNote> {
        pcs.iter().map(|pc| QNote::new(bar * 32, 61 + pc, 20, 32)).collect()
    }

    #[test]
    fn c_major_triad_fills_both_halves() {
        let lane = infer_chords(&piano(sustained(&[0, 4, 7], 0), 1)).unwrap();
        assert_eq!(lane.entries(), &[ChordSymbol::new(0, Quality::Major); 2]);
    }

    #[test]
    fn c_then_a_minor() {
        let mut notes = sustained(&[0, 4, 7], 0);
        notes.extend(sustained(&[9, 0, 4], 1));
        let lane = infer_chords(&piano(notes, 2)).unwrap();
        let c = ChordSymbol::new(0, Quality::Major);
        let am = ChordSymbol::new(9, Quality::Minor);
        assert_eq!(lane.entries(), &[c, c, am, am]);
    }

    #[test]
    fn silent_piece_is_rejected() {
        let drums =
            Score::new(TempoClass::Mid, 1, BTreeMap::from([(Role::Drum, vec![QNote::new(0, 37, 20, 4)])]), vec![])
                .unwrap();
        assert!(matches!(infer_chords(&drums), Err(PipelineError::EmptyInput)));
        assert!(matches!(infer_chords(&Score::empty(TempoClass::Mid, 2)), Err(PipelineError::EmptyInput)));
    }

    #[test]
    fn silent_frames_inherit() {
        // bar 0 silent, bar 1 A minor, bar 2 silent
        let lane = infer_chords(&piano(sustained(&[9, 0, 4], 1), 3)).unwrap();
        let c = ChordSymbol::new(0, Quality::Major);
        let am = ChordSymbol::new(9, Quality::Minor);
        assert_eq!(lane.entries(), &[c, c, am, am, am, am]);
    }

    #[test]
    fn histogram_splits_notes_across_frames() {
        let h = frame_histograms(&piano(vec![QNote::new(10, 61, 20, 10)], 1), |_| true);
        assert_eq!(h[0][0], 6.0);
        assert_eq!(h[1][0], 4.0);
    }

    #[test]
    fn templates_are_unit_and_nonnegative() {
        let hmm = ChordHmm::default();
        assert_eq!(hmm.states().len(), 85);
        assert!(hmm.stay_logit > hmm.switch_logit);
        for s in 0..85 {
            let t = hmm.template(s);
            assert!(t.iter().all(|&x| x > 0.0));
            assert!((t.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

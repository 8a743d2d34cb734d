use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CodecError;

/// Timesteps per bar.
pub const STEPS_PER_BAR: u32 = 32;
/// Timesteps per half bar, the granularity of the chord lane.
pub const STEPS_PER_HALF_BAR: u32 = 16;
/// Number of velocity levels.
pub const VEL_LEVELS: u8 = 32;
/// Longest representable duration in timesteps.
pub const MAX_DUR_STEPS: u8 = 32;

/// Instrument role of a track. Declaration order is the canonical order of
/// track groups inside one position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Melody,
    Drum,
    Piano,
    String,
    Guitar,
    Bass,
}

impl Role {
    pub const ALL: [Role; 6] = [Role::Melody, Role::Drum, Role::Piano, Role::String, Role::Guitar, Role::Bass];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Role> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Melody => "melody",
            Role::Drum => "drum",
            Role::Piano => "piano",
            Role::String => "string",
            Role::Guitar => "guitar",
            Role::Bass => "bass",
        }
    }

    pub fn is_drum(self) -> bool {
        self == Role::Drum
    }
}

impl FromStr for Role {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| CodecError::Json(format!("unknown track role {s:?}")))
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TempoClass {
    Low,
    Mid,
    High,
}

impl TempoClass {
    pub const ALL: [TempoClass; 3] = [TempoClass::Low, TempoClass::Mid, TempoClass::High];

    /// Below 90 is low, above 160 is high; both boundaries belong to the middle class.
    pub fn from_bpm(bpm: f64) -> TempoClass {
        if bpm < 90.0 {
            TempoClass::Low
        } else if bpm <= 160.0 {
            TempoClass::Mid
        } else {
            TempoClass::High
        }
    }

    /// Representative tempo used when rendering a score back to MIDI.
    pub fn center_bpm(self) -> f64 {
        match self {
            TempoClass::Low => 80.0,
            TempoClass::Mid => 120.0,
            TempoClass::High => 170.0,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TempoClass::Low => "low",
            TempoClass::Mid => "mid",
            TempoClass::High => "high",
        }
    }
}

impl FromStr for TempoClass {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TempoClass::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| CodecError::Json(format!("unknown tempo class {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Quality {
    Major,
    Minor,
    Diminished,
    Augmented,
    Major7,
    Minor7,
    HalfDiminished,
}

impl Quality {
    pub const ALL: [Quality; 7] = [
        Quality::Major,
        Quality::Minor,
        Quality::Diminished,
        Quality::Augmented,
        Quality::Major7,
        Quality::Minor7,
        Quality::HalfDiminished,
    ];

    /// Chord tones as semitone offsets above the root.
    pub fn intervals(self) -> &'static [u8] {
        match self {
            Quality::Major => &[0, 4, 7],
            Quality::Minor => &[0, 3, 7],
            Quality::Diminished => &[0, 3, 6],
            Quality::Augmented => &[0, 4, 8],
            Quality::Major7 => &[0, 4, 7, 11],
            Quality::Minor7 => &[0, 3, 7, 10],
            Quality::HalfDiminished => &[0, 3, 6, 10],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Quality::Major => "major",
            Quality::Minor => "minor",
            Quality::Diminished => "diminished",
            Quality::Augmented => "augmented",
            Quality::Major7 => "major7",
            Quality::Minor7 => "minor7",
            Quality::HalfDiminished => "half_diminished",
        }
    }
}

pub const ROOT_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

/// One of the 84 chord symbols: 12 roots times 7 qualities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChordSymbol {
    root: u8,
    pub quality: Quality,
}

impl ChordSymbol {
    pub const COUNT: usize = 84;

    pub fn new(root: u8, quality: Quality) -> Self {
        assert!(root < 12, "chord root {root} out of range");
        Self { root, quality }
    }

    pub fn root(self) -> u8 {
        self.root
    }

    /// Dense index `root * 7 + quality`, in `0..84`.
    pub fn index(self) -> usize {
        usize::from(self.root) * Quality::ALL.len() + self.quality as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        (i < Self::COUNT).then(|| Self::new((i / 7) as u8, Quality::ALL[i % 7]))
    }

    pub fn all() -> impl Iterator<Item = ChordSymbol> {
        (0..Self::COUNT).filter_map(Self::from_index)
    }

    pub fn pitch_classes(self) -> impl Iterator<Item = u8> {
        let root = self.root;
        self.quality.intervals().iter().map(move |i| (root + i) % 12)
    }

    pub fn root_name(self) -> &'static str {
        ROOT_NAMES[usize::from(self.root)]
    }

    pub fn parse(root: &str, quality: &str) -> Result<Self, CodecError> {
        let r = ROOT_NAMES
            .iter()
            .position(|n| *n == root)
            .ok_or_else(|| CodecError::Json(format!("unknown chord root {root:?}")))?;
        let q = Quality::ALL
            .into_iter()
            .find(|q| q.name() == quality)
            .ok_or_else(|| CodecError::Json(format!("unknown chord quality {quality:?}")))?;
        Ok(Self::new(r as u8, q))
    }
}

impl fmt::Display for ChordSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.root_name(), self.quality.name())
    }
}

/// A quantized note. `pitch_or_drum` is 1-based (MIDI number + 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QNote {
    pub onset_step: u32,
    pub pitch_or_drum: u8,
    pub dur_steps: u8,
    pub vel_level: u8,
}

impl QNote {
    pub fn new(onset_step: u32, pitch_or_drum: u8, vel_level: u8, dur_steps: u8) -> Self {
        Self { onset_step, pitch_or_drum, dur_steps, vel_level }
    }

    pub fn bar(&self) -> u32 {
        self.onset_step / STEPS_PER_BAR
    }

    /// 1-based position inside the bar.
    pub fn position(&self) -> u8 {
        (self.onset_step % STEPS_PER_BAR) as u8 + 1
    }

    /// MIDI note number (0..=127).
    pub fn midi_pitch(&self) -> u8 {
        self.pitch_or_drum - 1
    }

    fn check(&self, bars: u32) -> Result<(), CodecError> {
        let ok = (1..=128).contains(&self.pitch_or_drum)
            && (1..=VEL_LEVELS).contains(&self.vel_level)
            && (1..=MAX_DUR_STEPS).contains(&self.dur_steps)
            && self.onset_step < bars * STEPS_PER_BAR;
        if ok {
            Ok(())
        } else {
            Err(CodecError::InvariantViolation(format!("note {self:?} outside ranges for {bars} bars")))
        }
    }
}

/// Chord for one half bar (`half` is 0 or 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChordEntry {
    pub bar: u32,
    pub half: u8,
    pub chord: ChordSymbol,
}

impl ChordEntry {
    pub fn new(bar: u32, half: u8, chord: ChordSymbol) -> Self {
        Self { bar, half, chord }
    }

    /// Position token that carries this chord.
    pub fn position(&self) -> u8 {
        if self.half == 0 {
            1
        } else {
            16
        }
    }

    pub fn onset_step(&self) -> u32 {
        self.bar * STEPS_PER_BAR + u32::from(self.position()) - 1
    }
}

/// A quantized multi-track piece in canonical form.
///
/// Construction sorts every note list and drops empty roles, so two scores
/// holding the same multiset of notes compare equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Score {
    pub tempo: TempoClass,
    bars: u32,
    tracks: BTreeMap<Role, Vec<QNote>>,
    chords: Vec<ChordEntry>,
}

impl Score {
    pub fn new(
        tempo: TempoClass,
        bars: u32,
        tracks: BTreeMap<Role, Vec<QNote>>,
        chords: Vec<ChordEntry>,
    ) -> Result<Self, CodecError> {
        let mut tracks = tracks;
        tracks.retain(|_, notes| !notes.is_empty());
        for (role, notes) in tracks.iter_mut() {
            for n in notes.iter() {
                n.check(bars)?;
                if role.is_drum() && n.pitch_or_drum == 0 {
                    return Err(CodecError::InvariantViolation("drum index 0".into()));
                }
            }
            notes.sort();
        }
        let mut chords = chords;
        chords.sort();
        for c in &chords {
            if c.half > 1 || c.bar >= bars {
                return Err(CodecError::InvariantViolation(format!("chord entry {c:?} out of range")));
            }
        }
        for pair in chords.windows(2) {
            if (pair[0].bar, pair[0].half) == (pair[1].bar, pair[1].half) {
                return Err(CodecError::InvariantViolation(format!(
                    "two chords in bar {} half {}",
                    pair[0].bar, pair[0].half
                )));
            }
        }
        Ok(Self { tempo, bars, tracks, chords })
    }

    pub fn empty(tempo: TempoClass, bars: u32) -> Self {
        Self { tempo, bars, tracks: BTreeMap::new(), chords: Vec::new() }
    }

    pub fn bars(&self) -> u32 {
        self.bars
    }

    pub fn tracks(&self) -> &BTreeMap<Role, Vec<QNote>> {
        &self.tracks
    }

    pub fn notes(&self, role: Role) -> &[QNote] {
        self.tracks.get(&role).map_or(&[], Vec::as_slice)
    }

    pub fn roles(&self) -> impl Iterator<Item = Role> + '_ {
        self.tracks.keys().copied()
    }

    pub fn chords(&self) -> &[ChordEntry] {
        &self.chords
    }

    pub fn note_count(&self) -> usize {
        self.tracks.values().map(Vec::len).sum()
    }

    pub fn with_chords(&self, chords: Vec<ChordEntry>) -> Result<Self, CodecError> {
        Self::new(self.tempo, self.bars, self.tracks.clone(), chords)
    }

    /// Keeps only the listed roles; chords are kept when `keep_chords` is set.
    pub fn restrict(&self, roles: &[Role], keep_chords: bool) -> Self {
        let tracks = self.tracks.iter().filter(|(r, _)| roles.contains(r)).map(|(r, n)| (*r, n.clone())).collect();
        Self {
            tempo: self.tempo,
            bars: self.bars,
            tracks,
            chords: if keep_chords { self.chords.clone() } else { Vec::new() },
        }
    }

    /// Union of two scores with the same bar count and tempo class.
    pub fn merge(&self, other: &Score) -> Result<Self, CodecError> {
        if self.bars != other.bars || self.tempo != other.tempo {
            return Err(CodecError::InvariantViolation("merge of scores with different shape".into()));
        }
        let mut tracks = self.tracks.clone();
        for (role, notes) in &other.tracks {
            tracks.entry(*role).or_default().extend_from_slice(notes);
        }
        let mut chords = self.chords.clone();
        chords.extend_from_slice(&other.chords);
        Self::new(self.tempo, self.bars, tracks, chords)
    }
}

/// One element of a token sequence. A note occupies a single element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Bar,
    Pos(u8),
    Track(Role),
    Chord(ChordSymbol),
    Note { pitch_or_drum: u8, vel_level: u8, dur_steps: u8 },
}

impl Token {
    pub fn note(pitch_or_drum: u8, vel_level: u8, dur_steps: u8) -> Self {
        Token::Note { pitch_or_drum, vel_level, dur_steps }
    }

    pub fn is_note(&self) -> bool {
        matches!(self, Token::Note { .. })
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Bar => f.write_str("Bar"),
            Token::Pos(k) => write!(f, "Pos_{k}"),
            Token::Track(r) => write!(f, "Track_{r}"),
            Token::Chord(c) => write!(f, "Chord_{}_{}", c.root_name(), c.quality.name()),
            Token::Note { pitch_or_drum, vel_level, dur_steps } => {
                write!(f, "Note({pitch_or_drum},{vel_level},{dur_steps})")
            }
        }
    }
}

/// A token stream plus its tempo class. Tempo lives beside the tokens, not in them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub tempo: TempoClass,
    pub tokens: Vec<Token>,
}

impl TokenSeq {
    pub fn new(tempo: TempoClass, tokens: Vec<Token>) -> Self {
        Self { tempo, tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bar_count(&self) -> usize {
        self.tokens.iter().filter(|t| **t == Token::Bar).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eighty_four_chords() {
        let all: Vec<_> = ChordSymbol::all().collect();
        assert_eq!(all.len(), 84);
        for (i, c) in all.iter().enumerate() {
            assert_eq!(c.index(), i);
        }
        let mut dedup = all.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 84);
    }

    #[test]
    fn tempo_thresholds() {
        assert_eq!(TempoClass::from_bpm(90.0), TempoClass::Mid);
        assert_eq!(TempoClass::from_bpm(89.9), TempoClass::Low);
        assert_eq!(TempoClass::from_bpm(160.0), TempoClass::Mid);
        assert_eq!(TempoClass::from_bpm(161.0), TempoClass::High);
    }

    #[test]
    fn score_rejects_out_of_range_notes() {
        let mut tracks = BTreeMap::new();
        tracks.insert(Role::Piano, vec![QNote::new(32, 61, 10, 4)]);
        assert!(Score::new(TempoClass::Mid, 1, tracks.clone(), vec![]).is_err());
        tracks.insert(Role::Piano, vec![QNote::new(0, 61, 33, 4)]);
        assert!(Score::new(TempoClass::Mid, 1, tracks, vec![]).is_err());
    }

    #[test]
    fn score_equality_ignores_input_order() {
        let a = vec![QNote::new(0, 61, 10, 4), QNote::new(0, 60, 10, 4)];
        let mut b = a.clone();
        b.reverse();
        let sa = Score::new(TempoClass::Mid, 1, [(Role::Piano, a)].into(), vec![]).unwrap();
        let sb = Score::new(TempoClass::Mid, 1, [(Role::Piano, b)].into(), vec![]).unwrap();
        assert_eq!(sa, sb);
    }
}

//! Score quantization and the multi-track token codec.
//!
//! A [`Score`] is encoded bar by bar. Every occupied timestep gets one
//! `Pos` token; the half-bar chord (if any) follows `Pos(1)` or `Pos(16)`;
//! then each role with onsets at that timestep contributes a `Track` token
//! followed by its notes, one token per note.

mod baseline;
pub mod grammar;
mod jsonl;
mod quantize;
mod types;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use baseline::{encode_baseline, BaselineStyle};
pub use jsonl::{read_jsonl, seq_from_json, seq_to_json, write_jsonl};
pub use quantize::{quantize, velocity_level, QuantizeError};
pub use types::{
    ChordEntry, ChordSymbol, QNote, Quality, Role, Score, TempoClass, Token, TokenSeq, MAX_DUR_STEPS, ROOT_NAMES,
    STEPS_PER_BAR, STEPS_PER_HALF_BAR, VEL_LEVELS,
};

use grammar::Slot;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("score invariant violated: {0}")]
    InvariantViolation(String),
    #[error("grammar error at token {position}: expected one of {expected:?}")]
    GrammarError { position: usize, expected: Vec<&'static str> },
    #[error("chord at token {position} does not directly follow Pos_1 or Pos_16")]
    ChordPlacementError { position: usize },
    #[error("note at token {position} is not inside a track group")]
    NoteOutsideTrack { position: usize },
    #[error("token value out of range at {position}: {detail}")]
    TokenRange { position: usize, detail: String },
    #[error("condition role set is empty")]
    EmptyCondition,
    #[error("json: {0}")]
    Json(String),
}

/// Encodes a score as a token sequence in canonical order.
pub fn encode(s: &Score) -> TokenSeq {
    // Per bar: position -> role -> notes. Score keeps notes sorted by
    // (onset, pitch, duration, velocity), so groups come out sorted.
    let mut chord_at: BTreeMap<u32, ChordSymbol> = BTreeMap::new();
    for c in s.chords() {
        chord_at.insert(c.onset_step(), c.chord);
    }
    let mut groups: BTreeMap<u32, BTreeMap<Role, Vec<&QNote>>> = BTreeMap::new();
    for (role, notes) in s.tracks() {
        for n in notes {
            groups.entry(n.onset_step).or_default().entry(*role).or_default().push(n);
        }
    }
    let occupied: BTreeSet<u32> = groups.keys().chain(chord_at.keys()).copied().collect();

    let mut tokens = Vec::new();
    let mut iter = occupied.into_iter().peekable();
    for bar in 0..s.bars() {
        tokens.push(Token::Bar);
        while let Some(step) = iter.next_if(|st| *st / STEPS_PER_BAR == bar) {
            tokens.push(Token::Pos((step % STEPS_PER_BAR) as u8 + 1));
            if let Some(chord) = chord_at.get(&step) {
                tokens.push(Token::Chord(*chord));
            }
            if let Some(by_role) = groups.get(&step) {
                for (role, notes) in by_role {
                    tokens.push(Token::Track(*role));
                    tokens.extend(notes.iter().map(|n| Token::note(n.pitch_or_drum, n.vel_level, n.dur_steps)));
                }
            }
        }
    }
    TokenSeq::new(s.tempo, tokens)
}

fn expected(slot: Slot) -> Vec<&'static str> {
    match slot {
        Slot::Start => vec!["Bar"],
        Slot::AfterBar => vec!["Bar", "Pos"],
        Slot::AfterPos(_) => vec!["Chord", "Track"],
        Slot::AfterChord => vec!["Track", "Pos", "Bar"],
        Slot::AfterTrack(_) => vec!["Note"],
        Slot::AfterNote(_) => vec!["Note", "Track", "Pos", "Bar"],
    }
}

/// Decodes a token sequence back into a score.
///
/// Positions, track groups and notes may appear in any order within their
/// enclosing group; the result is canonicalized.
pub fn decode(t: &TokenSeq) -> Result<Score, CodecError> {
    let mut slot = Slot::Start;
    let mut bar: u32 = 0;
    let mut pos: u8 = 0;
    let mut role: Option<Role> = None;
    let mut tracks: BTreeMap<Role, Vec<QNote>> = BTreeMap::new();
    let mut chords: Vec<ChordEntry> = Vec::new();
    let mut chord_halves: BTreeSet<(u32, u8)> = BTreeSet::new();

    for (i, token) in t.tokens.iter().enumerate() {
        let grammar = |slot| CodecError::GrammarError { position: i, expected: expected(slot) };
        slot = match (*token, slot) {
            (Token::Bar, s) if s.can_end() => {
                bar += 1;
                Slot::AfterBar
            }
            (Token::Pos(k), Slot::AfterBar | Slot::AfterChord | Slot::AfterNote(_)) => {
                if k == 0 || u32::from(k) > STEPS_PER_BAR {
                    return Err(CodecError::TokenRange { position: i, detail: format!("Pos_{k}") });
                }
                pos = k;
                Slot::AfterPos(k)
            }
            (Token::Chord(c), Slot::AfterPos(k)) if k == 1 || k == 16 => {
                let half = u8::from(k == 16);
                if !chord_halves.insert((bar - 1, half)) {
                    return Err(CodecError::ChordPlacementError { position: i });
                }
                chords.push(ChordEntry::new(bar - 1, half, c));
                Slot::AfterChord
            }
            (Token::Chord(_), _) => return Err(CodecError::ChordPlacementError { position: i }),
            (Token::Track(r), Slot::AfterPos(_) | Slot::AfterChord | Slot::AfterNote(_)) => {
                role = Some(r);
                Slot::AfterTrack(r)
            }
            (Token::Note { pitch_or_drum, vel_level, dur_steps }, Slot::AfterTrack(_) | Slot::AfterNote(_)) => {
                let r = role.expect("track slot implies a role");
                let n = QNote::new((bar - 1) * STEPS_PER_BAR + u32::from(pos) - 1, pitch_or_drum, vel_level, dur_steps);
                if !(1..=128).contains(&pitch_or_drum)
                    || !(1..=VEL_LEVELS).contains(&vel_level)
                    || !(1..=MAX_DUR_STEPS).contains(&dur_steps)
                {
                    return Err(CodecError::TokenRange { position: i, detail: token.to_string() });
                }
                tracks.entry(r).or_default().push(n);
                Slot::AfterNote(r)
            }
            (Token::Note { .. }, _) => return Err(CodecError::NoteOutsideTrack { position: i }),
            (_, s) => return Err(grammar(s)),
        };
    }
    if !slot.can_end() {
        return Err(CodecError::GrammarError { position: t.tokens.len(), expected: expected(slot) });
    }
    Score::new(t.tempo, bar, tracks, chords)
}

/// Splits a score into a condition side (the given roles plus every chord)
/// and a target side (all other roles, no chords).
pub fn split_condition_target(s: &Score, condition_roles: &[Role]) -> Result<(TokenSeq, TokenSeq), CodecError> {
    if condition_roles.is_empty() {
        return Err(CodecError::EmptyCondition);
    }
    let target_roles: Vec<Role> = Role::ALL.into_iter().filter(|r| !condition_roles.contains(r)).collect();
    let condition = s.restrict(condition_roles, true);
    let target = s.restrict(&target_roles, false);
    Ok((encode(&condition), encode(&target)))
}

/// Roles of the default melody-to-others task.
pub const MELODY_CONDITION: [Role; 1] = [Role::Melody];

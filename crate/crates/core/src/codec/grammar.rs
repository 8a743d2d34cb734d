//! Token grammar.
//!
//! ```text
//! sequence := (Bar group*)*
//! group    := Pos Chord? (Track Note+)*      -- at least a chord or one track
//! ```
//!
//! A chord may only follow `Pos(1)` or `Pos(16)`. [`Tracker`] follows the
//! strict canonical form emitted by the encoder (increasing positions, tracks
//! in role order) and reports which tokens may come next. Generation uses it
//! to mask the output distribution.

use super::types::{Role, Token, STEPS_PER_BAR};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Slot {
    Start,
    AfterBar,
    AfterPos(u8),
    AfterChord,
    AfterTrack(Role),
    AfterNote(Role),
}

impl Slot {
    pub(crate) fn can_end(self) -> bool {
        matches!(self, Slot::Start | Slot::AfterBar | Slot::AfterChord | Slot::AfterNote(_))
    }
}

/// Which token kinds the strict grammar accepts next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NextTokens {
    pub bar: bool,
    /// Positions `min_pos..=32` are allowed when `Some(min_pos)`.
    pub pos_from: Option<u8>,
    pub chord: bool,
    pub tracks: Vec<Role>,
    /// Role whose note vocabulary is allowed next.
    pub note: Option<Role>,
}

impl NextTokens {
    pub fn allows(&self, token: &Token) -> bool {
        match token {
            Token::Bar => self.bar,
            Token::Pos(k) => self.pos_from.is_some_and(|m| *k >= m && u32::from(*k) <= STEPS_PER_BAR),
            Token::Chord(_) => self.chord,
            Token::Track(r) => self.tracks.contains(r),
            Token::Note { .. } => self.note.is_some(),
        }
    }

    pub fn is_empty(&self) -> bool {
        !self.bar && self.pos_from.is_none() && !self.chord && self.tracks.is_empty() && self.note.is_none()
    }
}

/// Restrictions layered on top of the grammar during generation.
#[derive(Debug, Clone)]
pub struct GrammarLimits {
    pub roles: Vec<Role>,
    pub allow_chords: bool,
    pub max_notes_per_group: usize,
}

impl Default for GrammarLimits {
    fn default() -> Self {
        Self { roles: Role::ALL.to_vec(), allow_chords: true, max_notes_per_group: 16 }
    }
}

/// Incremental strict-grammar state.
#[derive(Debug, Clone)]
pub struct Tracker {
    slot: Slot,
    bars: usize,
    pos: u8,
    last_role: Option<Role>,
    notes_in_group: usize,
    limits: GrammarLimits,
}

impl Tracker {
    pub fn new(limits: GrammarLimits) -> Self {
        Self { slot: Slot::Start, bars: 0, pos: 0, last_role: None, notes_in_group: 0, limits }
    }

    pub fn bars(&self) -> usize {
        self.bars
    }

    pub fn can_end(&self) -> bool {
        self.slot.can_end()
    }

    fn tracks_after(&self, last: Option<Role>) -> Vec<Role> {
        self.limits.roles.iter().copied().filter(|r| last.is_none_or(|l| *r > l)).collect()
    }

    pub fn next(&self) -> NextTokens {
        let pos_from = |after: u8| (u32::from(after) < STEPS_PER_BAR).then_some(after + 1);
        match self.slot {
            Slot::Start => NextTokens { bar: true, pos_from: None, chord: false, tracks: vec![], note: None },
            Slot::AfterBar => NextTokens { bar: true, pos_from: Some(1), chord: false, tracks: vec![], note: None },
            Slot::AfterPos(k) => NextTokens {
                bar: false,
                pos_from: None,
                chord: self.limits.allow_chords && (k == 1 || k == 16),
                tracks: self.tracks_after(None),
                note: None,
            },
            Slot::AfterChord => NextTokens {
                bar: true,
                pos_from: pos_from(self.pos),
                chord: false,
                tracks: self.tracks_after(None),
                note: None,
            },
            Slot::AfterTrack(r) => {
                NextTokens { bar: false, pos_from: None, chord: false, tracks: vec![], note: Some(r) }
            }
            Slot::AfterNote(r) => NextTokens {
                bar: true,
                pos_from: pos_from(self.pos),
                chord: false,
                tracks: self.tracks_after(Some(r)),
                note: (self.notes_in_group < self.limits.max_notes_per_group).then_some(r),
            },
        }
    }

    /// Advances the state; returns false (leaving the state unchanged) when
    /// the token is not allowed.
    pub fn push(&mut self, token: &Token) -> bool {
        if !self.next().allows(token) {
            return false;
        }
        match *token {
            Token::Bar => {
                self.bars += 1;
                self.pos = 0;
                self.slot = Slot::AfterBar;
            }
            Token::Pos(k) => {
                self.pos = k;
                self.last_role = None;
                self.slot = Slot::AfterPos(k);
            }
            Token::Chord(_) => self.slot = Slot::AfterChord,
            Token::Track(r) => {
                self.last_role = Some(r);
                self.notes_in_group = 0;
                self.slot = Slot::AfterTrack(r);
            }
            Token::Note { .. } => {
                let r = self.last_role.expect("note accepted only inside a track group");
                self.notes_in_group += 1;
                self.slot = Slot::AfterNote(r);
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::types::{ChordSymbol, Quality};

    #[test]
    fn chord_only_after_pos_one_or_sixteen() {
        let mut t = Tracker::new(GrammarLimits::default());
        assert!(t.push(&Token::Bar));
        assert!(t.push(&Token::Pos(3)));
        assert!(!t.push(&Token::Chord(ChordSymbol::new(0, Quality::Major))));
        let mut t = Tracker::new(GrammarLimits::default());
        t.push(&Token::Bar);
        t.push(&Token::Pos(16));
        assert!(t.push(&Token::Chord(ChordSymbol::new(0, Quality::Major))));
    }

    #[test]
    fn canonical_track_order_and_positions() {
        let mut t = Tracker::new(GrammarLimits::default());
        for tok in [Token::Bar, Token::Pos(5), Token::Track(Role::Piano), Token::note(60, 1, 1)] {
            assert!(t.push(&tok));
        }
        assert!(!t.push(&Token::Track(Role::Drum)));
        assert!(!t.push(&Token::Pos(5)));
        assert!(t.push(&Token::Track(Role::Bass)));
        assert!(!t.can_end());
        assert!(t.push(&Token::note(40, 1, 1)));
        assert!(t.can_end());
    }

    #[test]
    fn note_cap_forces_progress() {
        let limits = GrammarLimits { max_notes_per_group: 2, ..GrammarLimits::default() };
        let mut t = Tracker::new(limits);
        for tok in [Token::Bar, Token::Pos(32), Token::Track(Role::Bass), Token::note(1, 1, 1), Token::note(2, 1, 1)] {
            assert!(t.push(&tok));
        }
        let next = t.next();
        assert!(next.note.is_none());
        assert!(next.pos_from.is_none());
        assert!(next.tracks.is_empty());
        assert!(next.bar);
    }
}

use std::collections::{BTreeMap, BTreeSet};

use mumidi::codec::{decode, encode, encode_baseline, BaselineStyle, Role, Score, Token};
use mumidi::midi_io::{parse_smf, write_smf};
use mumidi::pipeline::{compress_tracks, extract_melody};
use mumidi::render::render_score_to_midi;
use mumidi::synth::{random_raw_midi, random_score, ScoreGen};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn score(seed: u64, cfg: &ScoreGen) -> Score {
    random_score(&mut ChaCha8Rng::seed_from_u64(seed), cfg)
}

/// Token count from first principles: one `Bar` per bar, one `Pos` per
/// occupied step, one `Chord` per chord, one `Track` per (step, role) group
/// and one token per note.
fn expected_len(s: &Score) -> usize {
    let mut steps: BTreeSet<u32> = s.chords().iter().map(|c| c.onset_step()).collect();
    let mut groups = BTreeSet::new();
    for (role, notes) in s.tracks() {
        for n in notes {
            steps.insert(n.onset_step);
            groups.insert((n.onset_step, *role));
        }
    }
    s.bars() as usize + steps.len() + s.chords().len() + groups.len() + s.note_count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn decode_inverts_encode(seed in any::<u64>()) {
        let s = score(seed, &ScoreGen::default());
        let seq = encode(&s);
        prop_assert_eq!(decode(&seq).unwrap(), s);
    }

    #[test]
    fn chords_follow_half_bar_positions(seed in any::<u64>()) {
        let seq = encode(&score(seed, &ScoreGen::default()));
        for (i, t) in seq.tokens.iter().enumerate() {
            if matches!(t, Token::Chord(_)) {
                prop_assert!(matches!(seq.tokens[i - 1], Token::Pos(1) | Token::Pos(16)));
            }
        }
    }

    #[test]
    fn token_count_matches_oracle(seed in any::<u64>()) {
        let s = score(seed, &ScoreGen::default());
        prop_assert_eq!(encode(&s).len(), expected_len(&s));
        let remi = s.bars() as usize + 2 * s.chords().len() + 5 * s.note_count();
        prop_assert_eq!(encode_baseline(&s, BaselineStyle::Remi), remi);
    }

    #[test]
    fn mumidi_never_longer_than_baselines(seed in any::<u64>()) {
        let s = score(seed, &ScoreGen { with_chords: false, ..ScoreGen::default() });
        let n = encode(&s).len();
        prop_assert!(n <= encode_baseline(&s, BaselineStyle::Remi));
        prop_assert!(n <= encode_baseline(&s, BaselineStyle::MidiLike));
    }

    #[test]
    fn note_order_does_not_matter(seed in any::<u64>()) {
        let s = score(seed, &ScoreGen::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut tracks: BTreeMap<Role, Vec<_>> = s.tracks().clone();
        for notes in tracks.values_mut() {
            notes.shuffle(&mut rng);
        }
        let mut chords = s.chords().to_vec();
        chords.shuffle(&mut rng);
        let shuffled = Score::new(s.tempo, s.bars(), tracks, chords).unwrap();
        prop_assert_eq!(encode(&shuffled), encode(&s));
    }

    #[test]
    fn render_then_quantize_is_identity(seed in any::<u64>()) {
        let s = score(seed, &ScoreGen { render_safe: true, ..ScoreGen::default() });
        let bytes = write_smf(&render_score_to_midi(&s)).unwrap();
        let raw = parse_smf(&bytes).unwrap();
        let back = compress_tracks(&raw, extract_melody(&raw)).unwrap();
        prop_assert_eq!(back, s.with_chords(vec![]).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn smf_write_parse_roundtrip(seed in any::<u64>()) {
        let raw = random_raw_midi(&mut ChaCha8Rng::seed_from_u64(seed));
        let bytes = write_smf(&raw).unwrap();
        prop_assert_eq!(parse_smf(&bytes).unwrap(), raw);
    }
}

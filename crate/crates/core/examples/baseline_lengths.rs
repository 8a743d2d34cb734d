//! Compares target sequence lengths of MuMIDI against REMI and MIDI-like
//! encodings on a synthetic pop corpus.
//!
//! cargo run --release --example baseline_lengths -- [pieces]

use anyhow::Result;
use mumidi::codec::{encode_baseline, split_condition_target, BaselineStyle, MELODY_CONDITION};
use mumidi::synth::{pop_piece, PopGen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let n: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(500);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut mumidi, mut remi, mut midilike, mut ratio) = (0usize, 0usize, 0usize, 0.0);
    for _ in 0..n {
        let score = pop_piece(&mut rng, &PopGen::default());
        let (_, tgt) = split_condition_target(&score, &MELODY_CONDITION)?;
        let target =
            score.restrict(&score.roles().filter(|r| !MELODY_CONDITION.contains(r)).collect::<Vec<_>>(), false);
        let r = encode_baseline(&target, BaselineStyle::Remi);
        mumidi += tgt.len();
        remi += r;
        midilike += encode_baseline(&target, BaselineStyle::MidiLike);
        ratio += tgt.len() as f64 / r as f64;
    }
    let mean = |x: usize| x as f64 / n as f64;
    println!("{n} pieces, mean target length");
    println!("  MuMIDI    {:>8.1}", mean(mumidi));
    println!("  REMI      {:>8.1}", mean(remi));
    println!("  MIDI-like {:>8.1}", mean(midilike));
    println!("mean MuMIDI/REMI ratio {:.3}", ratio / n as f64);
    Ok(())
}

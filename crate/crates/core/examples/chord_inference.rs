//! Infers the half-bar chord lane of a synthetic piece and compares it with
//! the chords the piece was written over.

use anyhow::Result;
use mumidi::pipeline::{infer_chords, ChordLane};
use mumidi::synth::{pop_piece, PopGen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let score = pop_piece(&mut ChaCha8Rng::seed_from_u64(5), &PopGen { bars: 8, ..PopGen::default() });
    let written = ChordLane::from_score(&score).expect("generator writes chords");
    let inferred = infer_chords(&score.restrict(&score.roles().collect::<Vec<_>>(), false))?;
    let mut hits = 0;
    for (i, (w, g)) in written.entries().iter().zip(inferred.entries()).enumerate() {
        hits += usize::from(w == g);
        println!("bar {:>2} half {}: written {:<12} inferred {}", i / 2, i % 2, w.to_string(), g);
    }
    println!("{hits}/{} half bars agree", written.entries().len());
    Ok(())
}

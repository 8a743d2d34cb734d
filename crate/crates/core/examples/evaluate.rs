//! Objective metrics of one synthetic accompaniment against another written
//! over the same chords, and of a piece against itself.

use anyhow::Result;
use mumidi::codec::{Role, MELODY_CONDITION};
use mumidi::metrics::{evaluate, ChordGranularity};
use mumidi::pipeline::ChordLane;
use mumidi::synth::{pop_piece, PopGen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let cfg = PopGen { bars: 8, ..PopGen::default() };
    let a = pop_piece(&mut ChaCha8Rng::seed_from_u64(1), &cfg);
    let b = pop_piece(&mut ChaCha8Rng::seed_from_u64(2), &cfg);
    let others: Vec<Role> = Role::ALL.into_iter().filter(|r| !MELODY_CONDITION.contains(r)).collect();
    let (ta, tb) = (a.restrict(&others, false), b.restrict(&others, false));
    let lane = ChordLane::from_score(&a).expect("generator writes chords");
    let lane_b = ChordLane::from_score(&b).expect("generator writes chords");
    println!("b's accompaniment vs a: {}", evaluate(&tb, &ta, &lane, ChordGranularity::HalfBar, None)?.to_json());
    println!(
        "b's accompaniment vs its own chords: {}",
        evaluate(&tb, &tb, &lane_b, ChordGranularity::HalfBar, None)?.to_json()
    );
    Ok(())
}

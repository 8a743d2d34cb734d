//! Encodes a hand-built piano and bass bar into MuMIDI tokens and decodes
//! it back.

use anyhow::Result;
use mumidi::codec::{decode, encode, seq_to_json};
use mumidi::synth::two_track_excerpt;

fn main() -> Result<()> {
    let score = two_track_excerpt();
    let seq = encode(&score);
    let text: Vec<String> = seq.tokens.iter().map(ToString::to_string).collect();
    println!("{} tokens:\n{}", seq.len(), text.join(" "));
    println!("json: {}", seq_to_json(&seq));
    println!("decodes back to the same score: {}", decode(&seq)? == score);
    Ok(())
}

//! Parses a Standard MIDI File, prints a summary, and writes it back out.
//! Without arguments a synthetic file is used.
//!
//! cargo run --example midi_roundtrip -- [in.mid] [out.mid]

use anyhow::Result;
use mumidi::midi_io::{parse_smf, write_smf};
use mumidi::synth::{pop_midi, PopGen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let bytes = match args.next() {
        Some(path) => std::fs::read(path)?,
        None => write_smf(&pop_midi(&mut ChaCha8Rng::seed_from_u64(0), &PopGen::default(), 96.0))?,
    };
    let raw = parse_smf(&bytes)?;
    println!(
        "{} ticks/beat, {:.2} bpm, {} time signature(s)",
        raw.ticks_per_beat,
        raw.tempo_bpm,
        raw.time_signatures.len()
    );
    for t in &raw.tracks {
        println!("  {:<10} program {:>3} drum {:<5} {} notes", t.name, t.program, t.is_drum, t.events.len());
    }
    let again = write_smf(&raw)?;
    println!("re-parse identical: {}", parse_smf(&again)? == raw);
    if let Some(out) = args.next() {
        std::fs::write(&out, again)?;
        println!("wrote {out}");
    }
    Ok(())
}

//! Writes a seeded corpus of synthetic six-track pop MIDI files.
//!
//! cargo run --example synth_corpus -- <dir> [files] [seed]

use anyhow::{Context, Result};
use mumidi::synth::{write_pop_corpus, PopGen};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().context("usage: synth_corpus <dir> [files] [seed]")?;
    let files: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(25);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let paths = write_pop_corpus(dir.as_ref(), files, &PopGen { bars: 8, ..PopGen::default() }, seed)?;
    println!("wrote {} files to {dir}", paths.len());
    Ok(())
}

//! Runs the cleansing pipeline over a MIDI directory and writes JSONL
//! shards. Without arguments a synthetic corpus is generated first.
//!
//! cargo run --release --example preprocess_corpus -- [midi_dir] [out_dir]

use anyhow::Result;
use mumidi::pipeline::{run_pipeline, write_dataset, PipelineConfig};
use mumidi::synth::{write_pop_corpus, PopGen};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let tmp = std::env::temp_dir().join("mumidi-preprocess-example");
    let dir = match args.next() {
        Some(d) => d.into(),
        None => {
            let d = tmp.join("corpus");
            write_pop_corpus(&d, 25, &PopGen { bars: 8, ..PopGen::default() }, 0)?;
            d
        }
    };
    let out = args.next().map(Into::into).unwrap_or_else(|| tmp.join("shards"));
    let cfg = PipelineConfig::default();
    let ds = run_pipeline(&dir, &cfg)?;
    for s in &ds.skipped {
        println!("skipped {} ({:?}): {}", s.file, s.segment, s.reason);
    }
    let shards = write_dataset(&ds, &out, cfg.shard_size, &serde_json::json!({"example": "preprocess_corpus"}))?;
    println!("{} pieces, {} bars, {:.3} hours", ds.stats.pieces, ds.stats.bars, ds.stats.hours);
    println!("{} shard files in {}", shards.len(), out.display());
    Ok(())
}

//! Samples an accompaniment for a synthetic melody and writes JSONL and a
//! MIDI render. Uses the given checkpoint, or briefly trains a tiny model.
//!
//! cargo run --release --example generate -- [model.ckpt] [out_stem]

use anyhow::Result;
use mumidi::codec::{decode, split_condition_target, write_jsonl, MELODY_CONDITION};
use mumidi::midi_io::write_smf;
use mumidi::model::{train, AdamState, Checkpoint, Model, ModelConfig, PieceData, SamplingConfig, TrainConfig};
use mumidi::render::render_score_to_midi;
use mumidi::synth::{pop_piece, PopGen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let score = pop_piece(&mut rng, &PopGen { bars: 4, ..PopGen::default() });
    let (cond, tgt) = split_condition_target(&score, &MELODY_CONDITION)?;
    let model = match args.next() {
        Some(path) => Checkpoint::load(path.as_ref())?.model,
        None => {
            let mut model = Model::new(ModelConfig::tiny(), 0)?;
            let mut adam = AdamState::new(model.params());
            let tc = TrainConfig { steps: 300, warmup: 50, lr_scale: 2.0, ..TrainConfig::default() };
            let report = train(&mut model, &[PieceData::new(&cond, &tgt)?], &mut adam, &tc)?;
            println!(
                "trained {} steps, last loss {:.3}",
                report.losses.len(),
                report.losses.last().unwrap_or(&f64::NAN)
            );
            model
        }
    };
    let cfg = SamplingConfig { top_k: 8, temperature: 0.9, seed: 1, ..SamplingConfig::default() };
    let gen = model.generate(&cond, &cfg)?;
    let gen_score = decode(&gen)?;
    println!("{} tokens over {} bars, {} notes", gen.len(), gen.bar_count(), gen_score.note_count());
    let full = score.restrict(&MELODY_CONDITION, true).merge(&gen_score)?;
    let stem = args.next().unwrap_or_else(|| std::env::temp_dir().join("mumidi-generate").display().to_string());
    write_jsonl(std::fs::File::create(format!("{stem}.jsonl"))?, &[gen])?;
    std::fs::write(format!("{stem}.mid"), write_smf(&render_score_to_midi(&full))?)?;
    println!("wrote {stem}.jsonl and {stem}.mid");
    Ok(())
}

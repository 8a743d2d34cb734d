//! Overfits a small model on one synthetic four-bar piece, then samples an
//! accompaniment for its melody and writes a checkpoint.
//!
//! cargo run --release --example train_tiny -- [steps] [out.ckpt]

use anyhow::Result;
use mumidi::codec::{split_condition_target, MELODY_CONDITION};
use mumidi::metrics::PplMode;
use mumidi::model::{train, AdamState, Checkpoint, Model, ModelConfig, PieceData, SamplingConfig, TrainConfig};
use mumidi::synth::{pop_piece, PopGen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(600);
    let out = args.next();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let score = pop_piece(&mut rng, &PopGen { bars: 4, ..PopGen::default() });
    let (cond, tgt) = split_condition_target(&score, &MELODY_CONDITION)?;
    let piece = PieceData::new(&cond, &tgt)?;
    println!("condition {} tokens, target {} tokens", cond.tokens.len(), tgt.tokens.len());

    let cfg = ModelConfig { d_model: 64, heads: 4, ffn_size: 128, ..ModelConfig::tiny() };
    let mut model = Model::new(cfg, 0)?;
    let tc = TrainConfig { steps, warmup: 100, lr_scale: 2.0, ..TrainConfig::default() };
    let mut adam = AdamState::new(model.params());
    let start = std::time::Instant::now();
    let report = train(&mut model, std::slice::from_ref(&piece), &mut adam, &tc)?;
    println!("{} steps in {:.1?}", report.losses.len(), start.elapsed());
    for (i, chunk) in report.losses.chunks(report.losses.len().div_ceil(10).max(1)).enumerate() {
        println!("  block {i}: mean loss {:.4}", chunk.iter().sum::<f64>() / chunk.len() as f64);
    }
    let ppl = model.perplexity(std::slice::from_ref(&piece), PplMode::PerStep)?;
    println!("teacher-forcing per-step perplexity {ppl:.4}");

    let gen = model.generate(&cond, &SamplingConfig { temperature: 0.0, ..SamplingConfig::default() })?;
    println!("greedy sample: {} tokens, {} bars", gen.tokens.len(), gen.bar_count());
    println!("matches target: {}", gen == tgt);

    if let Some(path) = out {
        let ck = Checkpoint { adam: Some(adam), train_config: Some(tc), ..Checkpoint::new(model) };
        ck.save(path.as_ref())?;
        println!("wrote {path}");
    }
    Ok(())
}

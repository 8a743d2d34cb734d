//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use mumidi::codec::{
    decode, encode, encode_baseline, seq_from_json, seq_to_json, split_condition_target, BaselineStyle, ChordSymbol,
    Quality, Role, Token, MELODY_CONDITION,
};
use mumidi::model::{
    param_count, train, AdamState, Checkpoint, Model, ModelConfig, PieceData, SamplingConfig, TrainConfig,
    MAX_GENERATED_BARS,
};
use mumidi::synth::{pop_piece, random_score, two_track_excerpt, write_pop_corpus, PopGen, ScoreGen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[allow(dead_code, unused_imports)]
#[path = "chord_oracle.rs"]
mod chord_oracle;
#[allow(dead_code, unused_imports)]
#[path = "pipeline_fixtures.rs"]
mod pipeline_fixtures;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Runs named checks that signal failure by panicking.
fn checks(list: &[(&str, fn())]) -> Result<(), String> {
    for (name, f) in list {
        catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
            let detail = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            format!("{name}: {detail}")
        })?;
    }
    Ok(())
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    ensure(start.elapsed() < limit, || format!("took {:.1?}, limit {limit:?}", start.elapsed()))
}

fn codec_roundtrip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut chords = 0;
    for i in 0..1000 {
        let s = random_score(&mut rng, &ScoreGen::default());
        let seq = encode(&s);
        let parsed = seq_from_json(&seq_to_json(&seq)).map_err(|e| format!("score {i}: {e}"))?;
        ensure(parsed == seq, || format!("score {i}: JSON round trip differs"))?;
        let back = decode(&seq).map_err(|e| format!("score {i}: {e}"))?;
        ensure(back == s, || format!("score {i}: decode(encode(s)) != s"))?;
        for (k, t) in seq.tokens.iter().enumerate() {
            if matches!(t, Token::Chord(_)) {
                chords += 1;
                ensure(matches!(seq.tokens[k - 1], Token::Pos(1) | Token::Pos(16)), || {
                    format!("score {i}: chord at token {k} not after Pos 1/16")
                })?;
            }
        }
    }
    within(start, Duration::from_secs(10))?;
    Ok(format!("1000 scores, {chords} chords, {:.2?}", start.elapsed()))
}

fn length_dominance() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ratio = 0.0;
    let n = 500;
    for i in 0..n {
        let score = pop_piece(&mut rng, &PopGen::default());
        let (_, tgt) = split_condition_target(&score, &MELODY_CONDITION).map_err(|e| e.to_string())?;
        let target =
            score.restrict(&score.roles().filter(|r| !MELODY_CONDITION.contains(r)).collect::<Vec<_>>(), false);
        let remi = encode_baseline(&target, BaselineStyle::Remi);
        let midilike = encode_baseline(&target, BaselineStyle::MidiLike);
        ensure(tgt.len() <= remi && tgt.len() <= midilike, || {
            format!("piece {i}: MuMIDI {} vs REMI {remi}, MIDI-like {midilike}", tgt.len())
        })?;
        ratio += tgt.len() as f64 / remi as f64;
    }
    let mean = ratio / n as f64;
    ensure((0.40..=0.70).contains(&mean), || format!("mean ratio {mean:.3} outside [0.40, 0.70]"))?;
    within(start, Duration::from_secs(30))?;
    Ok(format!("mean MuMIDI/REMI {mean:.3} over {n} pieces, {:.2?}", start.elapsed()))
}

fn two_track_fixture() -> Outcome {
    let seq = encode(&two_track_excerpt());
    let head =
        [Token::Bar, Token::Pos(1), Token::Chord(ChordSymbol::new(0, Quality::Major)), Token::Track(Role::Piano)];
    ensure(seq.tokens.starts_with(&head), || format!("starts {:?}", &seq.tokens[..4.min(seq.len())]))?;
    let mut counts = BTreeMap::new();
    let mut role = None;
    for t in &seq.tokens {
        match t {
            Token::Track(r) => role = Some(*r),
            Token::Note { .. } => *counts.entry(role).or_insert(0) += 1,
            _ => {}
        }
    }
    let (piano, bass) = (counts.get(&Some(Role::Piano)).copied(), counts.get(&Some(Role::Bass)).copied());
    ensure(piano == Some(10) && bass == Some(5) && counts.len() == 2, || format!("note counts {counts:?}"))?;
    Ok(format!("{} tokens, 10 piano and 5 bass notes", seq.len()))
}

fn viterbi_oracle() -> Outcome {
    let start = Instant::now();
    checks(&[
        ("exhaustive search", chord_oracle::viterbi_matches_exhaustive_search),
        ("C major triad", chord_oracle::c_major_triad_gives_c_major_twice),
    ])?;
    within(start, Duration::from_secs(10))?;
    Ok(format!("200 fixtures, {:.2?}", start.elapsed()))
}

fn model_suite() -> Outcome {
    let start = Instant::now();
    checks(&[
        ("gradient check", model_checks::gradients_match_finite_differences),
        ("segment recurrence", model_checks::segment_recurrence_equals_full_context),
        ("bar mask", model_checks::cross_attention_sees_only_its_bar),
        ("memory gradient", model_checks::memory_is_a_constant),
        ("attribute heads", model_checks::attribute_heads_only_learn_from_note_steps),
        ("overfit", model_checks::overfits_one_four_bar_piece),
    ])?;
    within(start, Duration::from_secs(300))?;
    Ok(format!("(a)-(e) passed, {:.1?}", start.elapsed()))
}

fn parameter_count() -> Outcome {
    let c = param_count(&ModelConfig::default());
    println!("{c}");
    let rel = (c.total as f64 - 49.01e6) / 49.01e6;
    ensure(rel.abs() <= 0.15, || format!("{} parameters, {:+.1}% from 49.01M", c.total, rel * 100.0))?;
    Ok(format!("{} parameters, {:+.1}% from 49.01M", c.total, rel * 100.0))
}

fn metrics_suite() -> Outcome {
    checks(&[
        ("self overlap", metrics_oracles::overlap_with_itself_is_one),
        ("analytic overlap", metrics_oracles::analytic_overlap_of_step_densities),
        ("chord accuracy", metrics_oracles::chord_accuracy_counts_matching_cells),
        ("self evaluation", metrics_oracles::self_evaluation_is_all_ones),
        ("uniform perplexity", model_checks::uniform_logits_give_closed_form_perplexity),
    ])?;
    Ok("all fixtures match".into())
}

fn generation_contract() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let conditions: Vec<_> = (0..10)
        .map(|i| {
            let bars = if i == 9 { 40 } else { 2 + i % 3 };
            let s = pop_piece(&mut rng, &PopGen { bars, ..PopGen::default() });
            split_condition_target(&s, &MELODY_CONDITION).map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    let data: Vec<_> = conditions[..3]
        .iter()
        .map(|(c, t)| PieceData::new(c, t))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mut model = Model::new(ModelConfig::tiny(), 0).map_err(|e| e.to_string())?;
    let mut adam = AdamState::new(model.params());
    let tc = TrainConfig { steps: 60, warmup: 20, ..TrainConfig::default() };
    train(&mut model, &data, &mut adam, &tc).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("tiny.ckpt");
    Checkpoint::new(model).save(&path).map_err(|e| e.to_string())?;

    let sample = |seed: u64| -> Result<Vec<mumidi::codec::TokenSeq>, String> {
        let model = Checkpoint::load(&path).map_err(|e| e.to_string())?.model;
        (0..100)
            .map(|i| {
                let cfg = SamplingConfig { seed: seed + i as u64, ..SamplingConfig::default() };
                model.generate(&conditions[i % conditions.len()].0, &cfg).map_err(|e| format!("sample {i}: {e}"))
            })
            .collect()
    };
    let first = sample(100)?;
    let mut longest = 0;
    for (i, g) in first.iter().enumerate() {
        let s = decode(g).map_err(|e| format!("sample {i}: {e}"))?;
        longest = longest.max(g.bar_count());
        ensure(s.bars() as usize <= MAX_GENERATED_BARS, || format!("sample {i}: {} bars", s.bars()))?;
    }
    ensure(sample(100)? == first, || "resampling with the same seeds differs".into())?;
    Ok(format!("100 samples decode, longest {longest} bars, reproducible, {:.1?}", start.elapsed()))
}

fn dir_bytes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let p = e.map_err(|e| e.to_string())?.path();
        out.insert(
            p.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            fs::read(&p).map_err(|e| e.to_string())?,
        );
    }
    Ok(out)
}

fn pipeline_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let midi = tmp.path().join("midi");
    write_pop_corpus(&midi, 25, &PopGen { bars: 8, ..PopGen::default() }, 17).map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for out in ["a", "b"] {
        let out = tmp.path().join(out);
        let code = mumidi::cli::run(["mumidi", "preprocess", &midi.to_string_lossy(), "--out", &out.to_string_lossy()]);
        ensure(code == 0, || format!("preprocess exited with {code}"))?;
        runs.push(dir_bytes(&out)?);
    }
    ensure(runs[0] == runs[1], || "preprocess outputs differ".into())?;
    ensure(runs[0].contains_key("stats.json"), || "no stats.json".into())?;
    checks(&[
        ("20 valid, 5 invalid", pipeline_runs::twenty_valid_five_invalid),
        ("sharded writes", pipeline_runs::shards_are_byte_identical_across_runs),
        ("empty corpus", pipeline_runs::empty_directory_is_an_error),
        ("melody extraction", pipeline_fixtures::melody_by_name_then_flute),
        ("program families", pipeline_fixtures::program_families),
        ("overlapping bass", pipeline_fixtures::overlapping_bass_keeps_larger),
        ("same-role merge", pipeline_fixtures::same_role_tracks_merge),
        ("filtration", pipeline_fixtures::filtration_rules),
        ("segmentation", pipeline_fixtures::segmentation_cases),
        ("boundary truncation", pipeline_fixtures::boundary_notes_are_truncated),
    ])?;
    Ok(format!("{} identical files per run, fixtures hold", runs[0].len()))
}

fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let criteria: [Criterion; 9] = [
        ("codec roundtrip", codec_roundtrip),
        ("length dominance", length_dominance),
        ("two-track excerpt", two_track_fixture),
        ("viterbi oracle", viterbi_oracle),
        ("model correctness", model_suite),
        ("parameter count", parameter_count),
        ("metrics suite", metrics_suite),
        ("generation contract", generation_contract),
        ("pipeline determinism", pipeline_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

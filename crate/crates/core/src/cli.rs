//! Command-line front end. [`run`] parses arguments, executes one
//! subcommand and returns the process exit code: 0 on success, 1 on a usage
//! error, 2 on a data error.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::codec::{
    self, encode_baseline, read_jsonl, seq_to_json, split_condition_target, BaselineStyle, ChordEntry, ChordSymbol,
    Role, Score, TokenSeq,
};
use crate::metrics::{self, ChordGranularity, PplMode};
use crate::midi_io::{parse_smf, read_text_meta, write_smf_with_text};
use crate::model::{self, AdamState, Checkpoint, Model, ModelConfig, PieceData, SamplingConfig, TrainConfig};
use crate::pipeline::{self, compress_tracks, extract_melody, infer_chords, ChordLane, PipelineConfig};
use crate::render::render_score_to_midi;

/// Written into every artifact next to the run configuration.
pub const FORMAT_VERSION: &str = "mumidi-1";
/// Overrides `seed` from the configuration file.
pub const SEED_ENV: &str = "POPMAG_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineOptions {
    pub shard_size: usize,
    pub condition_roles: Vec<Role>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        let d = PipelineConfig::default();
        Self { shard_size: d.shard_size, condition_roles: d.condition_roles }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    pub ppl_mode: PplMode,
    pub ca_granularity: ChordGranularity,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub shards: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// Everything a run depends on. Loaded from TOML; missing keys take their
/// defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialization, training order, dropout and sampling.
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampling: SamplingConfig,
    pub pipeline: PipelineOptions,
    pub metrics: MetricOptions,
    pub paths: Paths,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Applies the seed override and copies the seed into the nested
    /// sections.
    pub fn resolved(mut self, env_seed: Option<&str>) -> Result<Self, String> {
        if let Some(s) = env_seed {
            self.seed = s.trim().parse().map_err(|_| format!("{SEED_ENV}={s:?} is not an unsigned integer"))?;
        }
        self.train.seed = self.seed;
        self.sampling.seed = self.seed;
        Ok(self)
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("run config serializes")
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {detail}")]
    Data { path: PathBuf, detail: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data { .. } => 2,
        }
    }
}

fn data(path: &Path, detail: impl ToString) -> CliError {
    CliError::Data { path: path.to_path_buf(), detail: detail.to_string() }
}

#[derive(Debug, Parser)]
#[command(name = "mumidi", version, about = "Multi-track MIDI tokenization, training, generation and evaluation")]
struct Args {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn a directory of MIDI files into JSONL condition/target shards.
    Preprocess {
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quantize one MIDI file and write its token sequence as JSONL.
    Encode {
        mid: PathBuf,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fill the chord lane by inference when the file carries none.
        #[arg(long)]
        infer_chords: bool,
    },
    /// Render token sequences to MIDI.
    Decode {
        jsonl: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average target lengths under MuMIDI, REMI and MIDI-like encodings.
    Stats { shards: PathBuf },
    /// Train a model on preprocessed shards.
    Train {
        shards: PathBuf,
        /// Checkpoint path; defaults to `paths.checkpoint`, then `<shards>/model.ckpt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample an accompaniment for a condition (MIDI or JSONL).
    Generate {
        ckpt: PathBuf,
        condition: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        max_bars: Option<usize>,
        /// JSONL output; the MIDI render goes next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare generated and reference JSONL line by line.
    Evaluate { generated: PathBuf, reference: PathBuf },
}

/// Runs the command line and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("--config {}: {e}", p.display())))?;
            RunConfig::from_toml(&text).map_err(|e| CliError::Usage(format!("--config {}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    let env = std::env::var(SEED_ENV).ok();
    cfg.resolved(env.as_deref()).map_err(CliError::Usage)
}

fn execute(args: Args) -> Result<(), CliError> {
    let cfg = load_config(args.config.as_deref())?;
    match args.command {
        Command::Preprocess { dir, out } => preprocess(&cfg, &dir, &out),
        Command::Encode { mid, out, infer_chords } => encode(&cfg, &mid, out.as_deref(), infer_chords),
        Command::Decode { jsonl, out } => decode(&cfg, &jsonl, &out),
        Command::Stats { shards } => stats(&shards),
        Command::Train { shards, out } => {
            let out = out.or_else(|| cfg.paths.checkpoint.clone()).unwrap_or_else(|| shards.join("model.ckpt"));
            train(&cfg, &shards, &out)
        }
        Command::Generate { ckpt, condition, top_k, temperature, max_bars, out } => {
            let mut cfg = cfg;
            if let Some(k) = top_k {
                if k == 0 {
                    return Err(CliError::Usage("--top-k must be at least 1".into()));
                }
                cfg.sampling.top_k = k;
            }
            if let Some(t) = temperature {
                if !(t >= 0.0 && t.is_finite()) {
                    return Err(CliError::Usage(format!("--temperature {t} must be finite and non-negative")));
                }
                cfg.sampling.temperature = t;
            }
            if let Some(b) = max_bars {
                if b == 0 || b > model::MAX_GENERATED_BARS {
                    return Err(CliError::Usage(format!(
                        "--max-bars {b} must lie in 1..={}",
                        model::MAX_GENERATED_BARS
                    )));
                }
                cfg.sampling.max_bars = Some(b);
            }
            let out = out
                .or_else(|| cfg.paths.output.clone())
                .ok_or_else(|| CliError::Usage("generate needs --out (or paths.output)".into()))?;
            generate(&cfg, &ckpt, &condition, &out)
        }
        Command::Evaluate { generated, reference } => evaluate(&cfg, &generated, &reference),
    }
}

fn provenance(cfg: &RunConfig, command: &str) -> Value {
    json!({ "format_version": FORMAT_VERSION, "command": command, "run_config": cfg.to_json() })
}

/// `out.jsonl` gets `out.manifest.json`.
fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).expect("json value serializes") + "\n";
    fs::write(path, text).map_err(|e| data(path, e))
}

fn write_seqs(path: &Path, seqs: &[TokenSeq], manifest: &Value) -> Result<(), CliError> {
    let mut buf = Vec::new();
    codec::write_jsonl(&mut buf, seqs).expect("writing to memory");
    fs::write(path, buf).map_err(|e| data(path, e))?;
    write_json(&manifest_path(path), manifest)
}

fn read_seqs(path: &Path) -> Result<Vec<TokenSeq>, CliError> {
    let f = fs::File::open(path).map_err(|e| data(path, e))?;
    read_jsonl(BufReader::new(f)).map_err(|(line, e)| data(path, format!("line {line}: {e}")))
}

fn decode_seq(path: &Path, line: usize, seq: &TokenSeq) -> Result<Score, CliError> {
    codec::decode(seq).map_err(|e| data(path, format!("line {line}: {e}")))
}

fn chords_to_json(chords: &[ChordEntry]) -> Value {
    chords
        .iter()
        .map(|c| json!([c.bar, c.half, c.chord.root_name(), c.chord.quality.name()]))
        .collect::<Vec<_>>()
        .into()
}

fn chords_from_json(v: &Value) -> Option<Vec<ChordEntry>> {
    v.as_array()?
        .iter()
        .map(|e| {
            let bar = u32::try_from(e.get(0)?.as_u64()?).ok()?;
            let half = u8::try_from(e.get(1)?.as_u64()?).ok()?;
            let chord = ChordSymbol::parse(e.get(2)?.as_str()?, e.get(3)?.as_str()?).ok()?;
            Some(ChordEntry::new(bar, half, chord))
        })
        .collect()
}

/// Quantizes a MIDI file without any filtering. Bar count and chords come
/// from the file's own metadata (as written by `decode`); without stored
/// chords they are inferred when asked for.
fn read_midi_score(path: &Path, infer: bool) -> Result<Score, CliError> {
    let bytes = fs::read(path).map_err(|e| data(path, e))?;
    let raw = parse_smf(&bytes).map_err(|e| data(path, e))?;
    let mut score = compress_tracks(&raw, extract_melody(&raw)).map_err(|e| data(path, e))?;
    let meta = read_text_meta(&bytes).and_then(|t| serde_json::from_str::<Value>(&t).ok()).unwrap_or(Value::Null);
    if let Some(bars) = meta.get("bars").and_then(Value::as_u64).and_then(|b| u32::try_from(b).ok()) {
        if bars > score.bars() {
            score = Score::new(score.tempo, bars, score.tracks().clone(), score.chords().to_vec())
                .map_err(|e| data(path, e))?;
        }
    }
    let chords = match meta.get("chords").and_then(chords_from_json) {
        Some(c) => c,
        None if infer => infer_chords(&score).map_err(|e| data(path, e))?.to_chord_entries(),
        None => return Ok(score),
    };
    score.with_chords(chords).map_err(|e| data(path, e))
}

fn write_midi(path: &Path, score: &Score, meta: &Value) -> Result<(), CliError> {
    let mut meta = meta.clone();
    meta["bars"] = json!(score.bars());
    meta["chords"] = chords_to_json(score.chords());
    let bytes =
        write_smf_with_text(&render_score_to_midi(score), Some(&meta.to_string())).map_err(|e| data(path, e))?;
    fs::write(path, bytes).map_err(|e| data(path, e))
}

fn preprocess(cfg: &RunConfig, dir: &Path, out: &Path) -> Result<(), CliError> {
    let pcfg =
        PipelineConfig { shard_size: cfg.pipeline.shard_size, condition_roles: cfg.pipeline.condition_roles.clone() };
    let ds = pipeline::run_pipeline(dir, &pcfg).map_err(|e| data(dir, e))?;
    let prov = provenance(cfg, "preprocess");
    pipeline::write_dataset(&ds, out, pcfg.shard_size, &prov).map_err(|e| data(out, e))?;
    log::info!("{} pieces, {} skipped", ds.pieces.len(), ds.skipped.len());
    println!("{}", serde_json::to_string(&ds.stats).expect("stats serialize"));
    Ok(())
}

fn encode(cfg: &RunConfig, mid: &Path, out: Option<&Path>, infer: bool) -> Result<(), CliError> {
    let seq = codec::encode(&read_midi_score(mid, infer)?);
    match out {
        Some(p) => write_seqs(p, &[seq], &provenance(cfg, "encode")),
        None => {
            let mut stdout = io::stdout().lock();
            writeln!(stdout, "{}", seq_to_json(&seq)).map_err(|e| data(Path::new("<stdout>"), e))
        }
    }
}

/// One sequence goes to `out`; several go to `out` with a line index
/// appended to the file stem.
fn decode(cfg: &RunConfig, jsonl: &Path, out: &Path) -> Result<(), CliError> {
    let seqs = read_seqs(jsonl)?;
    if seqs.is_empty() {
        return Err(data(jsonl, "no token sequences"));
    }
    let meta = provenance(cfg, "decode");
    for (i, seq) in seqs.iter().enumerate() {
        let score = decode_seq(jsonl, i + 1, seq)?;
        let path = if seqs.len() == 1 {
            out.to_path_buf()
        } else {
            let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
            out.with_file_name(format!("{stem}-{i:05}.mid"))
        };
        write_midi(&path, &score, &meta)?;
    }
    Ok(())
}

fn shard_files(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| data(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with(prefix) && n.ends_with(".jsonl"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(data(dir, format!("no {prefix}*.jsonl shards")));
    }
    Ok(files)
}

fn stats(shards: &Path) -> Result<(), CliError> {
    let (mut n, mut mumidi, mut remi, mut midilike) = (0usize, 0usize, 0usize, 0usize);
    for path in shard_files(shards, "tgt-")? {
        for (i, seq) in read_seqs(&path)?.iter().enumerate() {
            let score = decode_seq(&path, i + 1, seq)?;
            n += 1;
            mumidi += seq.len();
            remi += encode_baseline(&score, BaselineStyle::Remi);
            midilike += encode_baseline(&score, BaselineStyle::MidiLike);
        }
    }
    let mean = |x: usize| x as f64 / n.max(1) as f64;
    let report = json!({
        "pieces": n,
        "mumidi": mean(mumidi),
        "remi": mean(remi),
        "midilike": mean(midilike),
        "mumidi_remi_ratio": if remi > 0 { mumidi as f64 / remi as f64 } else { 0.0 },
    });
    println!("{}", serde_json::to_string_pretty(&report).expect("json value serializes"));
    Ok(())
}

fn load_pieces(shards: &Path) -> Result<Vec<PieceData>, CliError> {
    let conds = shard_files(shards, "cond-")?;
    let tgts = shard_files(shards, "tgt-")?;
    if conds.len() != tgts.len() {
        return Err(data(shards, "condition and target shard counts differ"));
    }
    let mut pieces = Vec::new();
    for (cp, tp) in conds.iter().zip(&tgts) {
        let (c, t) = (read_seqs(cp)?, read_seqs(tp)?);
        if c.len() != t.len() {
            return Err(data(tp, format!("{} targets for {} conditions", t.len(), c.len())));
        }
        for (i, (c, t)) in c.iter().zip(&t).enumerate() {
            pieces.push(PieceData::new(c, t).map_err(|e| data(tp, format!("line {}: {e}", i + 1)))?);
        }
    }
    Ok(pieces)
}

fn train(cfg: &RunConfig, shards: &Path, out: &Path) -> Result<(), CliError> {
    cfg.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let pieces = load_pieces(shards)?;
    let mut model = Model::new(cfg.model.clone(), cfg.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut adam = AdamState::new(model.params());
    let report = model::train(&mut model, &pieces, &mut adam, &cfg.train).map_err(|e| data(shards, e))?;
    let tail = &report.losses[report.losses.len().saturating_sub(50)..];
    let ck = Checkpoint {
        model,
        adam: Some(adam),
        train_config: Some(cfg.train.clone()),
        run_config: provenance(cfg, "train"),
    };
    ck.save(out).map_err(|e| data(out, e))?;
    println!(
        "{}",
        json!({
            "steps": report.losses.len(),
            "final_loss": tail.iter().sum::<f64>() / tail.len().max(1) as f64,
            "checkpoint": out.display().to_string(),
        })
    );
    Ok(())
}

fn read_condition(cfg: &RunConfig, path: &Path) -> Result<(TokenSeq, Option<Score>), CliError> {
    let is_jsonl = path.extension().is_some_and(|e| e == "jsonl" || e == "json");
    if is_jsonl {
        let seq = read_seqs(path)?.into_iter().next().ok_or_else(|| data(path, "no token sequences"))?;
        let score = decode_seq(path, 1, &seq)?;
        Ok((seq, Some(score)))
    } else {
        let score = read_midi_score(path, true)?;
        let (cond, _) = split_condition_target(&score, &cfg.pipeline.condition_roles)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let cond_score = score.restrict(&cfg.pipeline.condition_roles, true);
        Ok((cond, Some(cond_score)))
    }
}

fn generate(cfg: &RunConfig, ckpt: &Path, condition: &Path, out: &Path) -> Result<(), CliError> {
    let ck = Checkpoint::load(ckpt).map_err(|e| data(ckpt, e))?;
    let (cond, cond_score) = read_condition(cfg, condition)?;
    let gen = ck.model.generate(&cond, &cfg.sampling).map_err(|e| data(condition, e))?;
    let meta = provenance(cfg, "generate");
    write_seqs(out, std::slice::from_ref(&gen), &meta)?;
    let gen_score = codec::decode(&gen).map_err(|e| data(out, e))?;
    let full = cond_score.and_then(|c| c.merge(&gen_score).ok()).unwrap_or(gen_score);
    write_midi(&out.with_extension("mid"), &full, &meta)
}

/// One report per line pair. The chord lane comes from the reference (its
/// chord tokens, else inference). With `paths.checkpoint` set, perplexity
/// of the reference target under that model is included.
fn evaluate(cfg: &RunConfig, generated: &Path, reference: &Path) -> Result<(), CliError> {
    let gens = read_seqs(generated)?;
    let refs = read_seqs(reference)?;
    if gens.len() != refs.len() || gens.is_empty() {
        return Err(data(generated, format!("{} generated sequences for {} references", gens.len(), refs.len())));
    }
    let model = match &cfg.paths.checkpoint {
        Some(p) => Some(Checkpoint::load(p).map_err(|e| data(p, e))?.model),
        None => None,
    };
    for (i, (g, r)) in gens.iter().zip(&refs).enumerate() {
        let line = i + 1;
        let gen = decode_seq(generated, line, g)?;
        let refs = decode_seq(reference, line, r)?;
        let lane = match ChordLane::from_score(&refs) {
            Some(l) => l,
            None => infer_chords(&refs).map_err(|e| data(reference, format!("line {line}: {e}")))?,
        };
        let ppl = match &model {
            Some(m) => {
                let (c, t) = split_condition_target(&refs, &cfg.pipeline.condition_roles)
                    .map_err(|e| CliError::Usage(e.to_string()))?;
                let piece = PieceData::new(&c, &t).map_err(|e| data(reference, format!("line {line}: {e}")))?;
                Some(m.perplexity(&[piece], cfg.metrics.ppl_mode).map_err(|e| data(reference, e))?)
            }
            None => None,
        };
        let gen_acc =
            gen.restrict(&gen.roles().filter(|r| !cfg.pipeline.condition_roles.contains(r)).collect::<Vec<_>>(), false);
        let report = metrics::evaluate(&gen_acc, &refs, &lane, cfg.metrics.ca_granularity, ppl)
            .map_err(|e| data(generated, format!("line {line}: {e}")))?;
        println!("{}", report.to_json());
    }
    Ok(())
}

//! Corpus cleansing: raw MIDI files in, condition/target MuMIDI pairs out.
//!
//! Each file goes through `parse_smf` → [`segment`] → [`extract_melody`] →
//! [`compress_tracks`] → [`filter_tracks`]/[`filter_piece`] →
//! [`infer_chords`] → `split_condition_target`. Failures are recorded per
//! file (or per segment) and skipped.

mod chords;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::codec::{quantize, split_condition_target, CodecError, QuantizeError, Role, Score, TokenSeq};
use crate::midi_io::{parse_smf, RawMidi, RawTrack, TimeSignature};

pub use chords::{frame_histograms, infer_chords, ChordHmm, ChordLane, HmmState, PitchHistogram, TEMPLATE_SMOOTHING};

/// GM flute, 0-indexed.
pub const FLUTE_PROGRAM: u8 = 73;
/// Tracks with fewer notes are dropped.
pub const MIN_TRACK_NOTES: usize = 20;
/// Pieces need at least this many tracks after dropping sparse ones.
pub const MIN_TRACKS: usize = 3;
pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no pitched notes to infer chords from")]
    EmptyInput,
    #[error("no MIDI files found in {0}")]
    EmptyCorpus(PathBuf),
    #[error("no piece survived preprocessing ({skipped} skip records)")]
    NoSurvivors { skipped: usize },
    #[error("a chord lane needs two chords per bar, got {0} entries")]
    LaneLength(usize),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// First track named like "melody" (any case), else the first non-drum
/// flute track.
pub fn extract_melody(raw: &RawMidi) -> Option<usize> {
    raw.tracks
        .iter()
        .position(|t| t.name.to_lowercase().contains("melody"))
        .or_else(|| raw.tracks.iter().position(|t| !t.is_drum && t.program == FLUTE_PROGRAM))
}

/// Accompaniment role of a non-melody track, by GM program family.
pub fn track_role(t: &RawTrack) -> Role {
    match t.program {
        _ if t.is_drum => Role::Drum,
        32..=39 => Role::Bass,
        24..=31 => Role::Guitar,
        0..=7 => Role::Piano,
        _ => Role::String,
    }
}

fn span(t: &RawTrack) -> Option<(u64, u64)> {
    let start = t.events.iter().map(|n| n.onset_tick).min()?;
    let end = t.events.iter().map(|n| n.end_tick()).max()?;
    Some((start, end))
}

/// Role of every kept track; `melody_idx` names the melody track if any. Among bass tracks that overlap in time only
/// the one with the most notes survives.
pub fn assign_roles(raw: &RawMidi, melody_idx: Option<usize>) -> BTreeMap<usize, Role> {
    let mut roles = BTreeMap::new();
    let mut bass: Vec<usize> = Vec::new();
    for (i, t) in raw.tracks.iter().enumerate() {
        if Some(i) == melody_idx {
            roles.insert(i, Role::Melody);
        } else {
            match track_role(t) {
                Role::Bass => bass.push(i),
                r => {
                    roles.insert(i, r);
                }
            }
        }
    }
    bass.sort_by_key(|&i| (std::cmp::Reverse(raw.tracks[i].events.len()), i));
    let mut kept: Vec<(u64, u64)> = Vec::new();
    for i in bass {
        let Some((s, e)) = span(&raw.tracks[i]) else {
            continue;
        };
        if kept.iter().all(|&(ks, ke)| e <= ks || ke <= s) {
            kept.push((s, e));
            roles.insert(i, Role::Bass);
        }
    }
    roles
}

/// Maps tracks onto the six roles and quantizes; same-role tracks merge.
pub fn compress_tracks(raw: &RawMidi, melody_idx: Option<usize>) -> Result<Score, QuantizeError> {
    quantize(raw, &assign_roles(raw, melody_idx))
}

/// Drops tracks with fewer than [`MIN_TRACK_NOTES`] notes.
pub fn filter_tracks(s: &Score) -> Score {
    let keep: Vec<Role> = s.tracks().iter().filter(|(_, n)| n.len() >= MIN_TRACK_NOTES).map(|(r, _)| *r).collect();
    s.restrict(&keep, true)
}

/// Whether the piece is kept once sparse tracks are gone.
pub fn filter_piece(s: &Score) -> bool {
    let f = filter_tracks(s);
    let roles: Vec<Role> = f.roles().collect();
    roles.len() >= MIN_TRACKS && roles.contains(&Role::Melody) && roles.iter().any(|r| *r != Role::Melody)
}

/// The 4/4 stretches of a file, each rebased to tick 0. A note belongs to
/// the stretch containing its onset and is cut at the stretch's end. With no
/// time signature the whole file counts as 4/4.
pub fn segment(raw: &RawMidi) -> Vec<RawMidi> {
    // (start tick, explicit signature at start, is 4/4)
    let mut regions: Vec<(u64, Option<TimeSignature>, bool)> = Vec::new();
    if raw.time_signatures.first().is_none_or(|t| t.tick > 0) {
        regions.push((0, None, true));
    }
    for ts in &raw.time_signatures {
        let ff = ts.is_four_four();
        if regions.last().is_none_or(|r| r.2 != ff) {
            regions.push((ts.tick, Some(*ts), ff));
        }
    }
    let mut out = Vec::new();
    for (i, &(start, ts, ff)) in regions.iter().enumerate() {
        if !ff {
            continue;
        }
        let end = regions.get(i + 1).map_or(u64::MAX, |r| r.0);
        let tracks = raw
            .tracks
            .iter()
            .map(|t| RawTrack {
                events: t
                    .events
                    .iter()
                    .filter(|n| n.onset_tick >= start && n.onset_tick < end)
                    .map(|n| {
                        let mut n = *n;
                        n.duration_ticks = n.duration_ticks.min(end - n.onset_tick);
                        n.onset_tick -= start;
                        n
                    })
                    .collect(),
                ..t.clone()
            })
            .collect();
        out.push(RawMidi {
            ticks_per_beat: raw.ticks_per_beat,
            tempo_bpm: raw.tempo_bpm,
            time_signatures: ts.map(|t| vec![TimeSignature::new(0, t.numerator, t.denominator)]).unwrap_or_default(),
            tracks,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Pieces per JSONL shard.
    pub shard_size: usize,
    pub condition_roles: Vec<Role>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { shard_size: 1000, condition_roles: crate::codec::MELODY_CONDITION.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub source: String,
    pub segment: usize,
    /// Filtered score with its inferred chord lane.
    pub score: Score,
    pub condition: TokenSeq,
    pub target: TokenSeq,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkipRecord {
    pub file: String,
    pub segment: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stats {
    pub pieces: usize,
    pub bars: u64,
    pub hours: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub pieces: Vec<Piece>,
    pub skipped: Vec<SkipRecord>,
    pub stats: Stats,
}

fn process_segment(raw: &RawMidi, cfg: &PipelineConfig) -> Result<(Score, TokenSeq, TokenSeq), String> {
    let melody = extract_melody(raw).ok_or("no melody track")?;
    let score = compress_tracks(raw, Some(melody)).map_err(|e| e.to_string())?;
    if !filter_piece(&score) {
        return Err("filtered: needs melody plus at least 3 tracks of 20+ notes".into());
    }
    let score = filter_tracks(&score);
    let lane = infer_chords(&score).map_err(|e| e.to_string())?;
    let score = score.with_chords(lane.to_chord_entries()).map_err(|e| e.to_string())?;
    let (cond, tgt) = split_condition_target(&score, &cfg.condition_roles).map_err(|e| e.to_string())?;
    Ok((score, cond, tgt))
}

/// Runs every stage on one parsed file.
pub fn process_midi(source: &str, raw: &RawMidi, cfg: &PipelineConfig) -> (Vec<Piece>, Vec<SkipRecord>) {
    let segments = segment(raw);
    if segments.is_empty() {
        return (Vec::new(), vec![SkipRecord { file: source.into(), segment: None, reason: "no 4/4 segment".into() }]);
    }
    let mut pieces = Vec::new();
    let mut skipped = Vec::new();
    for (i, seg) in segments.iter().enumerate() {
        match process_segment(seg, cfg) {
            Ok((score, condition, target)) => {
                let seconds = f64::from(score.bars()) * 4.0 * 60.0 / seg.tempo_bpm;
                pieces.push(Piece { source: source.into(), segment: i, score, condition, target, seconds });
            }
            Err(reason) => skipped.push(SkipRecord { file: source.into(), segment: Some(i), reason }),
        }
    }
    (pieces, skipped)
}

pub fn process_file(source: &str, bytes: &[u8], cfg: &PipelineConfig) -> (Vec<Piece>, Vec<SkipRecord>) {
    match parse_smf(bytes) {
        Ok(raw) => process_midi(source, &raw, cfg),
        Err(e) => (Vec::new(), vec![SkipRecord { file: source.into(), segment: None, reason: format!("parse: {e}") }]),
    }
}

fn is_midi(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
}

/// MIDI files under `dir`, recursively, sorted by path.
pub fn list_midi_files(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(io::Error::other)?;
        if entry.file_type().is_file() && is_midi(entry.path()) {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}

pub fn run_pipeline(dir: &Path, cfg: &PipelineConfig) -> Result<Dataset, PipelineError> {
    let files = list_midi_files(dir)?;
    if files.is_empty() {
        return Err(PipelineError::EmptyCorpus(dir.to_path_buf()));
    }
    let results: Vec<(Vec<Piece>, Vec<SkipRecord>)> = files
        .par_iter()
        .map(|path| {
            let name = path.strip_prefix(dir).unwrap_or(path).to_string_lossy().into_owned();
            match fs::read(path) {
                Ok(bytes) => process_file(&name, &bytes, cfg),
                Err(e) => (Vec::new(), vec![SkipRecord { file: name, segment: None, reason: format!("read: {e}") }]),
            }
        })
        .collect();
    let mut pieces = Vec::new();
    let mut skipped = Vec::new();
    for (p, s) in results {
        for r in &s {
            log::info!("skipping {} (segment {:?}): {}", r.file, r.segment, r.reason);
        }
        pieces.extend(p);
        skipped.extend(s);
    }
    if pieces.is_empty() {
        return Err(PipelineError::NoSurvivors { skipped: skipped.len() });
    }
    let stats = Stats {
        pieces: pieces.len(),
        bars: pieces.iter().map(|p| u64::from(p.score.bars())).sum(),
        hours: pieces.iter().map(|p| p.seconds).sum::<f64>() / 3600.0,
    };
    Ok(Dataset { pieces, skipped, stats })
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()
}

/// Writes `cond-NNNNN.jsonl`/`tgt-NNNNN.jsonl` shard pairs (line-aligned),
/// `stats.json`, `skipped.jsonl` and `manifest.json`. Returns the shard paths.
pub fn write_dataset(
    ds: &Dataset,
    out_dir: &Path,
    shard_size: usize,
    run_config: &serde_json::Value,
) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (i, chunk) in ds.pieces.chunks(shard_size.max(1)).enumerate() {
        let cond = out_dir.join(format!("cond-{i:05}.jsonl"));
        let tgt = out_dir.join(format!("tgt-{i:05}.jsonl"));
        write_lines(&cond, chunk.iter().map(|p| crate::codec::seq_to_json(&p.condition)))?;
        write_lines(&tgt, chunk.iter().map(|p| crate::codec::seq_to_json(&p.target)))?;
        written.extend([cond, tgt]);
    }
    fs::write(out_dir.join("stats.json"), serde_json::to_string_pretty(&ds.stats).map_err(io::Error::other)? + "\n")?;
    write_lines(
        &out_dir.join("skipped.jsonl"),
        ds.skipped.iter().map(|r| serde_json::to_string(r).expect("skip records serialize")),
    )?;
    let sources: Vec<serde_json::Value> =
        ds.pieces.iter().map(|p| serde_json::json!({"file": p.source, "segment": p.segment})).collect();
    let manifest = serde_json::json!({
        "format_version": DATASET_FORMAT_VERSION,
        "run_config": run_config,
        "shard_size": shard_size,
        "sources": sources,
    });
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(io::Error::other)? + "\n",
    )?;
    Ok(written)
}

//! Objective metrics: chord accuracy, perplexity and overlapped-area
//! distances between per-track, per-bar feature distributions.

mod kde;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Role, Score, STEPS_PER_BAR};
use crate::pipeline::{ChordHmm, ChordLane};

pub use kde::{bandwidth, kde_pdf, kde_pdf_with_bandwidth, overlapped_area, ClassPdf, GRID_PER_CLASS, MIN_BANDWIDTH};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no non-drum notes to evaluate")]
    EmptyInput,
    #[error("cell has no events")]
    EmptyCell,
    #[error("densities are on different grids")]
    GridMismatch,
    #[error("bar counts differ: {0} vs {1}")]
    ShapeMismatch(u32, u32),
    #[error("non-finite value")]
    NonFinite,
    #[error("loss is not finite")]
    NonFiniteLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    /// Pitch class (drums excluded).
    Pitch,
    Velocity,
    Duration,
    /// Inter-onset interval in timesteps.
    Ioi,
}

impl Feature {
    pub const ALL: [Feature; 4] = [Feature::Pitch, Feature::Velocity, Feature::Duration, Feature::Ioi];

    pub fn classes(self) -> usize {
        match self {
            Feature::Pitch => 12,
            _ => 32,
        }
    }

    pub fn report_key(self) -> &'static str {
        match self {
            Feature::Pitch => "d_p",
            Feature::Velocity => "d_v",
            Feature::Duration => "d_d",
            Feature::Ioi => "d_ioi",
        }
    }
}

/// Counts of one feature in the cell (`role`, `bar`).
///
/// Index `i` holds pitch class `i` for [`Feature::Pitch`] and value `i + 1`
/// for the others. IOIs come from consecutive notes of the track sorted by
/// onset, clamped to `[1, 32]` and credited to the bar of the earlier note.
pub fn feature_histogram(s: &Score, feature: Feature, role: Role, bar: u32) -> Result<Vec<u32>, MetricsError> {
    let mut counts = vec![0u32; feature.classes()];
    let notes = s.notes(role);
    let in_bar = |onset: u32| onset / STEPS_PER_BAR == bar;
    match feature {
        Feature::Pitch if role.is_drum() => {}
        Feature::Pitch => {
            notes.iter().filter(|n| in_bar(n.onset_step)).for_each(|n| counts[usize::from(n.midi_pitch() % 12)] += 1)
        }
        Feature::Velocity => {
            notes.iter().filter(|n| in_bar(n.onset_step)).for_each(|n| counts[usize::from(n.vel_level) - 1] += 1)
        }
        Feature::Duration => {
            notes.iter().filter(|n| in_bar(n.onset_step)).for_each(|n| counts[usize::from(n.dur_steps) - 1] += 1)
        }
        Feature::Ioi => {
            // notes are kept sorted by onset
            for w in notes.windows(2) {
                if in_bar(w[0].onset_step) {
                    let ioi = (w[1].onset_step - w[0].onset_step).clamp(1, 32);
                    counts[ioi as usize - 1] += 1;
                }
            }
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(MetricsError::EmptyCell);
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distance {
    /// Mean overlapped area, `None` when no cell could be compared.
    pub value: Option<f64>,
    pub cells: usize,
    pub skipped: usize,
}

/// Mean overlapped area over the (track, bar) cells where both scores have
/// events. Cells of roles present in either score count as skipped when one
/// side is empty.
pub fn distribution_distance(gen: &Score, reference: &Score, feature: Feature) -> Result<Distance, MetricsError> {
    distribution_distance_with(gen, reference, feature, None)
}

/// As [`distribution_distance`], optionally with a fixed KDE bandwidth.
pub fn distribution_distance_with(
    gen: &Score,
    reference: &Score,
    feature: Feature,
    bandwidth: Option<f64>,
) -> Result<Distance, MetricsError> {
    if gen.bars() != reference.bars() {
        return Err(MetricsError::ShapeMismatch(gen.bars(), reference.bars()));
    }
    let pdf = |c: &[u32]| match bandwidth {
        Some(h) => kde_pdf_with_bandwidth(c, h),
        None => kde_pdf(c),
    };
    let mut roles: Vec<Role> = gen.roles().chain(reference.roles()).collect();
    roles.sort();
    roles.dedup();
    let (mut total, mut cells, mut skipped) = (0.0, 0usize, 0usize);
    for role in roles {
        for bar in 0..gen.bars() {
            match (feature_histogram(gen, feature, role, bar), feature_histogram(reference, feature, role, bar)) {
                (Ok(a), Ok(b)) => {
                    total += overlapped_area(&pdf(&a)?, &pdf(&b)?)?;
                    cells += 1;
                }
                (Err(MetricsError::EmptyCell), Err(MetricsError::EmptyCell)) => {}
                (Err(MetricsError::EmptyCell), _) | (_, Err(MetricsError::EmptyCell)) => skipped += 1,
                (Err(e), _) | (_, Err(e)) => return Err(e),
            }
        }
    }
    Ok(Distance { value: (cells > 0).then(|| total / cells as f64), cells, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChordGranularity {
    /// Two chords per bar.
    #[default]
    HalfBar,
    /// The first-half chord of each bar.
    Bar,
}

/// Fraction of (track, chord slot) cells whose chord, inferred from that
/// track alone, equals the lane. Drum tracks are excluded.
pub fn chord_accuracy(gen: &Score, lane: &ChordLane, granularity: ChordGranularity) -> Result<f64, MetricsError> {
    if lane.bars() != gen.bars() {
        return Err(MetricsError::ShapeMismatch(gen.bars(), lane.bars()));
    }
    let hmm = ChordHmm::default();
    let tracks: Vec<Role> = gen.roles().filter(|r| !r.is_drum()).collect();
    if tracks.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for role in tracks {
        let inferred = hmm.infer(gen, |r| r == role).map_err(|_| MetricsError::EmptyInput)?;
        for (i, (a, b)) in inferred.entries().iter().zip(lane.entries()).enumerate() {
            if granularity == ChordGranularity::Bar && i % 2 == 1 {
                continue;
            }
            total += 1;
            hits += usize::from(a == b);
        }
    }
    if total == 0 {
        return Err(MetricsError::EmptyInput);
    }
    Ok(hits as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PplMode {
    /// Heads present at a step are averaged, then steps are averaged.
    #[default]
    PerStep,
    /// Every present head counts as one token.
    PerHead,
}

/// `exp` of the mean negative log-likelihood. `steps[t]` holds the NLL of
/// each head that has a label at step `t`.
pub fn perplexity(steps: &[Vec<f64>], mode: PplMode) -> Result<f64, MetricsError> {
    let (sum, n) = match mode {
        PplMode::PerStep => steps
            .iter()
            .filter(|h| !h.is_empty())
            .fold((0.0, 0usize), |(s, n), h| (s + h.iter().sum::<f64>() / h.len() as f64, n + 1)),
        PplMode::PerHead => steps.iter().flatten().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1)),
    };
    let ppl = (sum / n.max(1) as f64).exp();
    if !ppl.is_finite() || n == 0 {
        return Err(MetricsError::NonFiniteLoss);
    }
    Ok(ppl)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ca: f64,
    pub ppl: Option<f64>,
    pub d_p: Option<f64>,
    pub d_v: Option<f64>,
    pub d_d: Option<f64>,
    pub d_ioi: Option<f64>,
    /// Cells left out of each distance because one side was empty.
    pub skipped_cells: BTreeMap<String, usize>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Compares generated accompaniment with a reference of the same length.
pub fn evaluate(
    gen: &Score,
    reference: &Score,
    lane: &ChordLane,
    granularity: ChordGranularity,
    ppl: Option<f64>,
) -> Result<EvalReport, MetricsError> {
    let ca = chord_accuracy(gen, lane, granularity)?;
    let mut d = BTreeMap::new();
    let mut skipped_cells = BTreeMap::new();
    for f in Feature::ALL {
        let dist = distribution_distance(gen, reference, f)?;
        d.insert(f, dist.value);
        skipped_cells.insert(f.report_key().to_string(), dist.skipped);
    }
    Ok(EvalReport {
        ca,
        ppl,
        d_p: d[&Feature::Pitch],
        d_v: d[&Feature::Velocity],
        d_d: d[&Feature::Duration],
        d_ioi: d[&Feature::Ioi],
        skipped_cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{QNote, TempoClass};

    fn single(role: Role, notes: Vec<QNote>) -> Score {
        Score::new(TempoClass::Mid, 1, BTreeMap::from([(role, notes)]), vec![]).unwrap()
    }

    #[test]
    fn one_note_histograms() {
        let s = single(Role::Piano, vec![QNote::new(0, 61, 10, 4)]);
        let p = feature_histogram(&s, Feature::Pitch, Role::Piano, 0).unwrap();
        assert_eq!(p[0], 1);
        assert_eq!(p.iter().sum::<u32>(), 1);
        assert_eq!(feature_histogram(&s, Feature::Velocity, Role::Piano, 0).unwrap()[9], 1);
        assert_eq!(feature_histogram(&s, Feature::Duration, Role::Piano, 0).unwrap()[3], 1);
        assert_eq!(feature_histogram(&s, Feature::Ioi, Role::Piano, 0), Err(MetricsError::EmptyCell));
    }

    #[test]
    fn ioi_differences() {
        let s = single(Role::Bass, vec![QNote::new(0, 40, 10, 2), QNote::new(4, 40, 10, 2), QNote::new(12, 40, 10, 2)]);
        let h = feature_histogram(&s, Feature::Ioi, Role::Bass, 0).unwrap();
        assert_eq!(h[3], 1);
        assert_eq!(h[7], 1);
        assert_eq!(h.iter().sum::<u32>(), 2);
    }

    #[test]
    fn drums_have_no_pitch_cells() {
        let s = single(Role::Drum, vec![QNote::new(0, 37, 10, 2)]);
        assert_eq!(feature_histogram(&s, Feature::Pitch, Role::Drum, 0), Err(MetricsError::EmptyCell));
        assert!(feature_histogram(&s, Feature::Velocity, Role::Drum, 0).is_ok());
    }

    #[test]
    fn perplexity_modes() {
        assert_eq!(perplexity(&[vec![0.0, 0.0, 0.0], vec![0.0]], PplMode::PerStep).unwrap(), 1.0);
        let steps = vec![vec![2.0f64.ln(), 4.0f64.ln()], vec![8.0f64.ln()]];
        // per head: (1 + 2 + 3) ln2 / 3; per step: (1.5 + 3) ln2 / 2
        assert!((perplexity(&steps, PplMode::PerHead).unwrap() - 4.0).abs() < 1e-12);
        assert!((perplexity(&steps, PplMode::PerStep).unwrap() - 2f64.powf(2.25)).abs() < 1e-12);
        assert_eq!(perplexity(&[vec![f64::INFINITY]], PplMode::PerStep), Err(MetricsError::NonFiniteLoss));
        assert_eq!(perplexity(&[], PplMode::PerStep), Err(MetricsError::NonFiniteLoss));
    }

    #[test]
    fn drum_only_chord_accuracy_is_empty_input() {
        let s = single(Role::Drum, vec![QNote::new(0, 37, 10, 2)]);
        let lane = ChordLane::new(vec![crate::codec::ChordSymbol::new(0, crate::codec::Quality::Major); 2]).unwrap();
        assert_eq!(chord_accuracy(&s, &lane, ChordGranularity::HalfBar), Err(MetricsError::EmptyInput));
    }
}

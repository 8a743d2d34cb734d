//! Bar-by-bar sampling of a target sequence for a given condition.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::grammar::{GrammarLimits, NextTokens, Tracker};
use crate::codec::{Role, Token, TokenSeq};

use super::config::Symbol;
use super::net::{Model, StepState};
use super::train::PieceData;
use super::ModelError;

/// Hard cap on generated bars.
pub const MAX_GENERATED_BARS: usize = 32;
/// Consecutive grammar-invalid samples tolerated with masking off.
pub const MAX_RETRIES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub top_k: usize,
    /// 0 means greedy.
    pub temperature: f64,
    /// Defaults to the condition's bar count; never above 32.
    pub max_bars: Option<usize>,
    /// Mask symbols the grammar does not allow instead of resampling.
    pub grammar_mask: bool,
    pub seed: u64,
    /// Roles to generate.
    pub roles: Vec<Role>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            top_k: 8,
            temperature: 1.0,
            max_bars: None,
            grammar_mask: true,
            seed: 0,
            roles: vec![Role::Drum, Role::Piano, Role::String, Role::Guitar, Role::Bass],
        }
    }
}

fn symbol_allowed(next: &NextTokens, sym: usize) -> bool {
    match Symbol::from_index(sym) {
        Some(Symbol::Bar) => next.bar,
        Some(Symbol::Pos(k)) => next.pos_from.is_some_and(|m| k >= m),
        Some(Symbol::Track(r)) => next.tracks.contains(&r),
        Some(Symbol::Chord(_)) => next.chord,
        Some(Symbol::Pitch(_)) => next.note.is_some_and(|r| !r.is_drum()),
        Some(Symbol::Drum(_)) => next.note.is_some_and(Role::is_drum),
        None => false,
    }
}

/// Top-k / temperature sampling over the entries where `allowed` holds.
fn sample(
    logits: &[f64],
    allowed: impl Fn(usize) -> bool,
    cfg: &SamplingConfig,
    rng: &mut ChaCha8Rng,
) -> Option<usize> {
    let mut cands: Vec<(usize, f64)> = logits.iter().copied().enumerate().filter(|(i, _)| allowed(*i)).collect();
    if cands.is_empty() {
        return None;
    }
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if cfg.temperature <= 0.0 || cfg.top_k == 1 {
        return Some(cands[0].0);
    }
    cands.truncate(cfg.top_k.max(1));
    let top = cands[0].1;
    let weights: Vec<f64> = cands.iter().map(|(_, l)| ((l - top) / cfg.temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for ((i, _), w) in cands.iter().zip(&weights) {
        if u < *w {
            return Some(*i);
        }
        u -= w;
    }
    cands.last().map(|c| c.0)
}

impl Model {
    /// Encodes every condition bar, then samples target tokens one at a
    /// time. Sampling a `Bar` once `max_bars` bars exist ends the piece.
    pub fn generate(&self, condition: &TokenSeq, cfg: &SamplingConfig) -> Result<TokenSeq, ModelError> {
        let cond_bars = condition.bar_count();
        let max_bars = cfg.max_bars.unwrap_or(cond_bars).clamp(1, MAX_GENERATED_BARS);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

        // encoder contexts, one matrix per condition bar
        let cond = PieceData::new(condition, &TokenSeq::new(condition.tempo, vec![Token::Bar]))?;
        let mut enc_mem = self.empty_encoder_memory();
        let mut contexts: Vec<(u32, Array2<f64>)> = Vec::new();
        for steps in &cond.condition {
            let mut t = self.tape();
            let x = self.embed(&mut t, steps, condition.tempo);
            let e = self.encode_segment(&mut t, x, &enc_mem, &mut None);
            contexts.push((steps[0].bar, t.value(e.context).clone()));
            enc_mem = enc_mem.extended(&e.layer_inputs, self.cfg.mem_len_enc);
        }

        let limits = GrammarLimits { roles: cfg.roles.clone(), allow_chords: false, ..GrammarLimits::default() };
        let mut tracker = Tracker::new(limits);
        let mut tokens = vec![Token::Bar];
        tracker.push(&Token::Bar);
        let mut state = StepState::default();
        let mut step = state.step(&Token::Bar);
        // memory of finished bars, and the same plus the current bar so far
        let mut dec_mem = self.empty_decoder_memory();
        let mut working = dec_mem.clone();
        let mut bar_start = 0usize;
        loop {
            let mut t = self.tape();
            let y = self.embed(&mut t, &[step], condition.tempo);
            let ctx = contexts.iter().find(|(b, _)| *b == step.bar).map(|(_, c)| t.constant(c.clone()));
            let ctx_bars = ctx.map(|c| vec![step.bar; t.value(c).nrows()]);
            let context = ctx.zip(ctx_bars.as_deref());
            let out = self.decode_segment(&mut t, y, &[step.bar], context, &working, &mut None);
            working = working.extended(&out.layer_inputs, usize::MAX);

            let next = tracker.next();
            let h1 = t.value(out.h1).row(0).to_vec();
            let sym = if cfg.grammar_mask {
                sample(&h1, |s| symbol_allowed(&next, s), cfg, &mut rng)
                    .ok_or(ModelError::RetryExhausted { step: tokens.len() })?
            } else {
                (0..MAX_RETRIES)
                    .find_map(|_| sample(&h1, |_| true, cfg, &mut rng).filter(|&s| symbol_allowed(&next, s)))
                    .ok_or(ModelError::RetryExhausted { step: tokens.len() })?
            };
            let token = match Symbol::from_index(sym).expect("sampled index lies in V1") {
                Symbol::Bar if tracker.bars() >= max_bars => break,
                Symbol::Bar => Token::Bar,
                Symbol::Pos(k) => Token::Pos(k),
                Symbol::Track(r) => Token::Track(r),
                Symbol::Chord(c) => Token::Chord(c),
                Symbol::Pitch(p) | Symbol::Drum(p) => {
                    let v =
                        sample(t.value(out.h2).row(0).as_slice().expect("row"), |_| true, cfg, &mut rng).unwrap_or(0);
                    let d =
                        sample(t.value(out.h3).row(0).as_slice().expect("row"), |_| true, cfg, &mut rng).unwrap_or(0);
                    Token::note(p, v as u8 + 1, d as u8 + 1)
                }
            };
            if token == Token::Bar {
                let done = &tokens[bar_start..];
                let finished: Vec<Array2<f64>> = working
                    .layers
                    .iter()
                    .map(|w| w.slice(ndarray::s![w.nrows() - done.len().., ..]).to_owned())
                    .collect();
                dec_mem = dec_mem.extended(&finished, self.cfg.mem_len_dec);
                working = dec_mem.clone();
                bar_start = tokens.len();
            }
            let accepted = tracker.push(&token);
            debug_assert!(accepted);
            step = state.step(&token);
            tokens.push(token);
        }
        Ok(TokenSeq::new(condition.tempo, tokens))
    }
}

//! Teacher-forced training, one optimizer step per bar.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{TempoClass, TokenSeq};
use crate::metrics::{perplexity, PplMode};

use super::config::Symbol;
use super::net::{annotate, Dropout, Model, SegmentMemory, Step};
use super::tape::{softmax_rows, NodeId, Tape};
use super::ModelError;

/// Gold outputs for one decoder input step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Label {
    pub symbol: usize,
    /// Present only when the next token is a note.
    pub velocity: Option<usize>,
    pub duration: Option<usize>,
}

/// A (condition, target) pair split into bar segments.
#[derive(Debug, Clone, PartialEq)]
pub struct PieceData {
    pub tempo: TempoClass,
    pub condition: Vec<Vec<Step>>,
    pub target: Vec<Vec<Step>>,
    /// `labels[j][i]` is what target step `i` of bar `j` should predict.
    pub labels: Vec<Vec<Label>>,
}

fn by_bar(steps: Vec<Step>) -> Vec<Vec<Step>> {
    let mut out: Vec<Vec<Step>> = Vec::new();
    for s in steps {
        match out.last_mut() {
            Some(seg) if seg[0].bar == s.bar => seg.push(s),
            _ => out.push(vec![s]),
        }
    }
    out
}

impl PieceData {
    /// Each target token predicts the next; the last one predicts a closing
    /// `Bar`.
    pub fn new(condition: &TokenSeq, target: &TokenSeq) -> Result<Self, ModelError> {
        if target.tokens.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let tgt = annotate(&target.tokens);
        let mut labels: Vec<Label> = tgt
            .iter()
            .skip(1)
            .map(|s| Label { symbol: s.symbol, velocity: s.velocity, duration: s.duration })
            .collect();
        labels.push(Label { symbol: Symbol::Bar.index(), velocity: None, duration: None });
        let target = by_bar(tgt);
        let mut grouped = Vec::with_capacity(target.len());
        let mut rest = labels.into_iter();
        for seg in &target {
            grouped.push(rest.by_ref().take(seg.len()).collect());
        }
        Ok(Self { tempo: condition.tempo, condition: by_bar(annotate(&condition.tokens)), target, labels: grouped })
    }

    pub fn bars(&self) -> usize {
        self.target.len()
    }

    pub fn steps(&self) -> usize {
        self.target.iter().map(Vec::len).sum()
    }

    /// Condition steps of the given bar, if any.
    pub fn condition_bar(&self, bar: u32) -> Option<&[Step]> {
        self.condition.iter().find(|s| s[0].bar == bar).map(Vec::as_slice)
    }
}

/// Nodes of one bar's forward pass.
pub struct SegmentPass {
    /// Mean loss per target step of the bar.
    pub loss: NodeId,
    pub h1: NodeId,
    pub h2: NodeId,
    pub h3: NodeId,
    pub enc_inputs: Option<Vec<Array2<f64>>>,
    pub dec_inputs: Vec<Array2<f64>>,
}

impl Model {
    /// Encodes bar `j` of the condition and decodes bar `j` of the target
    /// against the given (non-differentiable) memories.
    pub fn segment_pass(
        &self,
        t: &mut Tape,
        piece: &PieceData,
        j: usize,
        enc_mem: &SegmentMemory,
        dec_mem: &SegmentMemory,
        dropout: &mut Option<Dropout>,
    ) -> SegmentPass {
        let tgt = &piece.target[j];
        let bar = tgt[0].bar;
        let enc = piece.condition_bar(bar).map(|steps| {
            let x = self.embed(t, steps, piece.tempo);
            (self.encode_segment(t, x, enc_mem, dropout), vec![bar; steps.len()])
        });
        let y = self.embed(t, tgt, piece.tempo);
        let query_bars = vec![bar; tgt.len()];
        let context = enc.as_ref().map(|(e, bars)| (e.context, bars.as_slice()));
        let dec = self.decode_segment(t, y, &query_bars, context, dec_mem, dropout);
        let labels = &piece.labels[j];
        let ce1 = t.cross_entropy(dec.h1, labels.iter().map(|l| Some(l.symbol)).collect());
        let ce2 = t.cross_entropy(dec.h2, labels.iter().map(|l| l.velocity).collect());
        let ce3 = t.cross_entropy(dec.h3, labels.iter().map(|l| l.duration).collect());
        let sum = t.add(ce1, ce2);
        let sum = t.add(sum, ce3);
        let loss = t.scale(sum, 1.0 / tgt.len() as f64);
        SegmentPass {
            loss,
            h1: dec.h1,
            h2: dec.h2,
            h3: dec.h3,
            enc_inputs: enc.map(|(e, _)| e.layer_inputs),
            dec_inputs: dec.layer_inputs,
        }
    }

    /// Per-step negative log-likelihoods of each present head under teacher
    /// forcing, without dropout.
    pub fn head_nlls(&self, piece: &PieceData) -> Vec<Vec<f64>> {
        let mut enc_mem = self.empty_encoder_memory();
        let mut dec_mem = self.empty_decoder_memory();
        let mut out = Vec::with_capacity(piece.steps());
        for j in 0..piece.bars() {
            let mut t = self.tape();
            let pass = self.segment_pass(&mut t, piece, j, &enc_mem, &dec_mem, &mut None);
            let [p1, p2, p3] = [pass.h1, pass.h2, pass.h3].map(|h| softmax_rows(t.value(h)));
            let nll = |p: &Array2<f64>, i: usize, c: usize| -p[[i, c]].max(f64::MIN_POSITIVE).ln();
            for (i, l) in piece.labels[j].iter().enumerate() {
                let mut heads = vec![nll(&p1, i, l.symbol)];
                if let (Some(v), Some(d)) = (l.velocity, l.duration) {
                    heads.push(nll(&p2, i, v));
                    heads.push(nll(&p3, i, d));
                }
                out.push(heads);
            }
            if let Some(e) = &pass.enc_inputs {
                enc_mem = enc_mem.extended(e, self.cfg.mem_len_enc);
            }
            dec_mem = dec_mem.extended(&pass.dec_inputs, self.cfg.mem_len_dec);
        }
        out
    }

    /// Teacher-forcing perplexity over a set of pieces.
    pub fn perplexity(&self, pieces: &[PieceData], mode: PplMode) -> Result<f64, ModelError> {
        let steps: Vec<Vec<f64>> = pieces.iter().flat_map(|p| self.head_nlls(p)).collect();
        perplexity(&steps, mode).map_err(|_| ModelError::NonFiniteLoss { step: 0, detail: "evaluation".into() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Optimizer steps (one per bar segment).
    pub steps: usize,
    pub warmup: usize,
    /// Multiplier on the inverse-square-root schedule.
    pub lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Visit pieces in a fresh seeded order each epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 1000, warmup: 4000, lr_scale: 1.0, beta1: 0.9, beta2: 0.98, eps: 1e-9, seed: 0, shuffle: true }
    }
}

/// `scale * d^-0.5 * min(step^-0.5, step * warmup^-1.5)` for `step >= 1`.
pub fn learning_rate(cfg: &TrainConfig, d_model: usize, step: u64) -> f64 {
    let s = step.max(1) as f64;
    let w = cfg.warmup.max(1) as f64;
    cfg.lr_scale * (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn new(params: &[Array2<f64>]) -> Self {
        let zeros = || params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Self { step: 0, m: zeros(), v: zeros() }
    }

    /// One bias-corrected Adam update; returns the learning rate used.
    pub fn update(
        &mut self,
        params: &mut [Array2<f64>],
        grads: &[Option<Array2<f64>>],
        cfg: &TrainConfig,
        d_model: usize,
    ) -> f64 {
        self.step += 1;
        let lr = learning_rate(cfg, d_model, self.step);
        let c1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            match &grads[i] {
                Some(g) => {
                    ndarray::Zip::from(&mut *m).and(&mut *v).and(g).for_each(|m, v, &g| {
                        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    });
                }
                None => {
                    m.mapv_inplace(|x| cfg.beta1 * x);
                    v.mapv_inplace(|x| cfg.beta2 * x);
                }
            }
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
            });
        }
        lr
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Loss of every optimizer step.
    pub losses: Vec<f64>,
}

/// Runs `cfg.steps` optimizer steps over the pieces, cycling through them.
/// Memories restart at the first bar of every piece.
pub fn train(
    model: &mut Model,
    pieces: &[PieceData],
    adam: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<TrainReport, ModelError> {
    if pieces.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..pieces.len()).collect();
    let d_model = model.cfg.d_model;
    let p_drop = model.cfg.dropout;
    'outer: loop {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        for &pi in &order {
            let piece = &pieces[pi];
            let mut enc_mem = model.empty_encoder_memory();
            let mut dec_mem = model.empty_decoder_memory();
            for j in 0..piece.bars() {
                if report.losses.len() >= cfg.steps {
                    break 'outer;
                }
                let (loss, grads, enc_inputs, dec_inputs) = {
                    let mut t = model.tape();
                    let mut dropout = (p_drop > 0.0).then_some(Dropout { p: p_drop, rng: &mut rng });
                    let pass = model.segment_pass(&mut t, piece, j, &enc_mem, &dec_mem, &mut dropout);
                    let loss = t.scalar(pass.loss);
                    if !loss.is_finite() {
                        return Err(ModelError::NonFiniteLoss {
                            step: report.losses.len(),
                            detail: format!("piece {pi}, bar {j}"),
                        });
                    }
                    let grads = t.backward(pass.loss);
                    (loss, grads.params, pass.enc_inputs, pass.dec_inputs)
                };
                adam.update(model.params_mut(), &grads, cfg, d_model);
                report.losses.push(loss);
                log::debug!("step {} loss {loss:.5}", report.losses.len());
                if let Some(e) = &enc_inputs {
                    enc_mem = enc_mem.extended(e, model.cfg.mem_len_enc);
                }
                dec_mem = dec_mem.extended(&dec_inputs, model.cfg.mem_len_dec);
            }
        }
    }
    Ok(report)
}

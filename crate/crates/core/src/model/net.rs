//! Parameters and forward pass of the encoder-decoder.

use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::codec::{Role, TempoClass, Token};

use super::config::{param_shapes, ModelConfig, Symbol};
use super::tape::{NodeId, Tape};
use super::ModelError;

/// Standard deviation of the initial weights.
pub const INIT_STD: f64 = 0.02;

/// Embedding lookups for one sequence step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub symbol: usize,
    /// 0-based velocity level of a note step.
    pub velocity: Option<usize>,
    /// 0-based duration of a note step.
    pub duration: Option<usize>,
    /// 0-based bar index.
    pub bar: u32,
    /// 1..=32 after a position token; 0 for `Bar` and anything before the
    /// first position of a bar.
    pub pos: usize,
}

/// Running bar/position/track state while reading tokens left to right.
#[derive(Debug, Clone, Default)]
pub struct StepState {
    bar: Option<u32>,
    pos: usize,
    track: Option<Role>,
}

impl StepState {
    pub fn step(&mut self, t: &Token) -> Step {
        match *t {
            Token::Bar => {
                self.bar = Some(self.bar.map_or(0, |b| b + 1));
                self.pos = 0;
                self.track = None;
            }
            Token::Pos(k) => {
                self.pos = usize::from(k);
                self.track = None;
            }
            Token::Track(r) => self.track = Some(r),
            _ => {}
        }
        let (velocity, duration) = match *t {
            Token::Note { vel_level, dur_steps, .. } => {
                (Some(usize::from(vel_level) - 1), Some(usize::from(dur_steps) - 1))
            }
            _ => (None, None),
        };
        Step {
            symbol: Symbol::of_token(t, self.track).index(),
            velocity,
            duration,
            bar: self.bar.unwrap_or(0),
            pos: self.pos,
        }
    }
}

pub fn annotate(tokens: &[Token]) -> Vec<Step> {
    let mut st = StepState::default();
    tokens.iter().map(|t| st.step(t)).collect()
}

/// Cached layer inputs of earlier segments, one matrix per layer. Never
/// differentiated through.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMemory {
    pub layers: Vec<Array2<f64>>,
}

impl SegmentMemory {
    pub fn empty(layers: usize, d_model: usize) -> Self {
        Self { layers: vec![Array2::zeros((0, d_model)); layers] }
    }

    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, |m| m.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends one segment's layer inputs, keeping the newest `cap` rows.
    pub fn extended(&self, inputs: &[Array2<f64>], cap: usize) -> Self {
        let layers = self
            .layers
            .iter()
            .zip(inputs)
            .map(|(m, x)| {
                let all = ndarray::concatenate(ndarray::Axis(0), &[m.view(), x.view()]).expect("equal widths");
                let skip = all.nrows().saturating_sub(cap);
                all.slice(ndarray::s![skip.., ..]).to_owned()
            })
            .collect();
        Self { layers }
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Attn {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone, Copy)]
struct Ffn {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct EncLayer {
    ln1: Norm,
    attn: Attn,
    ln2: Norm,
    ffn: Ffn,
}

#[derive(Debug, Clone, Copy)]
struct DecLayer {
    ln1: Norm,
    attn: Attn,
    ln2: Norm,
    cross: Attn,
    ln3: Norm,
    ffn: Ffn,
}

#[derive(Debug, Clone)]
struct Layout {
    token: usize,
    velocity: usize,
    duration: usize,
    bar: usize,
    position: usize,
    meta: usize,
    enc: Vec<EncLayer>,
    enc_ln: Option<Norm>,
    dec: Vec<DecLayer>,
    dec_ln: Option<Norm>,
    heads: [(usize, usize); 3],
}

impl Layout {
    fn new(cfg: &ModelConfig, names: &[String]) -> Self {
        let map: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let at = |n: String| map[n.as_str()];
        let norm = |p: String| Norm { g: at(format!("{p}.g")), b: at(format!("{p}.b")) };
        let attn = |p: String| Attn {
            wq: at(format!("{p}.wq")),
            bq: at(format!("{p}.bq")),
            wk: at(format!("{p}.wk")),
            bk: at(format!("{p}.bk")),
            wv: at(format!("{p}.wv")),
            bv: at(format!("{p}.bv")),
            wo: at(format!("{p}.wo")),
            bo: at(format!("{p}.bo")),
        };
        let ffn = |p: String| Ffn {
            w1: at(format!("{p}.w1")),
            b1: at(format!("{p}.b1")),
            w2: at(format!("{p}.w2")),
            b2: at(format!("{p}.b2")),
        };
        Self {
            token: at("emb.token".into()),
            velocity: at("emb.velocity".into()),
            duration: at("emb.duration".into()),
            bar: at("emb.bar".into()),
            position: at("emb.position".into()),
            meta: at("emb.meta".into()),
            enc: (0..cfg.enc_layers)
                .map(|l| EncLayer {
                    ln1: norm(format!("enc.{l}.ln1")),
                    attn: attn(format!("enc.{l}.self")),
                    ln2: norm(format!("enc.{l}.ln2")),
                    ffn: ffn(format!("enc.{l}.ffn")),
                })
                .collect(),
            enc_ln: (cfg.enc_layers > 0).then(|| norm("enc.ln".into())),
            dec: (0..cfg.dec_layers)
                .map(|l| DecLayer {
                    ln1: norm(format!("dec.{l}.ln1")),
                    attn: attn(format!("dec.{l}.self")),
                    ln2: norm(format!("dec.{l}.ln2")),
                    cross: attn(format!("dec.{l}.cross")),
                    ln3: norm(format!("dec.{l}.ln3")),
                    ffn: ffn(format!("dec.{l}.ffn")),
                })
                .collect(),
            dec_ln: (cfg.dec_layers > 0).then(|| norm("dec.ln".into())),
            heads: ["symbol", "velocity", "duration"].map(|h| (at(format!("head.{h}.w")), at(format!("head.{h}.b")))),
        }
    }
}

/// Dropout masks drawn from a seeded generator. `None` disables dropout.
pub struct Dropout<'r> {
    pub p: f64,
    pub rng: &'r mut ChaCha8Rng,
}

fn drop(t: &mut Tape, x: NodeId, dropout: &mut Option<Dropout>) -> NodeId {
    match dropout {
        Some(d) if d.p > 0.0 => {
            let keep = 1.0 - d.p;
            let shape = t.value(x).raw_dim();
            let mask = Array2::from_shape_simple_fn(shape, || if d.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 });
            t.dropout(x, mask)
        }
        _ => x,
    }
}

/// Encoder output for one segment.
pub struct EncoderOut {
    /// Context rows, one per input step.
    pub context: NodeId,
    pub layer_inputs: Vec<Array2<f64>>,
}

/// Decoder output: logits of the symbol, velocity and duration heads.
pub struct DecoderOut {
    pub h1: NodeId,
    pub h2: NodeId,
    pub h3: NodeId,
    pub layer_inputs: Vec<Array2<f64>>,
}

/// Keys a causal segment may see: every memory row, then itself and
/// earlier steps.
pub fn causal_mask(queries: usize, memory: usize) -> Array2<bool> {
    Array2::from_shape_fn((queries, memory + queries), |(i, j)| j < memory || j - memory <= i)
}

/// Cross-attention restricted to context rows of the query's bar.
pub fn bar_mask(query_bars: &[u32], context_bars: &[u32]) -> Array2<bool> {
    Array2::from_shape_fn((query_bars.len(), context_bars.len()), |(i, j)| query_bars[i] == context_bars[j])
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    names: Vec<String>,
    params: Vec<Array2<f64>>,
    layout: Layout,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.cfg == other.cfg && self.names == other.names && self.params == other.params
    }
}

impl Model {
    /// Random initialization: weights and embeddings from N(0, 0.02),
    /// biases zero, norm gains one.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let shapes = param_shapes(&cfg);
        let mut names = Vec::with_capacity(shapes.len());
        let mut params = Vec::with_capacity(shapes.len());
        for (name, [r, c]) in shapes {
            let last = name.rsplit('.').next().unwrap_or_default();
            let t = if last == "g" {
                Array2::ones((r, c))
            } else if last.starts_with('b') {
                Array2::zeros((r, c))
            } else {
                Array2::from_shape_simple_fn((r, c), || normal.sample(&mut rng))
            };
            names.push(name);
            params.push(t);
        }
        Self::from_parts(cfg, names, params)
    }

    /// Rebuilds a model from named tensors in storage order.
    pub fn from_parts(cfg: ModelConfig, names: Vec<String>, params: Vec<Array2<f64>>) -> Result<Self, ModelError> {
        cfg.validate()?;
        let shapes = param_shapes(&cfg);
        if shapes.len() != names.len() || shapes.len() != params.len() {
            return Err(ModelError::Checkpoint("tensor count does not match the configuration".into()));
        }
        for ((name, [r, c]), (n, p)) in shapes.iter().zip(names.iter().zip(&params)) {
            if name != n || p.dim() != (*r, *c) {
                return Err(ModelError::Checkpoint(format!("tensor {n} does not match {name} {r}x{c}")));
            }
        }
        let layout = Layout::new(&cfg, &names);
        Ok(Self { cfg, names, params, layout })
    }

    fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn tape(&self) -> Tape<'_> {
        Tape::new(&self.params)
    }

    pub fn empty_encoder_memory(&self) -> SegmentMemory {
        SegmentMemory::empty(self.cfg.enc_layers, self.cfg.d_model)
    }

    pub fn empty_decoder_memory(&self) -> SegmentMemory {
        SegmentMemory::empty(self.cfg.dec_layers, self.cfg.d_model)
    }

    /// Sum of token (or pitch + velocity + duration), bar, position and
    /// tempo embeddings for each step.
    pub fn embed(&self, t: &mut Tape, steps: &[Step], tempo: TempoClass) -> NodeId {
        let l = self.layout();
        let cap = self.cfg.max_bars - 1;
        let lookups: [(usize, Vec<Option<usize>>); 6] = [
            (l.token, steps.iter().map(|s| Some(s.symbol)).collect()),
            (l.velocity, steps.iter().map(|s| s.velocity).collect()),
            (l.duration, steps.iter().map(|s| s.duration).collect()),
            (l.bar, steps.iter().map(|s| Some((s.bar as usize).min(cap))).collect()),
            (l.position, steps.iter().map(|s| Some(s.pos)).collect()),
            (l.meta, steps.iter().map(|_| Some(tempo.index())).collect()),
        ];
        let mut acc: Option<NodeId> = None;
        for (table, idx) in lookups {
            let tab = t.param(table);
            let e = t.gather(tab, idx);
            acc = Some(match acc {
                Some(a) => t.add(a, e),
                None => e,
            });
        }
        acc.expect("six lookups")
    }

    fn attention(&self, t: &mut Tape, a: &Attn, q_src: NodeId, kv_src: NodeId, mask: &Array2<bool>) -> NodeId {
        let p = |t: &mut Tape, i: usize| t.param(i);
        let (wq, bq, wk, bk, wv, bv, wo, bo) =
            (p(t, a.wq), p(t, a.bq), p(t, a.wk), p(t, a.bk), p(t, a.wv), p(t, a.bv), p(t, a.wo), p(t, a.bo));
        let q = t.linear(q_src, wq, bq);
        let k = t.linear(kv_src, wk, bk);
        let v = t.linear(kv_src, wv, bv);
        let o = t.attention(q, k, v, self.cfg.heads, mask);
        t.linear(o, wo, bo)
    }

    fn norm(t: &mut Tape, n: &Norm, x: NodeId) -> NodeId {
        let (g, b) = (t.param(n.g), t.param(n.b));
        t.layer_norm(x, g, b)
    }

    fn ffn(t: &mut Tape, f: &Ffn, x: NodeId, dropout: &mut Option<Dropout>) -> NodeId {
        let (w1, b1, w2, b2) = (t.param(f.w1), t.param(f.b1), t.param(f.w2), t.param(f.b2));
        let h = t.linear(x, w1, b1);
        let h = t.gelu(h);
        let h = drop(t, h, dropout);
        t.linear(h, w2, b2)
    }

    /// Normalized queries and the keys/values source `[memory ‖ segment]`.
    fn self_sources(t: &mut Tape, n: &Norm, h: NodeId, mem: &Array2<f64>) -> (NodeId, NodeId) {
        let q = Self::norm(t, n, h);
        if mem.nrows() == 0 {
            return (q, q);
        }
        let m = t.constant(mem.clone());
        let m = Self::norm(t, n, m);
        let kv = t.concat_rows(vec![m, q]);
        (q, kv)
    }

    /// One encoder segment, causal within itself and seeing all of `mem`.
    pub fn encode_segment(
        &self,
        t: &mut Tape,
        x: NodeId,
        mem: &SegmentMemory,
        dropout: &mut Option<Dropout>,
    ) -> EncoderOut {
        let l = self.layout();
        let steps = t.value(x).nrows();
        let mut h = drop(t, x, dropout);
        let mut layer_inputs = Vec::with_capacity(l.enc.len());
        for (layer, m) in l.enc.iter().zip(&mem.layers) {
            layer_inputs.push(t.value(h).clone());
            let (q, kv) = Self::self_sources(t, &layer.ln1, h, m);
            let a = self.attention(t, &layer.attn, q, kv, &causal_mask(steps, m.nrows()));
            let a = drop(t, a, dropout);
            h = t.add(h, a);
            let n = Self::norm(t, &layer.ln2, h);
            let f = Self::ffn(t, &layer.ffn, n, dropout);
            let f = drop(t, f, dropout);
            h = t.add(h, f);
        }
        let context = match &l.enc_ln {
            Some(n) => Self::norm(t, n, h),
            None => h,
        };
        EncoderOut { context, layer_inputs }
    }

    /// One decoder segment. Step `i` cross-attends to the context rows
    /// whose bar equals `query_bars[i]`; without any such row it receives a
    /// zero attention output. `context = None` means no context at all.
    #[allow(clippy::too_many_arguments)]
    pub fn decode_segment(
        &self,
        t: &mut Tape,
        y: NodeId,
        query_bars: &[u32],
        context: Option<(NodeId, &[u32])>,
        mem: &SegmentMemory,
        dropout: &mut Option<Dropout>,
    ) -> DecoderOut {
        let l = self.layout();
        let steps = t.value(y).nrows();
        let (ctx, ctx_bars): (NodeId, Vec<u32>) = match context {
            Some((c, bars)) => (c, bars.to_vec()),
            None => (t.constant(Array2::zeros((1, self.cfg.d_model))), vec![u32::MAX]),
        };
        let cross_mask = bar_mask(query_bars, &ctx_bars);
        let mut h = drop(t, y, dropout);
        let mut layer_inputs = Vec::with_capacity(l.dec.len());
        for (layer, m) in l.dec.iter().zip(&mem.layers) {
            layer_inputs.push(t.value(h).clone());
            let (q, kv) = Self::self_sources(t, &layer.ln1, h, m);
            let a = self.attention(t, &layer.attn, q, kv, &causal_mask(steps, m.nrows()));
            let a = drop(t, a, dropout);
            h = t.add(h, a);
            let q = Self::norm(t, &layer.ln2, h);
            let c = self.attention(t, &layer.cross, q, ctx, &cross_mask);
            let c = drop(t, c, dropout);
            h = t.add(h, c);
            let n = Self::norm(t, &layer.ln3, h);
            let f = Self::ffn(t, &layer.ffn, n, dropout);
            let f = drop(t, f, dropout);
            h = t.add(h, f);
        }
        let out = match &l.dec_ln {
            Some(n) => Self::norm(t, n, h),
            None => h,
        };
        let [h1, h2, h3] = l.heads.map(|(w, b)| {
            let (w, b) = (t.param(w), t.param(b));
            t.linear(out, w, b)
        });
        DecoderOut { h1, h2, h3, layer_inputs }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Quality;

    #[test]
    fn annotation_tracks_bar_position_and_drums() {
        let toks = vec![
            Token::Bar,
            Token::Pos(1),
            Token::Chord(crate::codec::ChordSymbol::new(0, Quality::Major)),
            Token::Track(Role::Drum),
            Token::note(37, 10, 2),
            Token::Bar,
            Token::Pos(5),
            Token::Track(Role::Piano),
            Token::note(61, 10, 2),
        ];
        let s = annotate(&toks);
        assert_eq!((s[0].bar, s[0].pos), (0, 0));
        assert_eq!((s[2].bar, s[2].pos), (0, 1));
        assert_eq!(Symbol::from_index(s[4].symbol), Some(Symbol::Drum(37)));
        assert_eq!(s[4].velocity, Some(9));
        assert_eq!((s[5].bar, s[5].pos), (1, 0));
        assert_eq!(Symbol::from_index(s[8].symbol), Some(Symbol::Pitch(61)));
        assert_eq!(s[8].pos, 5);
    }

    #[test]
    fn memory_cap() {
        let m = SegmentMemory::empty(2, 4);
        let seg = vec![Array2::zeros((300, 4)), Array2::zeros((300, 4))];
        let m = m.extended(&seg, 512).extended(&seg, 512);
        assert_eq!(m.len(), 512);
        assert_eq!(m.extended(&seg, 0).len(), 0);
    }
}

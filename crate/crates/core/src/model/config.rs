use serde::{Deserialize, Serialize};

use crate::codec::{ChordSymbol, Role, Token};

use super::ModelError;

/// Primary-head symbols: Bar, 32 positions, 6 tracks, 84 chords, 128
/// pitches, 128 drum types.
pub const V1: usize = 1 + 32 + 6 + ChordSymbol::COUNT + 128 + 128;
pub const V2: usize = 32;
pub const V3: usize = 32;

const POS_BASE: usize = 1;
const TRACK_BASE: usize = POS_BASE + 32;
const CHORD_BASE: usize = TRACK_BASE + 6;
const PITCH_BASE: usize = CHORD_BASE + ChordSymbol::COUNT;
const DRUM_BASE: usize = PITCH_BASE + 128;

/// What a primary-head symbol stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symbol {
    Bar,
    Pos(u8),
    Track(Role),
    Chord(ChordSymbol),
    Pitch(u8),
    Drum(u8),
}

impl Symbol {
    pub fn index(self) -> usize {
        match self {
            Symbol::Bar => 0,
            Symbol::Pos(k) => POS_BASE + usize::from(k) - 1,
            Symbol::Track(r) => TRACK_BASE + r.index(),
            Symbol::Chord(c) => CHORD_BASE + c.index(),
            Symbol::Pitch(p) => PITCH_BASE + usize::from(p) - 1,
            Symbol::Drum(p) => DRUM_BASE + usize::from(p) - 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Symbol> {
        Some(match i {
            0 => Symbol::Bar,
            _ if i < TRACK_BASE => Symbol::Pos((i - POS_BASE + 1) as u8),
            _ if i < CHORD_BASE => Symbol::Track(Role::from_index(i - TRACK_BASE)?),
            _ if i < PITCH_BASE => Symbol::Chord(ChordSymbol::from_index(i - CHORD_BASE)?),
            _ if i < DRUM_BASE => Symbol::Pitch((i - PITCH_BASE + 1) as u8),
            _ if i < V1 => Symbol::Drum((i - DRUM_BASE + 1) as u8),
            _ => return None,
        })
    }

    /// Symbol of a token; notes need the role of their track.
    pub fn of_token(t: &Token, track: Option<Role>) -> Symbol {
        match *t {
            Token::Bar => Symbol::Bar,
            Token::Pos(k) => Symbol::Pos(k),
            Token::Track(r) => Symbol::Track(r),
            Token::Chord(c) => Symbol::Chord(c),
            Token::Note { pitch_or_drum, .. } if track.is_some_and(Role::is_drum) => Symbol::Drum(pitch_or_drum),
            Token::Note { pitch_or_drum, .. } => Symbol::Pitch(pitch_or_drum),
        }
    }

    pub fn is_note(self) -> bool {
        matches!(self, Symbol::Pitch(_) | Symbol::Drum(_))
    }

    pub fn pitch_symbols() -> std::ops::Range<usize> {
        PITCH_BASE..DRUM_BASE
    }

    pub fn drum_symbols() -> std::ops::Range<usize> {
        DRUM_BASE..V1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub ffn_size: usize,
    pub dropout: f64,
    /// Bar embeddings; later bars share the last one.
    pub max_bars: usize,
    pub mem_len_enc: usize,
    pub mem_len_dec: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 512,
            enc_layers: 4,
            dec_layers: 8,
            heads: 8,
            ffn_size: 2048,
            dropout: 0.1,
            max_bars: 32,
            mem_len_enc: 512,
            mem_len_dec: 512,
        }
    }
}

impl ModelConfig {
    /// A configuration small enough for tests and laptop-scale runs.
    pub fn tiny() -> Self {
        Self { d_model: 32, enc_layers: 1, dec_layers: 1, heads: 2, ffn_size: 64, dropout: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.d_model == 0 || self.heads == 0 || self.ffn_size == 0 || self.max_bars == 0 {
            return bad("d_model, heads, ffn_size and max_bars must be positive");
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad("d_model must be divisible by heads");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Shape of every learnable tensor, in storage order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, [usize; 2])> {
    let d = cfg.d_model;
    let f = cfg.ffn_size;
    let mut out: Vec<(String, [usize; 2])> = vec![
        ("emb.token".into(), [V1, d]),
        ("emb.velocity".into(), [V2, d]),
        ("emb.duration".into(), [V3, d]),
        ("emb.bar".into(), [cfg.max_bars, d]),
        ("emb.position".into(), [33, d]),
        ("emb.meta".into(), [3, d]),
    ];
    let norm = |out: &mut Vec<(String, [usize; 2])>, p: &str| {
        out.push((format!("{p}.g"), [1, d]));
        out.push((format!("{p}.b"), [1, d]));
    };
    let attn = |out: &mut Vec<(String, [usize; 2])>, p: &str| {
        for m in ["q", "k", "v", "o"] {
            out.push((format!("{p}.w{m}"), [d, d]));
            out.push((format!("{p}.b{m}"), [1, d]));
        }
    };
    let ffn = |out: &mut Vec<(String, [usize; 2])>, p: &str| {
        out.push((format!("{p}.w1"), [d, f]));
        out.push((format!("{p}.b1"), [1, f]));
        out.push((format!("{p}.w2"), [f, d]));
        out.push((format!("{p}.b2"), [1, d]));
    };
    for l in 0..cfg.enc_layers {
        norm(&mut out, &format!("enc.{l}.ln1"));
        attn(&mut out, &format!("enc.{l}.self"));
        norm(&mut out, &format!("enc.{l}.ln2"));
        ffn(&mut out, &format!("enc.{l}.ffn"));
    }
    if cfg.enc_layers > 0 {
        norm(&mut out, "enc.ln");
    }
    for l in 0..cfg.dec_layers {
        norm(&mut out, &format!("dec.{l}.ln1"));
        attn(&mut out, &format!("dec.{l}.self"));
        norm(&mut out, &format!("dec.{l}.ln2"));
        attn(&mut out, &format!("dec.{l}.cross"));
        norm(&mut out, &format!("dec.{l}.ln3"));
        ffn(&mut out, &format!("dec.{l}.ffn"));
    }
    if cfg.dec_layers > 0 {
        norm(&mut out, "dec.ln");
    }
    for (name, v) in [("symbol", V1), ("velocity", V2), ("duration", V3)] {
        out.push((format!("head.{name}.w"), [d, v]));
        out.push((format!("head.{name}.b"), [1, v]));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub embeddings: usize,
    pub encoder: usize,
    pub decoder: usize,
    pub heads: usize,
    pub total: usize,
}

impl std::fmt::Display for ParamCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "embeddings {:>12}", self.embeddings)?;
        writeln!(f, "encoder    {:>12}", self.encoder)?;
        writeln!(f, "decoder    {:>12}", self.decoder)?;
        writeln!(f, "heads      {:>12}", self.heads)?;
        write!(f, "total      {:>12} ({:.2}M)", self.total, self.total as f64 / 1e6)
    }
}

/// Exact number of learnable parameters, split by component.
pub fn param_count(cfg: &ModelConfig) -> ParamCount {
    let mut c = ParamCount { embeddings: 0, encoder: 0, decoder: 0, heads: 0, total: 0 };
    for (name, [r, k]) in param_shapes(cfg) {
        let n = r * k;
        match name.split('.').next() {
            Some("emb") => c.embeddings += n,
            Some("enc") => c.encoder += n,
            Some("dec") => c.decoder += n,
            _ => c.heads += n,
        }
        c.total += n;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbol_table_is_a_bijection() {
        assert_eq!(V1, 379);
        for i in 0..V1 {
            assert_eq!(Symbol::from_index(i).unwrap().index(), i);
        }
        assert_eq!(Symbol::from_index(V1), None);
    }

    #[test]
    fn zero_layers_count_only_embeddings_and_heads() {
        let cfg = ModelConfig { enc_layers: 0, dec_layers: 0, ..ModelConfig::tiny() };
        let c = param_count(&cfg);
        assert_eq!(c.encoder + c.decoder, 0);
        assert_eq!(c.total, c.embeddings + c.heads);
    }
}

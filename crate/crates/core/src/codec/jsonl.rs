//! JSON Lines form of token sequences: one piece per line,
//! `{"tempo":"mid","tokens":[["bar"],["pos",1],["track","piano"],["chord","C","major"],["note",61,20,8]]}`.

use std::io::{BufRead, Write};

use serde_json::{json, Value};

use super::types::{ChordSymbol, Role, TempoClass, Token, TokenSeq};
use super::CodecError;

fn token_to_json(t: &Token) -> Value {
    match t {
        Token::Bar => json!(["bar"]),
        Token::Pos(k) => json!(["pos", k]),
        Token::Track(r) => json!(["track", r.name()]),
        Token::Chord(c) => json!(["chord", c.root_name(), c.quality.name()]),
        Token::Note { pitch_or_drum, vel_level, dur_steps } => json!(["note", pitch_or_drum, vel_level, dur_steps]),
    }
}

fn small_int(v: &Value) -> Result<u8, CodecError> {
    v.as_u64()
        .and_then(|x| u8::try_from(x).ok())
        .ok_or_else(|| CodecError::Json(format!("expected small integer, got {v}")))
}

fn token_from_json(v: &Value) -> Result<Token, CodecError> {
    let arr = v.as_array().ok_or_else(|| CodecError::Json(format!("token is not an array: {v}")))?;
    let tag = arr.first().and_then(Value::as_str).unwrap_or_default();
    let text = |i: usize| arr.get(i).and_then(Value::as_str).ok_or_else(|| CodecError::Json(format!("bad token {v}")));
    let arity = |n: usize| {
        if arr.len() == n {
            Ok(())
        } else {
            Err(CodecError::Json(format!("token {v} has wrong arity")))
        }
    };
    match tag {
        "bar" => {
            arity(1)?;
            Ok(Token::Bar)
        }
        "pos" => {
            arity(2)?;
            Ok(Token::Pos(small_int(&arr[1])?))
        }
        "track" => {
            arity(2)?;
            Ok(Token::Track(text(1)?.parse::<Role>()?))
        }
        "chord" => {
            arity(3)?;
            Ok(Token::Chord(ChordSymbol::parse(text(1)?, text(2)?)?))
        }
        "note" => {
            arity(4)?;
            Ok(Token::note(small_int(&arr[1])?, small_int(&arr[2])?, small_int(&arr[3])?))
        }
        _ => Err(CodecError::Json(format!("unknown token {v}"))),
    }
}

/// One JSON line (without the trailing newline). Keys appear as `tempo`, `tokens`.
pub fn seq_to_json(seq: &TokenSeq) -> String {
    let tokens: Vec<String> = seq.tokens.iter().map(|t| token_to_json(t).to_string()).collect();
    format!("{{\"tempo\":\"{}\",\"tokens\":[{}]}}", seq.tempo.name(), tokens.join(","))
}

pub fn seq_from_json(line: &str) -> Result<TokenSeq, CodecError> {
    let v: Value = serde_json::from_str(line).map_err(|e| CodecError::Json(e.to_string()))?;
    let tempo = v
        .get("tempo")
        .and_then(Value::as_str)
        .ok_or_else(|| CodecError::Json("missing \"tempo\"".into()))?
        .parse::<TempoClass>()?;
    let tokens = v
        .get("tokens")
        .and_then(Value::as_array)
        .ok_or_else(|| CodecError::Json("missing \"tokens\"".into()))?
        .iter()
        .map(token_from_json)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TokenSeq::new(tempo, tokens))
}

pub fn write_jsonl<W: Write>(mut w: W, seqs: &[TokenSeq]) -> std::io::Result<()> {
    for s in seqs {
        writeln!(w, "{}", seq_to_json(s))?;
    }
    Ok(())
}

/// Reads every non-blank line; errors carry the 1-based line number.
pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<TokenSeq>, (usize, CodecError)> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| (i + 1, CodecError::Json(e.to_string())))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(seq_from_json(&line).map_err(|e| (i + 1, e))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Quality;

    #[test]
    fn exact_line_format() {
        let seq = TokenSeq::new(
            TempoClass::High,
            vec![
                Token::Bar,
                Token::Pos(1),
                Token::Chord(ChordSymbol::new(1, Quality::HalfDiminished)),
                Token::Track(Role::Piano),
                Token::note(61, 20, 8),
            ],
        );
        let line = seq_to_json(&seq);
        assert_eq!(
            line,
            r#"{"tempo":"high","tokens":[["bar"],["pos",1],["chord","C#","half_diminished"],["track","piano"],["note",61,20,8]]}"#
        );
        assert_eq!(seq_from_json(&line).unwrap(), seq);
    }

    #[test]
    fn rejects_malformed_tokens() {
        assert!(seq_from_json(r#"{"tempo":"mid","tokens":[["pos"]]}"#).is_err());
        assert!(seq_from_json(r#"{"tempo":"fast","tokens":[]}"#).is_err());
        assert!(seq_from_json(r#"{"tempo":"mid","tokens":[["track","kazoo"]]}"#).is_err());
        assert!(seq_from_json(r#"{"tempo":"mid","tokens":[["note",300,1,1]]}"#).is_err());
    }
}

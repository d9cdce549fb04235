//! Line-oriented trace files: `A <key>`, `I <key>`, `D <key>`, `X <key>`.

use std::fmt::Write as _;

use dyntree::oracles::Op;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

pub fn parse(text: &str) -> Result<Vec<Op>, ParseError> {
    let mut ops = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: &str| ParseError {
            line,
            message: message.to_string(),
        };
        let mut parts = raw.split_whitespace();
        let Some(tag) = parts.next() else {
            continue;
        };
        let key: u64 = parts
            .next()
            .ok_or_else(|| err("missing key"))?
            .parse()
            .map_err(|_| err("key is not an unsigned 64-bit integer"))?;
        if parts.next().is_some() {
            return Err(err("trailing fields"));
        }
        ops.push(match tag {
            "A" => Op::Access(key),
            "I" => Op::Insert(key),
            "D" => Op::Decrement(key),
            "X" => Op::Delete(key),
            _ => return Err(err("unknown record type")),
        });
    }
    Ok(ops)
}

/// Searches have no record type and are skipped.
pub fn render(ops: &[Op]) -> String {
    let mut out = String::with_capacity(ops.len() * 8);
    for op in ops {
        let (tag, key) = match *op {
            Op::Access(k) => ('A', k),
            Op::Insert(k) => ('I', k),
            Op::Decrement(k) => ('D', k),
            Op::Delete(k) => ('X', k),
            Op::Search(_) => continue,
        };
        writeln!(out, "{tag} {key}").expect("writing to a String");
    }
    out
}

//! Line-oriented kernel descriptor format.
//!
//! ```text
//! # comment
//! kernel gemv
//! array A words=64 bits=32
//! loop row trip=8 add=0 mul=0
//! loop col trip=8 parent=row add=1 mul=1 arrays=A,x
//! hazard=0.05
//! ```

use std::fmt::Write as _;

use super::{ArrayInfo, KernelDescriptor, LoopInfo};
use crate::error::{Error, Result};

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| parse_err(line, format!("`{key}` expects a number, got `{value}`")))
}

fn split_kv(line: usize, token: &str) -> Result<(&str, &str)> {
    token
        .split_once('=')
        .ok_or_else(|| parse_err(line, format!("expected key=value, got `{token}`")))
}

/// Parse and validate a kernel descriptor.
pub fn parse_kernel_descriptor(text: &str) -> Result<KernelDescriptor> {
    let mut name: Option<String> = None;
    let mut loops = Vec::new();
    let mut arrays = Vec::new();
    let mut hazard = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let head = tokens.next().unwrap_or_default();
        match head {
            "kernel" => {
                let n = tokens
                    .next()
                    .ok_or_else(|| parse_err(line_no, "`kernel` needs a name"))?;
                if tokens.next().is_some() {
                    return Err(parse_err(line_no, "trailing tokens after kernel name"));
                }
                if name.replace(n.to_string()).is_some() {
                    return Err(parse_err(line_no, "duplicate `kernel` line"));
                }
            }
            "loop" => {
                let id = tokens
                    .next()
                    .ok_or_else(|| parse_err(line_no, "`loop` needs an id"))?;
                let mut lp = LoopInfo {
                    id: id.to_string(),
                    trip_count: 0,
                    parent: None,
                    ops_add: 0,
                    ops_mul: 0,
                    arrays: Vec::new(),
                };
                let mut saw_trip = false;
                for tok in tokens {
                    let (key, value) = split_kv(line_no, tok)?;
                    match key {
                        "trip" => {
                            lp.trip_count = parse_num(line_no, key, value)?;
                            saw_trip = true;
                        }
                        "parent" => lp.parent = Some(value.to_string()),
                        "add" => lp.ops_add = parse_num(line_no, key, value)?,
                        "mul" => lp.ops_mul = parse_num(line_no, key, value)?,
                        "arrays" => {
                            lp.arrays = value
                                .split(',')
                                .filter(|s| !s.is_empty())
                                .map(str::to_string)
                                .collect();
                            lp.arrays.sort();
                            lp.arrays.dedup();
                        }
                        other => {
                            return Err(parse_err(line_no, format!("unknown loop key `{other}`")))
                        }
                    }
                }
                if !saw_trip {
                    return Err(parse_err(line_no, "loop is missing `trip=`"));
                }
                loops.push(lp);
            }
            "array" => {
                let n = tokens
                    .next()
                    .ok_or_else(|| parse_err(line_no, "`array` needs a name"))?;
                let mut words = None;
                let mut bits = None;
                for tok in tokens {
                    let (key, value) = split_kv(line_no, tok)?;
                    match key {
                        "words" => words = Some(parse_num(line_no, key, value)?),
                        "bits" => bits = Some(parse_num(line_no, key, value)?),
                        other => {
                            return Err(parse_err(line_no, format!("unknown array key `{other}`")))
                        }
                    }
                }
                arrays.push(ArrayInfo {
                    name: n.to_string(),
                    num_words: words.ok_or_else(|| parse_err(line_no, "array missing `words=`"))?,
                    word_bits: bits.ok_or_else(|| parse_err(line_no, "array missing `bits=`"))?,
                });
            }
            _ if head.starts_with("hazard=") => {
                if tokens.next().is_some() {
                    return Err(parse_err(line_no, "trailing tokens after hazard"));
                }
                let (_, value) = split_kv(line_no, head)?;
                if hazard.replace(parse_num::<f64>(line_no, "hazard", value)?).is_some() {
                    return Err(parse_err(line_no, "duplicate `hazard=` line"));
                }
            }
            other => return Err(parse_err(line_no, format!("unknown directive `{other}`"))),
        }
    }

    let kernel = KernelDescriptor {
        name: name.ok_or_else(|| parse_err(0, "missing `kernel <name>` line"))?,
        loops,
        arrays,
        hazard_fraction: hazard.unwrap_or(0.0),
    };
    kernel.validate()?;
    Ok(kernel)
}

/// Serialize a descriptor back to the text format; `parse_kernel_descriptor`
/// of the output reproduces the descriptor exactly.
pub fn serialize_kernel_descriptor(kernel: &KernelDescriptor) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "kernel {}", kernel.name);
    for a in &kernel.arrays {
        let _ = writeln!(out, "array {} words={} bits={}", a.name, a.num_words, a.word_bits);
    }
    for l in &kernel.loops {
        let _ = write!(out, "loop {} trip={}", l.id, l.trip_count);
        if let Some(p) = &l.parent {
            let _ = write!(out, " parent={p}");
        }
        let _ = write!(out, " add={} mul={}", l.ops_add, l.ops_mul);
        if !l.arrays.is_empty() {
            let _ = write!(out, " arrays={}", l.arrays.join(","));
        }
        out.push('\n');
    }
    // `{:?}` prints the shortest representation that round-trips.
    let _ = writeln!(out, "hazard={:?}", kernel.hazard_fraction);
    out
}

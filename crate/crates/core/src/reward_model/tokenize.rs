//! Pragma-aware tokenization.
//!
//! Lines are split at whitespace and around every punctuation character.
//! Tokens map to ids through a salted stable hash; id 0 is `[PAD]` and id 1 is
//! `[PRAGMA]`, which is emitted in front of every `#pragma HLS` line.
//!
//! A mean-pooled bag of tokens cannot tell which directive or loop a number
//! belongs to (`UNROLL factor=2` with `II=4` pools exactly like
//! `UNROLL factor=4` with `II=2`). Each pragma line therefore ends with one extra scoped token: the
//! hash of the enclosing loop label together with the whole normalized line.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::rng::stable_hash;

pub const PAD_ID: u32 = 0;
pub const PRAGMA_ID: u32 = 1;
const RESERVED: u32 = 2;

pub const DEFAULT_VOCAB_SALT: &str = "qorseek-vocab-v1";
pub const DEFAULT_MAX_LEN: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenizedDesign {
    pub token_ids: Vec<u32>,
    /// Ascending positions of `[PRAGMA]` markers.
    pub pragma_token_positions: Vec<usize>,
}

impl TokenizedDesign {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub vocab_size: u32,
    pub max_len: usize,
    pub salt: String,
}

impl Tokenizer {
    pub fn new(vocab_size: u32, max_len: usize) -> Self {
        assert!(vocab_size > RESERVED, "vocabulary must leave room beyond the reserved ids");
        Tokenizer { vocab_size, max_len, salt: DEFAULT_VOCAB_SALT.to_string() }
    }

    pub fn token_id(&self, token: &str) -> u32 {
        let h = stable_hash(format!("{}\u{1f}{token}", self.salt).as_bytes());
        RESERVED + (h % u64::from(self.vocab_size - RESERVED)) as u32
    }

    pub fn tokenize(&self, text: &str) -> TokenizedDesign {
        let mut out = TokenizedDesign::default();
        let mut scope = String::new();
        'lines: for line in text.lines() {
            let toks = split_tokens(line);
            let pragma = line.trim_start().starts_with("#pragma HLS");
            if pragma {
                if out.token_ids.len() >= self.max_len {
                    break;
                }
                out.pragma_token_positions.push(out.token_ids.len());
                out.token_ids.push(PRAGMA_ID);
            } else if let [label, ":", ..] = toks.as_slice() {
                scope = label.to_string();
            }
            for tok in &toks {
                if out.token_ids.len() >= self.max_len {
                    break 'lines;
                }
                out.token_ids.push(self.token_id(tok));
            }
            if pragma {
                if out.token_ids.len() >= self.max_len {
                    break;
                }
                out.token_ids.push(self.token_id(&format!("{scope}\u{1e}{}", toks.join(" "))));
            }
        }
        out
    }

    pub fn tokenize_shared(&self, text: &str) -> Arc<TokenizedDesign> {
        Arc::new(self.tokenize(text))
    }
}

/// Identifier/number runs stay whole; every other non-space character is a
/// token of its own.
pub fn split_tokens(line: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in line.char_indices() {
        let word = c.is_alphanumeric() || c == '_';
        if word {
            start.get_or_insert(i);
            continue;
        }
        if let Some(s) = start.take() {
            out.push(&line[s..i]);
        }
        if !c.is_whitespace() {
            out.push(&line[i..i + c.len_utf8()]);
        }
    }
    if let Some(s) = start {
        out.push(&line[s..]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_punctuation() {
        assert_eq!(split_tokens("x = x + 1;"), vec!["x", "=", "x", "+", "1", ";"]);
        assert_eq!(
            split_tokens("#pragma HLS UNROLL factor=4"),
            vec!["#", "pragma", "HLS", "UNROLL", "factor", "=", "4"]
        );
    }

    #[test]
    fn plain_code_has_no_pragma_marker() {
        let t = Tokenizer::new(4096, 512).tokenize("x = x + 1;");
        assert!(t.pragma_token_positions.is_empty());
        assert_eq!(t.len(), 6);
        assert!(t.token_ids.iter().all(|id| (2..4096).contains(id)));
    }

    #[test]
    fn pragma_marker_precedes_the_line() {
        let tk = Tokenizer::new(4096, 512);
        let t = tk.tokenize("for (i) {\n#pragma HLS UNROLL factor=4\n}");
        assert_eq!(t.pragma_token_positions.len(), 1);
        let pos = t.pragma_token_positions[0];
        assert_eq!(t.token_ids[pos], PRAGMA_ID);
        assert_eq!(t.token_ids[pos + 1], tk.token_id("#"));
        assert_eq!(t.token_ids[pos + 2], tk.token_id("pragma"));
        assert_eq!(t.token_ids.iter().filter(|&&id| id == PRAGMA_ID).count(), 1);
    }

    #[test]
    fn scoped_token_binds_values_to_loops() {
        let tk = Tokenizer::new(4096, 512);
        let a = "L0: for (i) {\n#pragma HLS UNROLL factor=2\n#pragma HLS PIPELINE II=4\n}";
        let b = "L0: for (i) {\n#pragma HLS UNROLL factor=4\n#pragma HLS PIPELINE II=2\n}";
        let bag = |t: &TokenizedDesign| {
            let mut ids = t.token_ids.clone();
            ids.sort();
            ids
        };
        assert_ne!(bag(&tk.tokenize(a)), bag(&tk.tokenize(b)));
        let other_loop = a.replace("L0:", "L1:");
        assert_ne!(bag(&tk.tokenize(a)), bag(&tk.tokenize(&other_loop)));
    }

    #[test]
    fn deterministic_and_truncated() {
        let tk = Tokenizer::new(4096, 5);
        let a = tk.tokenize("a b c d e f g");
        assert_eq!(a, tk.tokenize("a b c d e f g"));
        assert_eq!(a.len(), 5);
        assert!(tk.tokenize("").is_empty());
    }
}

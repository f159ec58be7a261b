//! Fuzz-input representation and the mutation operators: AFL-derived
//! deterministic and stacked byte-level operators on the targeted message,
//! plus message-level operators over the session.

mod deterministic;
mod stacked;
mod trim;

pub use deterministic::{DeterministicPass, Stage};
pub use stacked::{stacked_mutation, StackedConfig};
pub use trim::trim_input;

use serde::{Deserialize, Serialize};

/// Hard cap on the total byte size of one fuzz input.
pub const MAX_INPUT_BYTES: usize = 1 << 20;

pub const ARITH_MAX: i64 = 35;
pub const INTERESTING_8: [i8; 9] = [-128, -1, 0, 1, 16, 32, 64, 100, 127];
pub const INTERESTING_16: [i16; 19] = [
    -128, -1, 0, 1, 16, 32, 64, 100, 127, -32768, -129, 128, 255, 256, 512, 1000, 1024, 4096,
    32767,
];
pub const INTERESTING_32: [i32; 27] = [
    -128, -1, 0, 1, 16, 32, 64, 100, 127, -32768, -129, 128, 255, 256, 512, 1000, 1024, 4096,
    32767, -2147483648, -100663046, -32769, 32768, 65535, 65536, 100663045, 2147483647,
];

/// An ordered sequence of request messages constituting one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzInput {
    pub messages: Vec<Vec<u8>>,
    #[serde(default)]
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub parent_id: Option<u64>,
    pub state_targeted: Option<u32>,
    pub operators_applied: Vec<String>,
}

impl FuzzInput {
    pub fn new(messages: Vec<Vec<u8>>) -> Self {
        FuzzInput {
            messages,
            provenance: Provenance::default(),
        }
    }

    pub fn from_lines(lines: &[&str]) -> Self {
        FuzzInput::new(lines.iter().map(|l| l.as_bytes().to_vec()).collect())
    }

    pub fn total_bytes(&self) -> usize {
        self.messages.iter().map(|m| m.len()).sum()
    }
}

/// User-supplied dictionary tokens for the overwrite/insert stages.
#[derive(Debug, Clone, Default)]
pub struct Dictionary {
    pub tokens: Vec<Vec<u8>>,
}

impl Dictionary {
    pub fn empty() -> Self {
        Dictionary { tokens: Vec::new() }
    }

    /// Parses the dictionary file format: one token per line, C-style
    /// escapes allowed, `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, DictionaryError> {
        let mut tokens = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            tokens.push(unescape(line).map_err(|msg| DictionaryError {
                line: lineno + 1,
                msg,
            })?);
        }
        Ok(Dictionary { tokens })
    }

    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::parse(&text)?)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("dictionary line {line}: {msg}")]
pub struct DictionaryError {
    pub line: usize,
    pub msg: String,
}

fn unescape(s: &str) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    let mut chars = s.bytes().peekable();
    while let Some(b) = chars.next() {
        if b != b'\\' {
            out.push(b);
            continue;
        }
        match chars.next() {
            Some(b'n') => out.push(b'\n'),
            Some(b'r') => out.push(b'\r'),
            Some(b't') => out.push(b'\t'),
            Some(b'0') => out.push(0),
            Some(b'\\') => out.push(b'\\'),
            Some(b'x') => {
                let hi = chars.next().ok_or("truncated \\x escape")?;
                let lo = chars.next().ok_or("truncated \\x escape")?;
                let hex = [hi, lo];
                let hex = std::str::from_utf8(&hex).map_err(|_| "bad \\x escape")?;
                out.push(u8::from_str_radix(hex, 16).map_err(|_| "bad \\x escape")?);
            }
            other => return Err(format!("unknown escape {other:?}")),
        }
    }
    Ok(out)
}

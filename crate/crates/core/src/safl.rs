//! The on-disk session format: magic "SAFL", version byte, message count,
//! then length-prefixed message bodies. All integers little-endian.

use crate::mutation::{FuzzInput, MAX_INPUT_BYTES};
use std::io::Write;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"SAFL";
pub const VERSION: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SaflError {
    #[error("bad magic at offset 0 (expected \"SAFL\")")]
    BadMagic,
    #[error("unsupported version {0} at offset 4")]
    BadVersion(u8),
    #[error("truncated file at offset {offset}: {what}")]
    Truncated { offset: usize, what: &'static str },
    #[error("message {index} length {len} exceeds the {max}-byte input cap")]
    Oversized { index: usize, len: usize, max: usize },
}

pub fn encode(input: &FuzzInput) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + input.total_bytes() + 4 * input.messages.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(input.messages.len() as u32).to_le_bytes());
    for msg in &input.messages {
        out.extend_from_slice(&(msg.len() as u32).to_le_bytes());
        out.extend_from_slice(msg);
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<FuzzInput, SaflError> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize, what: &'static str| -> Result<usize, SaflError> {
        let at = *pos;
        if bytes.len() < at + n {
            return Err(SaflError::Truncated { offset: at, what });
        }
        *pos += n;
        Ok(at)
    };

    let at = take(&mut pos, 4, "magic")?;
    if &bytes[at..at + 4] != MAGIC {
        return Err(SaflError::BadMagic);
    }
    let at = take(&mut pos, 1, "version")?;
    if bytes[at] != VERSION {
        return Err(SaflError::BadVersion(bytes[at]));
    }
    let at = take(&mut pos, 4, "message count")?;
    let count = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;

    let mut messages = Vec::new();
    for index in 0..count {
        let at = take(&mut pos, 4, "message length")?;
        let len = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        if len > MAX_INPUT_BYTES {
            return Err(SaflError::Oversized {
                index,
                len,
                max: MAX_INPUT_BYTES,
            });
        }
        let at = take(&mut pos, len, "message body")?;
        messages.push(bytes[at..at + len].to_vec());
    }
    Ok(FuzzInput::new(messages))
}

pub fn write_file(path: &Path, input: &FuzzInput) -> anyhow::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(input))?;
    Ok(())
}

pub fn read_file(path: &Path) -> anyhow::Result<FuzzInput> {
    let bytes = std::fs::read(path)?;
    decode(&bytes).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

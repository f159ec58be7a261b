//! Stacked (havoc-style) mutation: 2^k randomly chosen operators composed
//! on one input, mixing byte-level operators on the targeted message with
//! message-level operators over the session.

use super::{Dictionary, FuzzInput, ARITH_MAX, INTERESTING_16, INTERESTING_32, INTERESTING_8, MAX_INPUT_BYTES};
use rand::Rng;

const HAVOC_BLK_SMALL: usize = 32;
const HAVOC_BLK_MEDIUM: usize = 128;

#[derive(Debug, Clone)]
pub struct StackedConfig {
    /// Relative weight of each message-level operator against a byte-level
    /// one. At 1.0 the four message operators together count like four
    /// byte-level picks.
    pub message_op_weight: f64,
}

impl Default for StackedConfig {
    fn default() -> Self {
        StackedConfig {
            message_op_weight: 1.0,
        }
    }
}

const BYTE_OPS: usize = 9;
const MSG_OPS: usize = 4;

/// Applies `N = 2^k` (k uniform in 1..=7) stacked operators to a copy of
/// `input`. `corpus` supplies donor inputs for the cross-input operators;
/// size caps are enforced after every step. Fully determined by the rng.
pub fn stacked_mutation<R: Rng>(
    input: &FuzzInput,
    msg_idx: usize,
    corpus: &[FuzzInput],
    dict: &Dictionary,
    cfg: &StackedConfig,
    rng: &mut R,
) -> FuzzInput {
    let mut out = input.clone();
    let mut target = msg_idx.min(out.messages.len().saturating_sub(1));
    let n = 1usize << rng.gen_range(1..=7);
    let byte_w = 1.0f64;
    let total_w = BYTE_OPS as f64 * byte_w + MSG_OPS as f64 * cfg.message_op_weight;
    for _ in 0..n {
        let pick = rng.gen_range(0.0..total_w);
        let op = if pick < BYTE_OPS as f64 * byte_w {
            Op::Byte(rng.gen_range(0..BYTE_OPS))
        } else {
            Op::Message(rng.gen_range(0..MSG_OPS))
        };
        let before = out.clone();
        let applied = apply_op(&mut out, &mut target, op, corpus, dict, rng);
        if applied {
            out.provenance.operators_applied.push(op.name().to_string());
        }
        if out.total_bytes() > MAX_INPUT_BYTES {
            out = before; // revert the oversizing step
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Byte(usize),
    Message(usize),
}

impl Op {
    fn name(self) -> &'static str {
        match self {
            Op::Byte(0) => "flip_bit",
            Op::Byte(1) => "set_interesting",
            Op::Byte(2) => "sub",
            Op::Byte(3) => "add",
            Op::Byte(4) => "set_random_byte",
            Op::Byte(5) => "delete_bytes",
            Op::Byte(6) => "clone_bytes",
            Op::Byte(7) => "insert_const_block",
            Op::Byte(8) => "overwrite_bytes",
            Op::Byte(_) => "byte_op",
            Op::Message(0) => "msg_replace",
            Op::Message(1) => "msg_insert_before",
            Op::Message(2) => "msg_insert_after",
            Op::Message(_) => "msg_duplicate",
        }
    }
}

fn choose_block_len<R: Rng>(rng: &mut R, limit: usize) -> usize {
    if limit == 0 {
        return 0;
    }
    let max = match rng.gen_range(0..3) {
        0 => HAVOC_BLK_SMALL,
        1 => HAVOC_BLK_MEDIUM,
        _ => limit,
    }
    .min(limit);
    rng.gen_range(1..=max)
}

fn random_message<'a, R: Rng>(corpus: &'a [FuzzInput], rng: &mut R) -> Option<&'a [u8]> {
    if corpus.is_empty() {
        return None;
    }
    let donor = &corpus[rng.gen_range(0..corpus.len())];
    if donor.messages.is_empty() {
        return None;
    }
    Some(&donor.messages[rng.gen_range(0..donor.messages.len())])
}

fn apply_op<R: Rng>(
    out: &mut FuzzInput,
    target: &mut usize,
    op: Op,
    corpus: &[FuzzInput],
    dict: &Dictionary,
    rng: &mut R,
) -> bool {
    let _ = dict; // dictionary tokens participate via the deterministic pass
    match op {
        Op::Byte(kind) => {
            if out.messages.is_empty() {
                return false;
            }
            let msg = &mut out.messages[*target];
            apply_byte_op(msg, kind, rng)
        }
        Op::Message(kind) => {
            match kind {
                0 => {
                    // Replace the target message with a random corpus message.
                    if let Some(donor) = random_message(corpus, rng) {
                        if out.messages.is_empty() {
                            return false;
                        }
                        out.messages[*target] = donor.to_vec();
                        true
                    } else {
                        false
                    }
                }
                1 => {
                    if let Some(donor) = random_message(corpus, rng) {
                        out.messages.insert(*target, donor.to_vec());
                        *target += 1;
                        true
                    } else {
                        false
                    }
                }
                2 => {
                    if let Some(donor) = random_message(corpus, rng) {
                        let at = (*target + 1).min(out.messages.len());
                        out.messages.insert(at, donor.to_vec());
                        true
                    } else {
                        false
                    }
                }
                _ => {
                    if out.messages.is_empty() {
                        return false;
                    }
                    let dup = out.messages[*target].clone();
                    out.messages.insert(*target + 1, dup);
                    true
                }
            }
        }
    }
}

fn apply_byte_op<R: Rng>(msg: &mut Vec<u8>, kind: usize, rng: &mut R) -> bool {
    let len = msg.len();
    match kind {
        0 => {
            // Flip a single random bit.
            if len == 0 {
                return false;
            }
            let bit = rng.gen_range(0..len * 8);
            msg[bit / 8] ^= 0x80 >> (bit % 8);
            true
        }
        1 => {
            // Set a random byte/word/dword to an interesting value.
            let width = [1usize, 2, 4][rng.gen_range(0..3)];
            if len < width {
                return false;
            }
            let offset = rng.gen_range(0..=len - width);
            let big_endian = rng.gen_bool(0.5);
            let value: i64 = match width {
                1 => INTERESTING_8[rng.gen_range(0..INTERESTING_8.len())] as i64,
                2 => INTERESTING_16[rng.gen_range(0..INTERESTING_16.len())] as i64,
                _ => INTERESTING_32[rng.gen_range(0..INTERESTING_32.len())] as i64,
            };
            write_int(msg, offset, width, value as u64, big_endian);
            true
        }
        2 | 3 => {
            // Subtract/add at a random byte/word/dword.
            let width = [1usize, 2, 4][rng.gen_range(0..3)];
            if len < width {
                return false;
            }
            let offset = rng.gen_range(0..=len - width);
            let big_endian = width > 1 && rng.gen_bool(0.5);
            let delta = rng.gen_range(1..=ARITH_MAX);
            let delta = if kind == 2 { -delta } else { delta };
            let v = read_int(msg, offset, width, big_endian);
            let mask = if width == 8 { u64::MAX } else { (1u64 << (width * 8)) - 1 };
            write_int(
                msg,
                offset,
                width,
                (v as i64).wrapping_add(delta) as u64 & mask,
                big_endian,
            );
            true
        }
        4 => {
            if len == 0 {
                return false;
            }
            let offset = rng.gen_range(0..len);
            msg[offset] ^= rng.gen_range(1..=255u8);
            true
        }
        5 => {
            // Delete random bytes.
            if len == 0 {
                return false;
            }
            let del = choose_block_len(rng, len);
            let from = rng.gen_range(0..=len - del);
            msg.drain(from..from + del);
            true
        }
        6 => {
            // Clone random bytes to a random position.
            if len == 0 {
                return false;
            }
            let n = choose_block_len(rng, len);
            let from = rng.gen_range(0..=len - n);
            let block: Vec<u8> = msg[from..from + n].to_vec();
            let to = rng.gen_range(0..=len);
            msg.splice(to..to, block);
            true
        }
        7 => {
            // Insert a block of constant bytes.
            let n = choose_block_len(rng, HAVOC_BLK_MEDIUM.max(1));
            let value = if rng.gen_bool(0.5) {
                rng.gen()
            } else if len > 0 {
                msg[rng.gen_range(0..len)]
            } else {
                0
            };
            let to = rng.gen_range(0..=len);
            msg.splice(to..to, std::iter::repeat(value).take(n));
            true
        }
        _ => {
            // Overwrite with randomly selected bytes, or with a fixed byte.
            if len == 0 {
                return false;
            }
            let n = choose_block_len(rng, len);
            let to = rng.gen_range(0..=len - n);
            if rng.gen_bool(0.75) {
                let from = rng.gen_range(0..=len - n);
                let block: Vec<u8> = msg[from..from + n].to_vec();
                msg[to..to + n].copy_from_slice(&block);
            } else {
                let value: u8 = rng.gen();
                for b in &mut msg[to..to + n] {
                    *b = value;
                }
            }
            true
        }
    }
}

fn read_int(msg: &[u8], offset: usize, width: usize, big_endian: bool) -> u64 {
    let mut v = 0u64;
    for i in 0..width {
        let byte = if big_endian {
            msg[offset + i]
        } else {
            msg[offset + width - 1 - i]
        };
        v = (v << 8) | byte as u64;
    }
    v
}

fn write_int(msg: &mut [u8], offset: usize, width: usize, v: u64, big_endian: bool) {
    for i in 0..width {
        let byte = ((v >> (8 * i)) & 0xFF) as u8;
        if big_endian {
            msg[offset + width - 1 - i] = byte;
        } else {
            msg[offset + i] = byte;
        }
    }
}

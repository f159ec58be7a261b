//! The deterministic mutation pass: exhaustive walking mutations over one
//! message, in a fixed stage order. Only the targeted message is touched;
//! every other message stays byte-identical to the parent.
//!
//! Mutants that would equal the parent, or repeat an earlier mutant of the
//! same stage, are skipped, so each stage is duplicate-free. Repeats are
//! real: the little-endian bytes of one interesting value can equal the
//! big-endian bytes of its byte-swapped sibling (e.g. 1 vs 256), and
//! overlapping arithmetic windows can collide on runs of equal bytes.

use super::{Dictionary, FuzzInput, ARITH_MAX, INTERESTING_16, INTERESTING_32, INTERESTING_8, MAX_INPUT_BYTES};
use std::collections::HashSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    BitFlip1,
    BitFlip2,
    BitFlip4,
    ByteFlip1,
    ByteFlip2,
    ByteFlip4,
    Arith8,
    Arith16,
    Arith32,
    Interest8,
    Interest16,
    Interest32,
    DictOverwrite,
    DictInsert,
    Splice,
}

const STAGES: [Stage; 15] = [
    Stage::BitFlip1,
    Stage::BitFlip2,
    Stage::BitFlip4,
    Stage::ByteFlip1,
    Stage::ByteFlip2,
    Stage::ByteFlip4,
    Stage::Arith8,
    Stage::Arith16,
    Stage::Arith32,
    Stage::Interest8,
    Stage::Interest16,
    Stage::Interest32,
    Stage::DictOverwrite,
    Stage::DictInsert,
    Stage::Splice,
];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::BitFlip1 => "bitflip1",
            Stage::BitFlip2 => "bitflip2",
            Stage::BitFlip4 => "bitflip4",
            Stage::ByteFlip1 => "byteflip1",
            Stage::ByteFlip2 => "byteflip2",
            Stage::ByteFlip4 => "byteflip4",
            Stage::Arith8 => "arith8",
            Stage::Arith16 => "arith16",
            Stage::Arith32 => "arith32",
            Stage::Interest8 => "interest8",
            Stage::Interest16 => "interest16",
            Stage::Interest32 => "interest32",
            Stage::DictOverwrite => "dict_overwrite",
            Stage::DictInsert => "dict_insert",
            Stage::Splice => "splice",
        }
    }
}

/// Lazily yields `(stage, mutant)` pairs. The parent message at `msg_idx`
/// is the mutation target; `corpus` provides splice donors.
pub struct DeterministicPass<'a> {
    parent: &'a FuzzInput,
    msg_idx: usize,
    dict: &'a Dictionary,
    donors: Vec<&'a FuzzInput>,
    stage: usize,
    cursor: usize,
    /// Target-message bytes already emitted in the current stage.
    seen: HashSet<Vec<u8>>,
}

impl<'a> DeterministicPass<'a> {
    /// `msg_idx == parent.messages.len()` is allowed and yields nothing
    /// (there is no message to walk).
    pub fn new(
        parent: &'a FuzzInput,
        msg_idx: usize,
        dict: &'a Dictionary,
        donors: Vec<&'a FuzzInput>,
    ) -> Self {
        DeterministicPass {
            parent,
            msg_idx,
            dict,
            donors,
            stage: 0,
            cursor: 0,
            seen: HashSet::new(),
        }
    }

    fn target(&self) -> &[u8] {
        self.parent
            .messages
            .get(self.msg_idx)
            .map(|m| m.as_slice())
            .unwrap_or(&[])
    }

    fn make(&self, stage: Stage, msg: Vec<u8>) -> Option<FuzzInput> {
        if msg == *self.target() {
            return None;
        }
        let mut out = self.parent.clone();
        if self.msg_idx < out.messages.len() {
            out.messages[self.msg_idx] = msg;
        } else {
            return None;
        }
        if out.total_bytes() > MAX_INPUT_BYTES {
            return None;
        }
        out.provenance.operators_applied = vec![stage.name().to_string()];
        Some(out)
    }

    /// Computes the candidate for (stage, cursor), or None when the cursor
    /// is exhausted for this stage. `skip` marks in-range cursors whose
    /// candidate is suppressed by a dedup rule.
    fn candidate(&self, stage: Stage, cursor: usize) -> CursorResult {
        let m = self.target();
        let len = m.len();
        let bits = len * 8;
        match stage {
            Stage::BitFlip1 | Stage::BitFlip2 | Stage::BitFlip4 => {
                let n = match stage {
                    Stage::BitFlip1 => 1,
                    Stage::BitFlip2 => 2,
                    _ => 4,
                };
                if bits < n || cursor > bits - n {
                    return CursorResult::Done;
                }
                let mut msg = m.to_vec();
                for b in cursor..cursor + n {
                    msg[b / 8] ^= 0x80 >> (b % 8);
                }
                self.wrap(stage, msg)
            }
            Stage::ByteFlip1 | Stage::ByteFlip2 | Stage::ByteFlip4 => {
                let n = match stage {
                    Stage::ByteFlip1 => 1,
                    Stage::ByteFlip2 => 2,
                    _ => 4,
                };
                if len < n || cursor > len - n {
                    return CursorResult::Done;
                }
                let mut msg = m.to_vec();
                for b in &mut msg[cursor..cursor + n] {
                    *b ^= 0xFF;
                }
                self.wrap(stage, msg)
            }
            Stage::Arith8 => {
                // cursor = offset * 70 + delta_index
                let per = (2 * ARITH_MAX) as usize;
                if len == 0 || cursor >= len * per {
                    return CursorResult::Done;
                }
                let offset = cursor / per;
                let delta = delta_for(cursor % per);
                let mut msg = m.to_vec();
                msg[offset] = (msg[offset] as i64).wrapping_add(delta) as u8;
                self.wrap(stage, msg)
            }
            Stage::Arith16 => self.arith_wide::<2>(stage, cursor),
            Stage::Arith32 => self.arith_wide::<4>(stage, cursor),
            Stage::Interest8 => {
                let per = INTERESTING_8.len();
                if len == 0 || cursor >= len * per {
                    return CursorResult::Done;
                }
                let offset = cursor / per;
                let mut msg = m.to_vec();
                msg[offset] = INTERESTING_8[cursor % per] as u8;
                self.wrap(stage, msg)
            }
            Stage::Interest16 => self.interest_wide::<2>(stage, cursor),
            Stage::Interest32 => self.interest_wide::<4>(stage, cursor),
            Stage::DictOverwrite => {
                // cursor walks (token, offset) pairs in token order.
                let mut c = cursor;
                for tok in &self.dict.tokens {
                    if tok.len() > len {
                        continue;
                    }
                    let slots = len - tok.len() + 1;
                    if c < slots {
                        let mut msg = m.to_vec();
                        msg[c..c + tok.len()].copy_from_slice(tok);
                        return self.wrap(stage, msg);
                    }
                    c -= slots;
                }
                CursorResult::Done
            }
            Stage::DictInsert => {
                let mut c = cursor;
                for tok in &self.dict.tokens {
                    let slots = len + 1;
                    if c < slots {
                        let mut msg = Vec::with_capacity(len + tok.len());
                        msg.extend_from_slice(&m[..c]);
                        msg.extend_from_slice(tok);
                        msg.extend_from_slice(&m[c..]);
                        return self.wrap(stage, msg);
                    }
                    c -= slots;
                }
                CursorResult::Done
            }
            Stage::Splice => {
                // One mutant per donor: tail of the corresponding donor
                // message from the midpoint crossover.
                if cursor >= self.donors.len() {
                    return CursorResult::Done;
                }
                let donor = self.donors[cursor];
                if donor.messages.is_empty() {
                    return CursorResult::Skip;
                }
                let d_idx = self.msg_idx.min(donor.messages.len() - 1);
                let d = &donor.messages[d_idx];
                if len < 2 || d.len() < 2 {
                    return CursorResult::Skip;
                }
                let mid = len.min(d.len()) / 2;
                let mut msg = Vec::with_capacity(mid + d.len() - mid);
                msg.extend_from_slice(&m[..mid]);
                msg.extend_from_slice(&d[mid..]);
                self.wrap(stage, msg)
            }
        }
    }

    fn arith_wide<const W: usize>(&self, stage: Stage, cursor: usize) -> CursorResult {
        let m = self.target();
        let len = m.len();
        // cursor = ((offset * 70) + delta_index) * 2 + endian
        let per = (2 * ARITH_MAX) as usize * 2;
        if len < W || cursor >= (len - W + 1) * per {
            return CursorResult::Done;
        }
        let offset = cursor / per;
        let rem = cursor % per;
        let delta = delta_for(rem / 2);
        let big_endian = rem % 2 == 1;
        let window = &m[offset..offset + W];
        let le = apply_arith::<W>(window, delta, false);
        let bytes = if big_endian {
            let be = apply_arith::<W>(window, delta, true);
            if be == le {
                return CursorResult::Skip;
            }
            be
        } else {
            le
        };
        let mut msg = m.to_vec();
        msg[offset..offset + W].copy_from_slice(&bytes);
        self.wrap(stage, msg)
    }

    fn interest_wide<const W: usize>(&self, stage: Stage, cursor: usize) -> CursorResult {
        let m = self.target();
        let len = m.len();
        let values: &[i64] = if W == 2 { &INTEREST_16_I64 } else { &INTEREST_32_I64 };
        let per = values.len() * 2;
        if len < W || cursor >= (len - W + 1) * per {
            return CursorResult::Done;
        }
        let offset = cursor / per;
        let rem = cursor % per;
        let value = values[rem / 2];
        let big_endian = rem % 2 == 1;
        let le = encode::<W>(value, false);
        let bytes = if big_endian {
            let be = encode::<W>(value, true);
            if be == le {
                return CursorResult::Skip;
            }
            be
        } else {
            le
        };
        let mut msg = m.to_vec();
        msg[offset..offset + W].copy_from_slice(&bytes);
        self.wrap(stage, msg)
    }

    fn wrap(&self, stage: Stage, msg: Vec<u8>) -> CursorResult {
        match self.make(stage, msg) {
            Some(input) => CursorResult::Yield(Box::new(input)),
            None => CursorResult::Skip,
        }
    }
}

const INTEREST_16_I64: [i64; 19] = as_i64_16();
const INTEREST_32_I64: [i64; 27] = as_i64_32();

const fn as_i64_16() -> [i64; 19] {
    let mut out = [0i64; 19];
    let mut i = 0;
    while i < 19 {
        out[i] = INTERESTING_16[i] as i64;
        i += 1;
    }
    out
}

const fn as_i64_32() -> [i64; 27] {
    let mut out = [0i64; 27];
    let mut i = 0;
    while i < 27 {
        out[i] = INTERESTING_32[i] as i64;
        i += 1;
    }
    out
}

enum CursorResult {
    Yield(Box<FuzzInput>),
    Skip,
    Done,
}

/// Deltas walk +1..+MAX then -1..-MAX.
fn delta_for(idx: usize) -> i64 {
    let idx = idx as i64;
    if idx < ARITH_MAX {
        idx + 1
    } else {
        -(idx - ARITH_MAX + 1)
    }
}

fn apply_arith<const W: usize>(window: &[u8], delta: i64, big_endian: bool) -> [u8; W] {
    let mut buf = [0u8; W];
    buf.copy_from_slice(window);
    let mut v: u64 = 0;
    for i in 0..W {
        let byte = if big_endian { buf[i] } else { buf[W - 1 - i] };
        v = (v << 8) | byte as u64;
    }
    let mask = if W == 8 { u64::MAX } else { (1u64 << (W * 8)) - 1 };
    let v = (v as i64).wrapping_add(delta) as u64 & mask;
    encode_u64::<W>(v, big_endian)
}

fn encode<const W: usize>(value: i64, big_endian: bool) -> [u8; W] {
    let mask = if W == 8 { u64::MAX } else { (1u64 << (W * 8)) - 1 };
    encode_u64::<W>(value as u64 & mask, big_endian)
}

fn encode_u64<const W: usize>(v: u64, big_endian: bool) -> [u8; W] {
    let mut out = [0u8; W];
    for i in 0..W {
        let byte = ((v >> (8 * i)) & 0xFF) as u8;
        if big_endian {
            out[W - 1 - i] = byte;
        } else {
            out[i] = byte;
        }
    }
    out
}

impl<'a> Iterator for DeterministicPass<'a> {
    type Item = (Stage, FuzzInput);

    fn next(&mut self) -> Option<Self::Item> {
        while self.stage < STAGES.len() {
            let stage = STAGES[self.stage];
            match self.candidate(stage, self.cursor) {
                CursorResult::Yield(input) => {
                    self.cursor += 1;
                    if self.seen.insert(input.messages[self.msg_idx].clone()) {
                        return Some((stage, *input));
                    }
                }
                CursorResult::Skip => {
                    self.cursor += 1;
                }
                CursorResult::Done => {
                    self.stage += 1;
                    self.cursor = 0;
                    self.seen.clear();
                }
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn counts(parent: &FuzzInput, idx: usize, dict: &Dictionary) -> HashMap<Stage, usize> {
        let mut map = HashMap::new();
        for (stage, _) in DeterministicPass::new(parent, idx, dict, Vec::new()) {
            *map.entry(stage).or_insert(0) += 1;
        }
        map
    }

    #[test]
    fn single_bit_flip_count_and_hamming() {
        let parent = FuzzInput::from_lines(&["ab"]);
        let dict = Dictionary::empty();
        let mutants: Vec<FuzzInput> = DeterministicPass::new(&parent, 0, &dict, Vec::new())
            .take_while(|(s, _)| *s == Stage::BitFlip1)
            .map(|(_, m)| m)
            .collect();
        assert_eq!(mutants.len(), 16);
        for m in &mutants {
            let diff: u32 = m.messages[0]
                .iter()
                .zip(parent.messages[0].iter())
                .map(|(a, b)| (a ^ b).count_ones())
                .sum();
            assert_eq!(diff, 1);
        }
        // Walking order: first three mutants differ in bit 0, 1, 2.
        for (i, m) in mutants.iter().take(3).enumerate() {
            assert_eq!(m.messages[0][0] ^ parent.messages[0][0], 0x80 >> i);
        }
    }

    #[test]
    fn stage_counts_for_two_byte_message() {
        let parent = FuzzInput::from_lines(&["ab"]);
        let c = counts(&parent, 0, &Dictionary::empty());
        assert_eq!(c.get(&Stage::BitFlip1), Some(&16));
        assert_eq!(c.get(&Stage::BitFlip2), Some(&15));
        assert_eq!(c.get(&Stage::BitFlip4), Some(&13));
        assert_eq!(c.get(&Stage::ByteFlip1), Some(&2));
        assert_eq!(c.get(&Stage::ByteFlip2), Some(&1));
        assert_eq!(c.get(&Stage::ByteFlip4), None);
        assert_eq!(c.get(&Stage::Arith8), Some(&140));
        assert_eq!(c.get(&Stage::Arith16), Some(&140));
        assert_eq!(c.get(&Stage::Arith32), None);
        assert_eq!(c.get(&Stage::Interest8), Some(&18));
        // 19 values x 2 endiannesses = 38 encodings, of which 28 are
        // distinct: 0x0000/0xFFFF are palindromes (BE repeats LE), and the
        // byte-swapped pairs (1,256), (16,4096), (128,-32768) and
        // (-129,32767) each collide in both directions.
        assert_eq!(c.get(&Stage::Interest16), Some(&28));
        assert_eq!(c.get(&Stage::Interest32), None);
    }

    #[test]
    fn four_byte_message_interest32_count_at_offset_zero() {
        let parent = FuzzInput::new(vec![vec![0x10, 0x21, 0x32, 0x43]]);
        let dict = Dictionary::empty();
        let at_offset_0 = DeterministicPass::new(&parent, 0, &dict, Vec::new())
            .filter(|(s, _)| *s == Stage::Interest32)
            .count();
        // Only one offset fits a 4-byte window in a 4-byte message.
        // 27 values x 2 endiannesses = 54 encodings, of which 44 are
        // distinct: 0, -1, 0xFA0000FA and 0x05FFFF05 are byte palindromes,
        // and the byte-swapped pairs (128, i32::MIN), (256, 65536) and
        // (-129, i32::MAX) each collide in both directions.
        assert_eq!(at_offset_0, 44);
    }

    #[test]
    fn empty_message_yields_only_insertion_stages() {
        let parent = FuzzInput::new(vec![Vec::new()]);
        let dict = Dictionary::parse("tok\n").unwrap();
        let c = counts(&parent, 0, &dict);
        assert_eq!(c.len(), 1);
        assert_eq!(c.get(&Stage::DictInsert), Some(&1));
    }

    #[test]
    fn non_target_messages_untouched() {
        let parent = FuzzInput::from_lines(&["USER anon", "PASS x", "QUIT"]);
        let dict = Dictionary::parse("LIST\n").unwrap();
        for (_, m) in DeterministicPass::new(&parent, 1, &dict, Vec::new()) {
            assert_eq!(m.messages[0], parent.messages[0]);
            assert_eq!(m.messages[2], parent.messages[2]);
        }
    }

    #[test]
    fn stages_are_duplicate_free() {
        let parent = FuzzInput::new(vec![vec![0x00, 0x00, 0xFF, 0x61, 0x00]]);
        let dict = Dictionary::parse("a\nbb\n").unwrap();
        let donor = FuzzInput::from_lines(&["donor message"]);
        let mut seen: HashMap<Stage, Vec<Vec<u8>>> = HashMap::new();
        for (stage, m) in DeterministicPass::new(&parent, 0, &dict, vec![&donor]) {
            let bucket = seen.entry(stage).or_default();
            assert!(
                !bucket.contains(&m.messages[0]),
                "duplicate in {stage:?}: {:?}",
                m.messages[0]
            );
            assert_ne!(m.messages[0], parent.messages[0]);
            bucket.push(m.messages[0].clone());
        }
    }

    #[test]
    fn msg_idx_past_end_yields_nothing() {
        let parent = FuzzInput::from_lines(&["only"]);
        let dict = Dictionary::parse("tok\n").unwrap();
        assert_eq!(
            DeterministicPass::new(&parent, 1, &dict, Vec::new()).count(),
            0
        );
    }

    #[test]
    fn splice_takes_donor_tail() {
        let parent = FuzzInput::from_lines(&["AAAAAAAA"]);
        let donor = FuzzInput::from_lines(&["BBBBBBBB"]);
        let dict = Dictionary::empty();
        let spliced: Vec<FuzzInput> = DeterministicPass::new(&parent, 0, &dict, vec![&donor])
            .filter(|(s, _)| *s == Stage::Splice)
            .map(|(_, m)| m)
            .collect();
        assert_eq!(spliced.len(), 1);
        assert_eq!(spliced[0].messages[0], b"AAAABBBB".to_vec());
    }
}

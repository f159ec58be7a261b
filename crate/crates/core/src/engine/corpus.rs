//! The saved-input corpus: every entry increased code or state coverage
//! when it was saved, and carries the state sequence its analysis run
//! produced.

use crate::ipsm::InputStore;
use crate::mutation::FuzzInput;
use std::collections::HashMap;
use std::time::Duration;

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub input_id: u64,
    pub input: FuzzInput,
    pub state_seq: Vec<u32>,
    pub cov_signature: u64,
    pub exec_time: Duration,
    /// Campaign time at which the entry was saved.
    pub found_at: Duration,
    /// Set when the analysis re-run diverged from the original coverage.
    pub nondeterministic: bool,
}

#[derive(Default)]
pub struct Corpus {
    entries: Vec<CorpusEntry>,
    index: HashMap<u64, usize>,
    next_id: u64,
}

impl Corpus {
    pub fn new() -> Self {
        Corpus::default()
    }

    pub fn add(&mut self, mut entry: CorpusEntry) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        entry.input_id = id;
        self.index.insert(id, self.entries.len());
        self.entries.push(entry);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, input_id: u64) -> Option<&CorpusEntry> {
        self.index.get(&input_id).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn nth(&self, n: usize) -> &CorpusEntry {
        &self.entries[n]
    }
}

impl InputStore for Corpus {
    fn state_seq(&self, input_id: u64) -> Option<&[u32]> {
        self.get(input_id).map(|e| e.state_seq.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(seq: Vec<u32>) -> CorpusEntry {
        CorpusEntry {
            input_id: 0,
            input: FuzzInput::from_lines(&["x"]),
            state_seq: seq,
            cov_signature: 0,
            exec_time: Duration::ZERO,
            found_at: Duration::ZERO,
            nondeterministic: false,
        }
    }

    #[test]
    fn ids_are_dense_and_stable() {
        let mut c = Corpus::new();
        assert_eq!(c.add(entry(vec![1])), 0);
        assert_eq!(c.add(entry(vec![2])), 1);
        assert_eq!(c.get(0).unwrap().state_seq, vec![1]);
        assert_eq!(c.state_seq(1), Some(&[2u32][..]));
        assert_eq!(c.state_seq(99), None);
    }
}

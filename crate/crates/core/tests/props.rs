//! Randomized property tests over the hashing, registry, and file-format
//! layers.

use proptest::prelude::*;
use statefuzz::mutation::FuzzInput;
use statefuzz::mvp::StateRegistry;
use statefuzz::safl;
use statefuzz::tlsh::{distance, TlshDigest, TlshStream};

proptest! {
    #[test]
    fn chunk_boundaries_are_invisible(
        data in proptest::collection::vec(any::<u8>(), 50..1024),
        cuts in proptest::collection::vec(any::<prop::sample::Index>(), 0..8),
    ) {
        let mut idx: Vec<usize> = cuts.iter().map(|c| c.index(data.len())).collect();
        idx.sort_unstable();
        let mut s = TlshStream::new();
        let mut prev = 0;
        for cut in idx {
            s.update(&data[prev..cut]);
            prev = cut;
        }
        s.update(&data[prev..]);
        prop_assert_eq!(s.finalize(), TlshDigest::hash(&data));
    }

    #[test]
    fn distance_is_symmetric_with_zero_identity(
        a in proptest::collection::vec(any::<u8>(), 50..512),
        b in proptest::collection::vec(any::<u8>(), 50..512),
    ) {
        let (da, db) = (TlshDigest::hash(&a), TlshDigest::hash(&b));
        prop_assert_eq!(distance(&da, &da), 0);
        prop_assert_eq!(distance(&da, &db), distance(&db, &da));
    }

    #[test]
    fn registry_tree_agrees_with_linear_scan(
        bufs in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 50..256), 1..64),
        probe in proptest::collection::vec(any::<u8>(), 50..256),
        radius in 0u32..200,
    ) {
        let mut reg = StateRegistry::new();
        for b in &bufs {
            reg.insert(TlshDigest::hash(b));
        }
        let h = TlshDigest::hash(&probe);
        prop_assert_eq!(reg.lookup(&h, radius), reg.lookup_linear(&h, radius));
    }

    #[test]
    fn safl_encoding_round_trips(
        messages in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..64), 0..16),
    ) {
        let input = FuzzInput::new(messages);
        let bytes = safl::encode(&input);
        let back = safl::decode(&bytes).unwrap();
        prop_assert_eq!(&back.messages, &input.messages);
        prop_assert_eq!(safl::encode(&back), bytes);
    }
}

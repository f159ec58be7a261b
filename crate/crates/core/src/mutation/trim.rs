//! Corpus-entry trimming: drop whole messages, then shrink message bodies
//! by power-of-two blocks, keeping every step that preserves the oracle
//! (coverage signature and state sequence in the caller).

use super::FuzzInput;

/// Minimum block size the byte-level trimming loop goes down to.
const TRIM_MIN_BLOCK: usize = 4;

/// Trims `input` against `still_equivalent`, which must re-execute the
/// candidate and report whether it still exhibits the original behavior.
/// The oracle is probed once up front with the untouched input; if that
/// probe fails the entry is nondeterministic and trimming is abandoned.
/// Returns the trimmed input and whether the determinism probe passed.
pub fn trim_input<F>(input: &FuzzInput, mut still_equivalent: F) -> (FuzzInput, bool)
where
    F: FnMut(&FuzzInput) -> bool,
{
    if !still_equivalent(input) {
        return (input.clone(), false);
    }
    let mut best = input.clone();

    // Message granularity first: try removing each message, last to first
    // so indices stay stable.
    let mut i = best.messages.len();
    while i > 0 {
        i -= 1;
        if best.messages.len() <= 1 {
            break;
        }
        let mut candidate = best.clone();
        candidate.messages.remove(i);
        if still_equivalent(&candidate) {
            best = candidate;
        }
    }

    // Then block-level removal inside each surviving message.
    for m in 0..best.messages.len() {
        let mut block = best.messages[m].len() / 2;
        while block >= TRIM_MIN_BLOCK {
            let mut pos = 0;
            while pos + block <= best.messages[m].len() {
                let mut candidate = best.clone();
                candidate.messages[m].drain(pos..pos + block);
                if still_equivalent(&candidate) {
                    best = candidate;
                } else {
                    pos += block;
                }
            }
            block /= 2;
        }
    }

    (best, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trims_redundant_messages_and_padding() {
        // Oracle: input is equivalent iff some message contains "KEY".
        let input = FuzzInput::new(vec![
            b"noise noise noise".to_vec(),
            b"xxxxxxxxxxxxxxxxKEYxxxxxxxxxxxxxxxx".to_vec(),
            b"trailing junk".to_vec(),
        ]);
        let (trimmed, deterministic) = trim_input(&input, |c| {
            c.messages.iter().any(|m| m.windows(3).any(|w| w == b"KEY"))
        });
        assert!(deterministic);
        assert_eq!(trimmed.messages.len(), 1);
        assert!(trimmed.messages[0].windows(3).any(|w| w == b"KEY"));
        assert!(trimmed.messages[0].len() < 35);
    }

    #[test]
    fn nondeterministic_entry_is_left_alone() {
        let input = FuzzInput::from_lines(&["a", "b"]);
        let mut calls = 0;
        let (trimmed, deterministic) = trim_input(&input, |_| {
            calls += 1;
            false // fails even on the untouched input
        });
        assert!(!deterministic);
        assert_eq!(calls, 1);
        assert_eq!(trimmed, input);
    }

    #[test]
    fn never_trims_to_zero_messages() {
        let input = FuzzInput::from_lines(&["only"]);
        let (trimmed, deterministic) = trim_input(&input, |_| true);
        assert!(deterministic);
        assert_eq!(trimmed.messages.len(), 1);
    }
}

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Most frequent value of a time-ordered sequence. Frequency ties go to the
/// tied value whose last occurrence is latest.
pub fn mode_with_tiebreak<T: Copy + Eq + Hash>(values: &[T]) -> Result<T> {
    // value -> (count, last position)
    let mut tally: HashMap<T, (usize, usize)> = HashMap::new();
    for (pos, &v) in values.iter().enumerate() {
        let e = tally.entry(v).or_insert((0, pos));
        e.0 += 1;
        e.1 = pos;
    }
    tally
        .into_iter()
        .max_by_key(|&(_, (count, last))| (count, last))
        .map(|(v, _)| v)
        .ok_or(Error::EmptySeries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(mode_with_tiebreak(&['A', 'A', 'B', 'A']).unwrap(), 'A');
        assert_eq!(mode_with_tiebreak(&['A', 'B', 'A', 'B']).unwrap(), 'B');
        assert_eq!(mode_with_tiebreak(&['B', 'A', 'A', 'B']).unwrap(), 'B');
        assert_eq!(mode_with_tiebreak(&['B', 'A', 'B', 'A']).unwrap(), 'A');
        assert!(matches!(mode_with_tiebreak::<u32>(&[]), Err(Error::EmptySeries)));
    }

    /// Counting oracle: for each candidate count occurrences; among the
    /// maxima pick the one seen last when scanning backwards from the end.
    fn oracle(values: &[u8]) -> u8 {
        let count = |x: u8| values.iter().filter(|&&v| v == x).count();
        let best = values.iter().map(|&v| count(v)).max().unwrap();
        *values.iter().rev().find(|&&v| count(v) == best).unwrap()
    }

    #[test]
    fn exhaustive_two_and_three_symbols_over_four_weeks() {
        for alphabet in [2u8, 3] {
            let n = (alphabet as usize).pow(4);
            for code in 0..n {
                let mut c = code;
                let seq: Vec<u8> = (0..4)
                    .map(|_| {
                        let s = (c % alphabet as usize) as u8;
                        c /= alphabet as usize;
                        s
                    })
                    .collect();
                assert_eq!(mode_with_tiebreak(&seq).unwrap(), oracle(&seq), "{seq:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn matches_oracle(seq in prop::collection::vec(0u8..5, 1..12)) {
            prop_assert_eq!(mode_with_tiebreak(&seq).unwrap(), oracle(&seq));
        }

        #[test]
        fn unique_mode_is_order_free(seq in prop::collection::vec(0u8..4, 1..10), seed in any::<u64>()) {
            let count = |x: u8| seq.iter().filter(|&&v| v == x).count();
            let best = seq.iter().map(|&v| count(v)).max().unwrap();
            let mut modes: Vec<u8> = seq.iter().copied().filter(|&v| count(v) == best).collect();
            modes.dedup();
            modes.sort_unstable();
            modes.dedup();
            prop_assume!(modes.len() == 1);
            let mut shuffled = seq.clone();
            // deterministic Fisher-Yates from the seed
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(mode_with_tiebreak(&shuffled).unwrap(), modes[0]);
        }
    }
}

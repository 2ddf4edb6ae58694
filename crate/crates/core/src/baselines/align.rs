use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentScoring {
    pub matched: f64,
    pub mismatch: f64,
    pub gap: f64,
}

impl Default for AlignmentScoring {
    fn default() -> Self {
        AlignmentScoring {
            matched: 1.0,
            mismatch: -1.0,
            gap: -1.0,
        }
    }
}

/// Global (Needleman–Wunsch) alignment score over whole frames, divided by
/// the longer trace length.
pub fn nw_similarity<T: PartialEq>(a: &[T], b: &[T], scoring: AlignmentScoring) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::empty("alignment needs two non-empty traces"));
    }
    let cols = b.len() + 1;
    let mut prev: Vec<f64> = (0..cols).map(|j| j as f64 * scoring.gap).collect();
    let mut row = vec![0.0; cols];
    for (i, x) in a.iter().enumerate() {
        row[0] = (i + 1) as f64 * scoring.gap;
        for (j, y) in b.iter().enumerate() {
            let diagonal = prev[j] + if x == y { scoring.matched } else { scoring.mismatch };
            let up = prev[j + 1] + scoring.gap;
            let left = row[j] + scoring.gap;
            row[j + 1] = diagonal.max(up).max(left);
        }
        std::mem::swap(&mut prev, &mut row);
    }
    Ok(prev[b.len()] / a.len().max(b.len()) as f64)
}

/// Longest common frame prefix over the longer trace length.
pub fn prefix_match<T: PartialEq>(a: &[T], b: &[T]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::empty("prefix matching needs two non-empty traces"));
    }
    let common = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    Ok(common as f64 / a.len().max(b.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Best score over every global alignment, by exhaustive recursion.
    fn enumerate_alignments(a: &[u8], b: &[u8], s: AlignmentScoring) -> f64 {
        match (a.split_first(), b.split_first()) {
            (None, None) => 0.0,
            (Some(_), None) => a.len() as f64 * s.gap,
            (None, Some(_)) => b.len() as f64 * s.gap,
            (Some((x, ra)), Some((y, rb))) => {
                let pair = if x == y { s.matched } else { s.mismatch };
                let diagonal = pair + enumerate_alignments(ra, rb, s);
                let skip_a = s.gap + enumerate_alignments(ra, b, s);
                let skip_b = s.gap + enumerate_alignments(a, rb, s);
                diagonal.max(skip_a).max(skip_b)
            }
        }
    }

    #[test]
    fn identical_traces() {
        let t = ["a", "b", "c"];
        assert_eq!(nw_similarity(&t, &t, AlignmentScoring::default()).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_traces_of_equal_length() {
        let a = ["a", "b", "c", "d"];
        let b = ["w", "x", "y", "z"];
        assert_eq!(nw_similarity(&a, &b, AlignmentScoring::default()).unwrap(), -1.0);
    }

    #[test]
    fn empty_trace_is_an_error() {
        let empty: [&str; 0] = [];
        assert!(nw_similarity(&empty, &["a"], AlignmentScoring::default()).is_err());
        assert!(prefix_match(&["a"], &empty).is_err());
    }

    #[test]
    fn prefix_examples() {
        assert_eq!(prefix_match(&["x", "y"], &["x", "y"]).unwrap(), 1.0);
        assert_eq!(prefix_match(&["x", "y"], &["q", "y"]).unwrap(), 0.0);
        assert_eq!(prefix_match(&["x", "y", "z"], &["x", "y", "w", "v"]).unwrap(), 0.5);
    }

    #[test]
    fn matches_enumeration_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let s = AlignmentScoring::default();
        for _ in 0..200 {
            let a: Vec<u8> = (0..rng.gen_range(1..=6)).map(|_| rng.gen_range(0..4)).collect();
            let b: Vec<u8> = (0..rng.gen_range(1..=6)).map(|_| rng.gen_range(0..4)).collect();
            let expected = enumerate_alignments(&a, &b, s) / a.len().max(b.len()) as f64;
            assert_eq!(nw_similarity(&a, &b, s).unwrap(), expected, "{a:?} {b:?}");
        }
    }

    proptest! {
        #[test]
        fn nw_is_symmetric(a in prop::collection::vec(0u8..5, 1..10), b in prop::collection::vec(0u8..5, 1..10)) {
            let s = AlignmentScoring::default();
            prop_assert_eq!(nw_similarity(&a, &b, s).unwrap(), nw_similarity(&b, &a, s).unwrap());
        }

        #[test]
        fn corruption_never_raises_nw(
            a in prop::collection::vec(0u8..5, 1..10),
            b in prop::collection::vec(0u8..5, 1..10),
            pos in any::<prop::sample::Index>(),
        ) {
            let s = AlignmentScoring::default();
            let mut corrupted = a.clone();
            corrupted[pos.index(a.len())] = 99;
            prop_assert!(nw_similarity(&corrupted, &b, s).unwrap() <= nw_similarity(&a, &b, s).unwrap());
        }

        #[test]
        fn prefix_is_symmetric_and_reflexive(a in prop::collection::vec(0u8..3, 1..8), b in prop::collection::vec(0u8..3, 1..8)) {
            prop_assert_eq!(prefix_match(&a, &a).unwrap(), 1.0);
            prop_assert_eq!(prefix_match(&a, &b).unwrap(), prefix_match(&b, &a).unwrap());
        }
    }
}

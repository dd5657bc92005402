use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!("unknown split `{other}`"))),
        }
    }
}

/// Number of (train, val, test) items for `n` ids: floors for the first two,
/// remainder to test.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 7 / 10;
    let val = n / 10;
    (train, val, n - train - val)
}

/// Shuffles the sorted ids with `seed` and cuts them 70/10/20.
pub fn split_assign<S: AsRef<str>>(track_ids: &[S], seed: u64) -> Result<BTreeMap<String, Split>> {
    if track_ids.is_empty() {
        return Err(Error::Argument("cannot split an empty id list".into()));
    }
    let unique: BTreeSet<&str> = track_ids.iter().map(AsRef::as_ref).collect();
    if unique.len() != track_ids.len() {
        return Err(Error::Argument("duplicate track ids".into()));
    }
    let mut ids: Vec<&str> = unique.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let (train, val, _) = split_sizes(ids.len());
    Ok(ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            (id.to_string(), split)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn count(map: &BTreeMap<String, Split>, s: Split) -> usize {
        map.values().filter(|&&v| v == s).count()
    }

    #[test]
    fn ten_ids_split_seven_one_two() {
        let ids: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
        let m = split_assign(&ids, 42).unwrap();
        assert_eq!(
            (count(&m, Split::Train), count(&m, Split::Val), count(&m, Split::Test)),
            (7, 1, 2)
        );
    }

    #[test]
    fn single_id_lands_in_test() {
        let m = split_assign(&["only"], 0).unwrap();
        assert_eq!(m["only"], Split::Test);
    }

    #[test]
    fn duplicates_and_empty_are_rejected() {
        assert!(split_assign(&["a", "b", "a"], 0).is_err());
        assert!(split_assign::<&str>(&[], 0).is_err());
    }

    proptest! {
        #[test]
        fn input_order_does_not_matter(n in 1usize..200, seed: u64, rot in 0usize..200) {
            let ids: Vec<String> = (0..n).map(|i| format!("id-{i}")).collect();
            let mut rotated = ids.clone();
            rotated.rotate_left(rot % n);
            rotated.reverse();
            prop_assert_eq!(split_assign(&ids, seed).unwrap(), split_assign(&rotated, seed).unwrap());
        }

        #[test]
        fn proportions_within_one_track(n in 1usize..2000, seed: u64) {
            let ids: Vec<String> = (0..n).map(|i| format!("{i}")).collect();
            let m = split_assign(&ids, seed).unwrap();
            let nf = n as f64;
            prop_assert!((count(&m, Split::Train) as f64 - 0.7 * nf).abs() <= 1.0);
            prop_assert!((count(&m, Split::Val) as f64 - 0.1 * nf).abs() <= 1.0);
            // Test absorbs both floor remainders, so it can sit up to two above 20%.
            prop_assert!((count(&m, Split::Test) as f64 - 0.2 * nf).abs() <= 2.0);
        }
    }
}

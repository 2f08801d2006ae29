use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::DatasetError;

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

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// study_id -> split
pub type SplitAssignment = BTreeMap<String, Split>;

/// Ratios for (train, val, test), optionally overridden by exact counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: (f64, f64, f64),
    pub counts: Option<(usize, usize, usize)>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: (0.7, 0.1, 0.2),
            counts: None,
        }
    }
}

impl SplitSpec {
    pub fn with_counts(counts: (usize, usize, usize)) -> Self {
        SplitSpec {
            counts: Some(counts),
            ..Default::default()
        }
    }

    /// `(train, val, test)` sizes for `n` ids. With no explicit counts, val
    /// and test are `round(ratio * n)` and train takes the remainder.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize), DatasetError> {
        let (tr, va, te) = self.ratios;
        if !(tr > 0.0 && va > 0.0 && te > 0.0) || ![tr, va, te].iter().all(|r| r.is_finite()) {
            return Err(DatasetError::InvalidRatios(format!(
                "ratios must be positive, got ({tr}, {va}, {te})"
            )));
        }
        if ((tr + va + te) - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidRatios(format!(
                "ratios sum to {}, not 1",
                tr + va + te
            )));
        }
        if let Some(c) = self.counts {
            if c.0 + c.1 + c.2 != n {
                return Err(DatasetError::CountMismatch { counts: c, n });
            }
            return Ok(c);
        }
        let val = (va * n as f64).round() as usize;
        let test = (te * n as f64).round() as usize;
        let val = val.min(n);
        let test = test.min(n - val);
        Ok((n - val - test, val, test))
    }
}

/// Deterministic train/val/test partition.
///
/// Ids are sorted first so the result does not depend on input order, then
/// shuffled with a Xoshiro256++ stream seeded from `seed`, then sliced into
/// train, val, test in that order.
pub fn split_dataset<S: AsRef<str>>(
    ids: &[S],
    spec: &SplitSpec,
    seed: u64,
) -> Result<SplitAssignment, DatasetError> {
    let mut sorted: Vec<&str> = ids.iter().map(|s| s.as_ref()).collect();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(DatasetError::DuplicateId(w[0].to_string()));
    }
    let (n_train, n_val, _) = spec.sizes(sorted.len())?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (id.to_string(), split)
        })
        .collect())
}

pub fn split_counts(assign: &SplitAssignment) -> (usize, usize, usize) {
    assign.values().fold((0, 0, 0), |(a, b, c), s| match s {
        Split::Train => (a + 1, b, c),
        Split::Val => (a, b + 1, c),
        Split::Test => (a, b, c + 1),
    })
}

pub(crate) fn serialize_splits(assign: &SplitAssignment) -> String {
    let mut out = String::from("study_id,split\n");
    for (id, s) in assign {
        out.push_str(id);
        out.push(',');
        out.push_str(s.as_str());
        out.push('\n');
    }
    out
}

pub(crate) fn parse_splits(text: &str) -> Result<SplitAssignment, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| e.to_string())?;
    if header.iter().ne(["study_id", "split"]) {
        return Err("split file header must be `study_id,split`".into());
    }
    let mut out = SplitAssignment::new();
    let mut seen = BTreeSet::new();
    for row in rdr.records() {
        let row = row.map_err(|e| e.to_string())?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 2 {
            return Err(format!("line {line}: expected 2 fields"));
        }
        let id = row[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(format!("line {line}: duplicate study id `{id}`"));
        }
        out.insert(id, row[1].parse().map_err(|e| format!("line {line}: {e}"))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:05}")).collect()
    }

    #[test]
    fn rounding_rule_on_full_dataset_size() {
        assert_eq!(SplitSpec::default().sizes(2951).unwrap(), (2066, 295, 590));
    }

    #[test]
    fn explicit_counts_reproduce_published_split() {
        let a = split_dataset(&ids(2951), &SplitSpec::with_counts((2074, 295, 582)), 7).unwrap();
        assert_eq!(split_counts(&a), (2074, 295, 582));
    }

    #[test]
    fn ten_ids() {
        for seed in 0..20 {
            let a = split_dataset(&ids(10), &SplitSpec::default(), seed).unwrap();
            assert_eq!(split_counts(&a), (7, 1, 2));
            assert_eq!(a.len(), 10);
        }
    }

    #[test]
    fn errors() {
        let bad = SplitSpec {
            ratios: (0.7, 0.1, 0.1),
            counts: None,
        };
        assert!(matches!(
            split_dataset(&ids(5), &bad, 0),
            Err(DatasetError::InvalidRatios(_))
        ));
        let neg = SplitSpec {
            ratios: (1.1, -0.1, 0.0),
            counts: None,
        };
        assert!(matches!(
            split_dataset(&ids(5), &neg, 0),
            Err(DatasetError::InvalidRatios(_))
        ));
        assert!(matches!(
            split_dataset(&["a", "b", "a"], &SplitSpec::default(), 0),
            Err(DatasetError::DuplicateId(_))
        ));
        let counts = SplitSpec::with_counts((1, 1, 1));
        assert!(matches!(
            split_dataset(&ids(4), &counts, 0),
            Err(DatasetError::CountMismatch { .. })
        ));
    }

    #[test]
    fn split_file_round_trip() {
        let a = split_dataset(&ids(13), &SplitSpec::default(), 3).unwrap();
        assert_eq!(parse_splits(&serialize_splits(&a)).unwrap(), a);
    }

    proptest! {
        #[test]
        fn partition_is_order_independent(n in 1usize..200, seed in any::<u64>(), rot in 0usize..200) {
            let mut v = ids(n);
            let a = split_dataset(&v, &SplitSpec::default(), seed).unwrap();
            v.rotate_left(rot % n);
            v.reverse();
            let b = split_dataset(&v, &SplitSpec::default(), seed).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.len(), n);
            let (tr, va, te) = split_counts(&a);
            prop_assert_eq!(tr + va + te, n);
        }
    }
}

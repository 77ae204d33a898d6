//! Entity-disjoint train/validation/test assignment.
//!
//! Each runner is placed by hashing `(seed, runner_id)` into `[0, 1)` and
//! comparing against the cumulative ratios, so assignment depends only on the
//! runner itself and never on dataset order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{fnv1a, mix64, unit_interval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    /// 270K / 30K / 60K runners.
    fn default() -> Self {
        SplitRatios { train: 0.75, validation: 0.083, test: 0.167 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::Config(format!("split ratios must all be positive, got {parts:?}")));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {total}")));
        }
        Ok(())
    }
}

pub fn assign_split(runner_id: &str, ratios: &SplitRatios, seed: u64) -> Split {
    let u = unit_interval(mix64(fnv1a(runner_id.as_bytes()) ^ mix64(seed)));
    if u < ratios.train {
        Split::Train
    } else if u < ratios.train + ratios.validation {
        Split::Validation
    } else {
        Split::Test
    }
}

/// Split for every runner, aligned with `runner_ids`.
pub fn split_entities<S: AsRef<str>>(runner_ids: &[S], ratios: &SplitRatios, seed: u64) -> Result<Vec<Split>> {
    ratios.validate()?;
    Ok(runner_ids.iter().map(|id| assign_split(id.as_ref(), ratios, seed)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("runner-{i:06}")).collect()
    }

    #[test]
    fn deterministic_for_a_seed() {
        let ids = ids(500);
        let r = SplitRatios::default();
        assert_eq!(split_entities(&ids, &r, 7).unwrap(), split_entities(&ids, &r, 7).unwrap());
        assert_ne!(split_entities(&ids, &r, 7).unwrap(), split_entities(&ids, &r, 8).unwrap());
    }

    #[test]
    fn fractions_track_ratios_at_ten_thousand() {
        let ids = ids(10_000);
        let r = SplitRatios { train: 0.75, validation: 0.083, test: 0.167 };
        let splits = split_entities(&ids, &r, 1).unwrap();
        let mut counts: HashMap<Split, usize> = HashMap::new();
        for s in &splits {
            *counts.entry(*s).or_default() += 1;
        }
        for (s, want) in [(Split::Train, r.train), (Split::Validation, r.validation), (Split::Test, r.test)] {
            let got = counts[&s] as f64 / ids.len() as f64;
            assert!((got - want).abs() <= 0.01, "{s:?}: {got} vs {want}");
        }
    }

    #[test]
    fn splits_partition_runners() {
        let ids = ids(2000);
        let splits = split_entities(&ids, &SplitRatios::default(), 3).unwrap();
        // a runner id always maps to the same split, so the three sets are disjoint
        let mut by_id: HashMap<&str, Split> = HashMap::new();
        for (id, s) in ids.iter().zip(&splits) {
            assert_eq!(*by_id.entry(id).or_insert(*s), *s);
            assert_eq!(assign_split(id, &SplitRatios::default(), 3), *s);
        }
    }

    #[test]
    fn degenerate_ratios_rejected() {
        let bad = [
            SplitRatios { train: 1.0, validation: 0.0, test: 0.0 },
            SplitRatios { train: 0.5, validation: 0.2, test: 0.2 },
            SplitRatios { train: -0.1, validation: 0.6, test: 0.5 },
        ];
        for r in bad {
            assert!(split_entities(&["a"], &r, 0).is_err());
        }
    }
}

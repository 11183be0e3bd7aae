//! Balanced treatment/control assignments and design-run summaries.

use rand::seq::index;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::seeding;

/// A balanced assignment of `2n` subjects: sign `+1` is treatment, `-1` is
/// control, with exactly `n` of each.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Allocation {
    signs: Vec<i8>,
}

impl Allocation {
    /// Builds an allocation from explicit signs, validating balance.
    pub fn from_signs(signs: Vec<i8>) -> Result<Self> {
        if signs.is_empty() {
            return Err(Error::Shape("allocation must not be empty".into()));
        }
        let mut treated = 0usize;
        for (i, &s) in signs.iter().enumerate() {
            match s {
                1 => treated += 1,
                -1 => {}
                other => {
                    return Err(Error::Shape(format!(
                        "allocation entry {i} is {other}, expected +1 or -1"
                    )))
                }
            }
        }
        if signs.len() % 2 != 0 || treated * 2 != signs.len() {
            return Err(Error::Shape(format!(
                "allocation has {treated} treated of {} subjects; arms must be equal",
                signs.len()
            )));
        }
        Ok(Self { signs })
    }

    /// Builds an allocation of `total` subjects with the given treated set.
    pub fn from_treated(treated: &[usize], total: usize) -> Result<Self> {
        let mut signs = vec![-1i8; total];
        for &i in treated {
            if i >= total {
                return Err(Error::Shape(format!(
                    "treated index {i} out of range for {total} subjects"
                )));
            }
            if signs[i] == 1 {
                return Err(Error::Shape(format!("treated index {i} repeated")));
            }
            signs[i] = 1;
        }
        Self::from_signs(signs)
    }

    /// Arm size `n`.
    pub fn arm_size(&self) -> usize {
        self.signs.len() / 2
    }

    /// Total number of subjects `2n`.
    pub fn total(&self) -> usize {
        self.signs.len()
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn is_treated(&self, subject: usize) -> bool {
        self.signs[subject] == 1
    }

    /// Treated subject indices in ascending order.
    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.total()).filter(|&i| self.is_treated(i)).collect()
    }

    /// Control subject indices in ascending order.
    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.total()).filter(|&i| !self.is_treated(i)).collect()
    }

    pub fn same_arm(&self, i: usize, j: usize) -> bool {
        self.signs[i] == self.signs[j]
    }

    /// The allocation with both arms exchanged.
    pub fn flipped(&self) -> Self {
        Self {
            signs: self.signs.iter().map(|s| -s).collect(),
        }
    }

    /// Canonical representative of the {allocation, flip} pair: subject 0
    /// treated.
    pub fn canonical(&self) -> Self {
        if self.is_treated(0) {
            self.clone()
        } else {
            self.flipped()
        }
    }
}

impl Serialize for Allocation {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.signs.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Allocation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let signs = Vec::<i8>::deserialize(deserializer)?;
        Allocation::from_signs(signs).map_err(D::Error::custom)
    }
}

/// Draws uniformly from the `C(2n, n)` balanced allocations.
pub fn random_balanced_allocation(n: usize, seed: u64) -> Result<Allocation> {
    if n == 0 {
        return Err(Error::Shape("arm size must be at least 1".into()));
    }
    let mut rng = seeding::rng(seed);
    let treated = index::sample(&mut rng, 2 * n, n).into_vec();
    Allocation::from_treated(&treated, 2 * n)
}

/// Outcome of running one design method, as written to `design.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DesignResult<F> {
    pub method: String,
    pub seed: u64,
    pub allocation: Allocation,
    pub initial_balance: F,
    pub final_balance: F,
    pub switches: usize,
    pub objective: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unbalanced_and_bad_signs() {
        assert!(Allocation::from_signs(vec![1, 1, -1]).is_err());
        assert!(Allocation::from_signs(vec![1, 1, -1, 1]).is_err());
        assert!(Allocation::from_signs(vec![1, 0, -1, -1]).is_err());
        assert!(Allocation::from_signs(vec![]).is_err());
        assert!(Allocation::from_signs(vec![1, -1]).is_ok());
    }

    #[test]
    fn zero_arm_size_is_rejected() {
        assert!(matches!(
            random_balanced_allocation(0, 1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn same_seed_same_allocation() {
        let a = random_balanced_allocation(10, 99).unwrap();
        let b = random_balanced_allocation(10, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_draw_has_exactly_n_per_arm() {
        for n in 1..=12 {
            for seed in 0..200u64 {
                let a = random_balanced_allocation(n, seed).unwrap();
                let treated = a.signs().iter().filter(|&&s| s == 1).count();
                assert_eq!(treated, n);
                assert_eq!(a.total(), 2 * n);
            }
        }
    }

    #[test]
    fn two_subject_case_is_a_fair_coin() {
        // n=1 has two outcomes; chi-square over 1e4 draws at p > 0.01
        // means |count - 5000| < 2.58 * sqrt(2500) ~ 129.
        let mut first_treated = 0usize;
        for r in 0..10_000u64 {
            let a = random_balanced_allocation(1, seeding::mix64(314, r)).unwrap();
            if a.is_treated(0) {
                first_treated += 1;
            }
        }
        let dev = (first_treated as f64 - 5000.0).abs();
        assert!(dev < 129.0, "first-subject treated count {first_treated}");
    }

    #[test]
    fn n3_is_uniform_over_all_twenty_allocations() {
        // Exact law: each of the C(6,3)=20 allocations has probability 1/20.
        use std::collections::HashMap;
        let draws = 60_000u64;
        let mut counts: HashMap<Vec<i8>, usize> = HashMap::new();
        for r in 0..draws {
            let a = random_balanced_allocation(3, seeding::mix64(2718, r)).unwrap();
            *counts.entry(a.signs().to_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 20);
        let p = 1.0 / 20.0;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        for (signs, count) in counts {
            let freq = count as f64 / draws as f64;
            assert!(
                (freq - p).abs() < 3.0 * se,
                "allocation {signs:?} frequency {freq}"
            );
        }
    }

    #[test]
    fn co_assignment_matches_complete_randomization_reference() {
        // Any fixed pair shares an arm with probability (n-1)/(2n-1).
        let n = 5usize;
        let reps = 100_000u64;
        let mut same = 0usize;
        for r in 0..reps {
            let a = random_balanced_allocation(n, seeding::mix64(55, r)).unwrap();
            if a.same_arm(0, 1) {
                same += 1;
            }
        }
        let s_n = (n as f64 - 1.0) / (2.0 * n as f64 - 1.0);
        let se = (s_n * (1.0 - s_n) / reps as f64).sqrt();
        let freq = same as f64 / reps as f64;
        assert!((freq - s_n).abs() < 3.0 * se, "freq {freq} vs s_n {s_n}");
    }

    #[test]
    fn serde_round_trip_revalidates() {
        let a = random_balanced_allocation(4, 5).unwrap();
        let json = serde_json::to_string(&a).unwrap();
        let back: Allocation = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);
        let bad: std::result::Result<Allocation, _> = serde_json::from_str("[1,1,1,-1]");
        assert!(bad.is_err());
    }
}

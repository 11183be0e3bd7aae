//! Exhaustive enumeration of all balanced allocations.
//!
//! Treated index sets are walked in lexicographic order and ranked by the
//! combinatorial number system; workers own contiguous rank ranges, so the
//! partition is deterministic regardless of scheduling. Every candidate is
//! evaluated by fresh summation in ascending subject order, which makes the
//! result bit-identical for any worker count.

use rayon::prelude::*;

use crate::allocation::Allocation;
use crate::balance::BalanceObjective;
use crate::data::StandardizedCovariates;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Instances beyond this many subjects are refused without `force`.
pub const ENUMERATION_GUARD: usize = 30;

/// The global minimizer found by enumeration.
#[derive(Clone, Debug)]
pub struct OptimalResult<F> {
    pub allocation: Allocation,
    pub balance: F,
    /// Number of allocations examined: `C(2n, n) / 2` with symmetry
    /// reduction on, `C(2n, n)` with it off.
    pub visited: u64,
    /// Lexicographic rank of the optimum within the enumerated space.
    pub rank: u64,
}

/// Exact binomial coefficient (fits u64 for every instance the guard
/// allows, with ample room for `--force` overrides).
pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as u64
}

/// The `rank`-th k-combination of {0..m-1} in lexicographic order.
fn unrank(mut rank: u64, m: usize, k: usize) -> Vec<usize> {
    let mut combo = Vec::with_capacity(k);
    let mut v = 0usize;
    for i in 0..k {
        loop {
            let count = binomial((m - 1 - v) as u64, (k - 1 - i) as u64);
            if rank < count {
                combo.push(v);
                v += 1;
                break;
            }
            rank -= count;
            v += 1;
        }
    }
    combo
}

/// Advances to the lexicographic successor; false when exhausted.
fn successor(combo: &mut [usize], m: usize) -> bool {
    let k = combo.len();
    for i in (0..k).rev() {
        if combo[i] < m - k + i {
            combo[i] += 1;
            for j in (i + 1)..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

struct WorkerBest<F> {
    balance: F,
    rank: u64,
    treated: Vec<usize>,
    visited: u64,
}

/// Finds the exact global minimizer of the objective over all balanced
/// allocations. With `symmetry` on, subject 0 is fixed to treatment (a
/// global sign flip never changes the balance), halving the space.
pub fn enumerate_optimal<F: Real>(
    z: &StandardizedCovariates<F>,
    objective: &BalanceObjective<F>,
    workers: usize,
    symmetry: bool,
    force: bool,
) -> Result<OptimalResult<F>> {
    let two_n = z.rows();
    let n = z.arm_size();
    let p = z.cols();
    if two_n > ENUMERATION_GUARD && !force {
        return Err(Error::TooLarge(format!(
            "2n = {two_n} exceeds the enumeration guard of {ENUMERATION_GUARD}; \
             use the greedy method, or force to override"
        )));
    }
    if workers == 0 {
        return Err(Error::Domain("worker count must be at least 1".into()));
    }

    // With symmetry on we choose the remaining n-1 treated subjects from
    // subjects 1..2n-1.
    let (m, k, offset) = if symmetry {
        (two_n - 1, n - 1, 1usize)
    } else {
        (two_n, n, 0usize)
    };
    let total = binomial(m as u64, k as u64);

    // Row-major copy for the hot loop.
    let mut rows: Vec<F> = Vec::with_capacity(two_n * p);
    for i in 0..two_n {
        for j in 0..p {
            rows.push(z.get(i, j));
        }
    }
    let base: Vec<F> = if symmetry {
        rows[0..p].to_vec()
    } else {
        vec![F::zero(); p]
    };

    let ranges: Vec<(u64, u64)> = (0..workers as u64)
        .map(|w| (total * w / workers as u64, total * (w + 1) / workers as u64))
        .filter(|(lo, hi)| lo < hi)
        .collect();

    let bests: Vec<WorkerBest<F>> = ranges
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut combo = unrank(lo, m, k);
            let mut t = vec![F::zero(); p];
            let mut best_balance = F::infinity();
            let mut best_rank = 0u64;
            let mut best_combo: Vec<usize> = Vec::new();
            for rank in lo..hi {
                t.copy_from_slice(&base);
                for &c in &combo {
                    let row = &rows[(c + offset) * p..(c + offset + 1) * p];
                    for j in 0..p {
                        t[j] += row[j];
                    }
                }
                let b = objective.eval_from_treated_sums(&t, n);
                if b < best_balance {
                    best_balance = b;
                    best_rank = rank;
                    best_combo = combo.clone();
                }
                if rank + 1 < hi {
                    let advanced = successor(&mut combo, m);
                    debug_assert!(advanced);
                }
            }
            WorkerBest {
                balance: best_balance,
                rank: best_rank,
                treated: best_combo,
                visited: hi - lo,
            }
        })
        .collect();

    let visited: u64 = bests.iter().map(|b| b.visited).sum();
    let best = bests
        .into_iter()
        .min_by(|a, b| {
            a.balance
                .partial_cmp(&b.balance)
                .unwrap()
                .then(a.rank.cmp(&b.rank))
        })
        .expect("at least one worker range");

    let mut treated: Vec<usize> = best.treated.iter().map(|&c| c + offset).collect();
    if symmetry {
        treated.insert(0, 0);
    }
    let allocation = Allocation::from_treated(&treated, two_n)?;
    let balance = objective.evaluate(z, &allocation)?;
    Ok(OptimalResult {
        allocation,
        balance,
        visited,
        rank: best.rank,
    })
}

//! Allocation-producing methods: complete randomization, greedy
//! pair-switching and its restricted/stratified/restarted variants, sorted
//! matched pairs, and rerandomization baselines.

use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::allocation::{random_balanced_allocation, Allocation, DesignResult};
use crate::balance::{treated_sums, BalanceObjective, ObjectiveKind};
use crate::data::{standardize, CovariateMatrix, StandardizedCovariates};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seeding::mix64;

/// One applied swap: which treated subject left the arm, which control
/// subject entered, and the balance afterwards.
#[derive(Clone, Debug)]
pub struct SwapStep<F> {
    pub treated: usize,
    pub control: usize,
    pub balance: F,
}

/// Per-iteration record of a greedy run; the balance sequence is strictly
/// decreasing.
#[derive(Clone, Debug)]
pub struct GreedyTrace<F> {
    pub steps: Vec<SwapStep<F>>,
}

impl<F> Default for GreedyTrace<F> {
    fn default() -> Self {
        Self { steps: Vec::new() }
    }
}

/// Row-major copy of the standardized values for fast per-subject access in
/// swap sweeps (the source is column-major).
struct RowCache<F> {
    cols: usize,
    data: Vec<F>,
}

impl<F: Real> RowCache<F> {
    fn new(z: &StandardizedCovariates<F>) -> Self {
        let (rows, cols) = (z.rows(), z.cols());
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(z.get(i, j));
            }
        }
        Self { cols, data }
    }

    fn row(&self, subject: usize) -> &[F] {
        &self.data[subject * self.cols..(subject + 1) * self.cols]
    }
}

fn insert_sorted(v: &mut Vec<usize>, value: usize) {
    let pos = v.binary_search(&value).unwrap_err();
    v.insert(pos, value);
}

fn remove_sorted(v: &mut Vec<usize>, value: usize) {
    let pos = v.binary_search(&value).unwrap();
    v.remove(pos);
}

/// Greedy pair-switching: repeatedly evaluate all `n^2` treated/control
/// swaps and apply the one yielding the minimum post-swap balance, as long
/// as it strictly decreases the balance. Ties break to the lexicographically
/// smallest (treated index, control index). `seed` is recorded verbatim in
/// the result.
pub fn greedy_pair_switch<F: Real>(
    z: &StandardizedCovariates<F>,
    init: &Allocation,
    objective: &BalanceObjective<F>,
    seed: u64,
) -> Result<(DesignResult<F>, GreedyTrace<F>)> {
    let initial_balance = objective.evaluate(z, init)?;
    let n = init.arm_size();
    let cols = z.cols();
    let rowz = RowCache::new(z);

    let mut treated = init.treated_indices();
    let mut control = init.control_indices();
    let mut t = treated_sums(z, init);
    let mut current = initial_balance;
    let mut trace = GreedyTrace::default();
    let mut candidate = vec![F::zero(); cols];

    loop {
        let mut best: Option<(F, usize, usize)> = None;
        for &ti in &treated {
            let zt = rowz.row(ti);
            for &ci in &control {
                let zc = rowz.row(ci);
                for j in 0..cols {
                    candidate[j] = t[j] - zt[j] + zc[j];
                }
                let b = objective.eval_from_treated_sums(&candidate, n);
                // Strict < keeps the first (lexicographically smallest)
                // candidate among ties; iteration order is ascending.
                if best.is_none_or(|(bb, _, _)| b < bb) {
                    best = Some((b, ti, ci));
                }
            }
        }
        match best {
            Some((b, ti, ci)) if b < current => {
                let zt = rowz.row(ti);
                let zc = rowz.row(ci);
                for j in 0..cols {
                    t[j] = t[j] - zt[j] + zc[j];
                }
                remove_sorted(&mut treated, ti);
                insert_sorted(&mut treated, ci);
                remove_sorted(&mut control, ci);
                insert_sorted(&mut control, ti);
                current = b;
                trace.steps.push(SwapStep {
                    treated: ti,
                    control: ci,
                    balance: b,
                });
            }
            _ => break,
        }
    }

    let allocation = Allocation::from_treated(&treated, 2 * n)?;
    // Recomputed from scratch so the reported value round-trips from the
    // emitted allocation; it agrees with the last trace entry to rounding.
    let final_balance = objective.evaluate(z, &allocation)?;
    let result = DesignResult {
        method: "greedy".into(),
        seed,
        allocation,
        initial_balance,
        final_balance,
        switches: trace.steps.len(),
        objective: objective.tag().into(),
    };
    Ok((result, trace))
}

/// Runs `restarts` independent greedy runs from random initializations with
/// derived seeds and keeps the smallest final balance (ties to the smallest
/// replicate index).
pub fn greedy_restarts<F: Real>(
    z: &StandardizedCovariates<F>,
    objective: &BalanceObjective<F>,
    restarts: usize,
    master_seed: u64,
) -> Result<DesignResult<F>> {
    if restarts == 0 {
        return Err(Error::Domain("restarts must be at least 1".into()));
    }
    let n = z.arm_size();
    let runs: Vec<DesignResult<F>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let seed = mix64(master_seed, r as u64);
            let init =
                random_balanced_allocation(n, seed).map_err(|e| e.in_replicate(r))?;
            let (result, _) = greedy_pair_switch(z, &init, objective, seed)
                .map_err(|e| e.in_replicate(r))?;
            Ok(result)
        })
        .collect::<Result<_>>()?;
    let best = runs
        .into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            a.final_balance
                .partial_cmp(&b.final_balance)
                .unwrap()
                .then(ia.cmp(ib))
        })
        .map(|(_, r)| r)
        .unwrap();
    Ok(DesignResult {
        method: "greedy-restarts".into(),
        seed: master_seed,
        ..best
    })
}

/// Restricted greedy for one covariate: only subjects among the
/// `ceil(b sqrt(n))` largest and smallest values may switch. Swaps continue
/// until the absolute difference of group sums drops below `c_thresh`, then
/// exactly one further improving swap is applied. Everyone outside the
/// extreme set keeps the randomized assignment.
pub fn greedy_restricted<F: Real>(
    z: &StandardizedCovariates<F>,
    b: F,
    c_thresh: F,
    seed: u64,
) -> Result<DesignResult<F>> {
    if z.cols() != 1 {
        return Err(Error::Shape(format!(
            "restricted greedy needs exactly one covariate, got {}",
            z.cols()
        )));
    }
    if !(b > F::zero()) {
        return Err(Error::Domain("extreme-set coefficient b must be positive".into()));
    }
    let n = z.arm_size();
    let two_n = z.rows();
    if b * F::from_usize(two_n).unwrap().sqrt() > F::from_usize(n).unwrap() {
        return Err(Error::Domain(format!(
            "extreme set exceeds arm capacity: b sqrt(2n) = {} > n = {n}",
            b * F::from_usize(two_n).unwrap().sqrt()
        )));
    }
    let k = (b * F::from_usize(n).unwrap().sqrt()).ceil().as_f64() as usize;
    let col = z.column(0);

    let mut order: Vec<usize> = (0..two_n).collect();
    order.sort_by(|&a, &c| col[a].partial_cmp(&col[c]).unwrap().then(a.cmp(&c)));
    let mut extreme: Vec<usize> = order[..k].iter().chain(order[two_n - k..].iter()).copied().collect();
    extreme.sort_unstable();

    let init = random_balanced_allocation(n, seed)?;
    let mut signs: Vec<i8> = init.signs().to_vec();
    let mut t: F = (0..two_n).filter(|&i| signs[i] == 1).map(|i| col[i]).sum();
    let initial_balance = F::of(2.0) / F::from_usize(n).unwrap() * t.abs();
    let mut switches = 0usize;

    // Best swap within the extreme set by post-swap |group-sum difference|,
    // which is 2|t|; ties lexicographic.
    let best_swap = |signs: &[i8], t: F| -> Option<(F, usize, usize)> {
        let mut best: Option<(F, usize, usize)> = None;
        for &i in &extreme {
            if signs[i] != 1 {
                continue;
            }
            for &j in &extreme {
                if signs[j] != -1 {
                    continue;
                }
                let nt = (t - col[i] + col[j]).abs();
                if best.is_none_or(|(bb, _, _)| nt < bb) {
                    best = Some((nt, i, j));
                }
            }
        }
        best
    };

    loop {
        let diff = (t + t).abs();
        if diff < c_thresh {
            break;
        }
        match best_swap(&signs, t) {
            Some((nt, i, j)) if nt < t.abs() => {
                t = t - col[i] + col[j];
                signs[i] = -1;
                signs[j] = 1;
                switches += 1;
            }
            _ => break,
        }
    }
    // One additional switch once the threshold is met, if any swap improves.
    if let Some((nt, i, j)) = best_swap(&signs, t) {
        if nt < t.abs() {
            t = t - col[i] + col[j];
            signs[i] = -1;
            signs[j] = 1;
            switches += 1;
        }
    }

    let allocation = Allocation::from_signs(signs)?;
    let final_balance = F::of(2.0) / F::from_usize(n).unwrap() * t.abs();
    Ok(DesignResult {
        method: "greedy-restricted".into(),
        seed,
        allocation,
        initial_balance,
        final_balance,
        switches,
        objective: "l1".into(),
    })
}

/// Per-stratum summary from a stratified run.
#[derive(Clone, Debug)]
pub struct StratumReport<F> {
    pub label: String,
    pub size: usize,
    pub initial_balance: F,
    pub final_balance: F,
    pub switches: usize,
}

/// Independent greedy run per stratum on that stratum's rows, re-standardized
/// within the stratum. Every stratum contributes equal counts to each arm,
/// so categorical variables are exactly balanced. The combined balances are
/// the sums of the per-stratum balances.
pub fn greedy_stratified<F: Real>(
    x: &CovariateMatrix<F>,
    objective: &ObjectiveKind<F>,
    seed: u64,
) -> Result<(DesignResult<F>, Vec<StratumReport<F>>)> {
    let labels = x
        .strata()
        .ok_or_else(|| Error::Shape("stratified design needs a stratum column".into()))?;
    // Strata in order of first appearance.
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        match groups.iter_mut().find(|(l, _)| l == label) {
            Some((_, members)) => members.push(i),
            None => groups.push((label.clone(), vec![i])),
        }
    }
    for (label, members) in &groups {
        if members.len() % 2 != 0 {
            return Err(Error::Shape(format!(
                "stratum {label:?} has odd size {}",
                members.len()
            )));
        }
    }

    let mut signs = vec![0i8; x.rows()];
    let mut reports = Vec::with_capacity(groups.len());
    let mut initial = F::zero();
    let mut fin = F::zero();
    let mut switches = 0usize;
    for (s, (label, members)) in groups.iter().enumerate() {
        let sub = x.select_rows(members)?;
        let zs = standardize(&sub)?;
        let obj = objective.build(&zs)?;
        let stratum_seed = mix64(seed, s as u64);
        let init = random_balanced_allocation(members.len() / 2, stratum_seed)?;
        let (result, _) = greedy_pair_switch(&zs, &init, &obj, stratum_seed)?;
        for (local, &subject) in members.iter().enumerate() {
            signs[subject] = result.allocation.signs()[local];
        }
        initial += result.initial_balance;
        fin += result.final_balance;
        switches += result.switches;
        reports.push(StratumReport {
            label: label.clone(),
            size: members.len(),
            initial_balance: result.initial_balance,
            final_balance: result.final_balance,
            switches: result.switches,
        });
    }
    let allocation = Allocation::from_signs(signs)?;
    let result = DesignResult {
        method: "greedy-stratified".into(),
        seed,
        allocation,
        initial_balance: initial,
        final_balance: fin,
        switches,
        objective: objective.tag().into(),
    };
    Ok((result, reports))
}

/// Sorted matched pairs for one covariate: sort descending, pair adjacent
/// values, and assign one subject of each pair to each arm by a fair coin.
pub fn matched_pairs<F: Real>(x: &CovariateMatrix<F>, seed: u64) -> Result<DesignResult<F>> {
    if x.cols() != 1 {
        return Err(Error::Shape(format!(
            "matched pairs needs exactly one covariate, got {}",
            x.cols()
        )));
    }
    let two_n = x.rows();
    let mut order: Vec<usize> = (0..two_n).collect();
    order.sort_by(|&a, &b| x.get(b, 0).partial_cmp(&x.get(a, 0)).unwrap().then(a.cmp(&b)));

    let mut rng = crate::seeding::rng(seed);
    let mut signs = vec![0i8; two_n];
    for pair in order.chunks_exact(2) {
        let first_treated: bool = rand::Rng::random(&mut rng);
        signs[pair[0]] = if first_treated { 1 } else { -1 };
        signs[pair[1]] = if first_treated { -1 } else { 1 };
    }
    let allocation = Allocation::from_signs(signs)?;
    let z = standardize(x)?;
    let balance = crate::balance::l1_balance(&z, &allocation)?;
    Ok(DesignResult {
        method: "matched".into(),
        seed,
        allocation,
        initial_balance: balance,
        final_balance: balance,
        switches: 0,
        objective: "l1".into(),
    })
}

/// Rerandomization flavor.
#[derive(Clone, Copy, Debug)]
pub enum RerandMode<F> {
    /// Keep the best of a fixed number of complete randomizations.
    BestOf { draws: usize },
    /// Redraw until the objective falls below `threshold`, up to
    /// `max_attempts`.
    Threshold { threshold: F, max_attempts: usize },
}

pub const DEFAULT_RERAND_MAX_ATTEMPTS: usize = 1_000_000;

/// Acceptance threshold defaulting: the chi-square_p quantile with
/// acceptance probability 0.01.
pub fn default_rerand_threshold<F: Real>(p: usize) -> F {
    let chi = ChiSquared::new(p as f64).expect("positive degrees of freedom");
    F::of(chi.inverse_cdf(0.01))
}

/// Complete randomizations filtered by balance.
pub fn rerandomize<F: Real>(
    z: &StandardizedCovariates<F>,
    objective: &BalanceObjective<F>,
    mode: RerandMode<F>,
    seed: u64,
) -> Result<DesignResult<F>> {
    let n = z.arm_size();
    match mode {
        RerandMode::BestOf { draws } => {
            if draws == 0 {
                return Err(Error::Domain("draw count must be at least 1".into()));
            }
            let evaluated: Vec<(F, Allocation)> = (0..draws)
                .into_par_iter()
                .map(|i| {
                    let alloc = random_balanced_allocation(n, mix64(seed, i as u64))
                        .map_err(|e| e.in_replicate(i))?;
                    let b = objective.evaluate(z, &alloc).map_err(|e| e.in_replicate(i))?;
                    Ok((b, alloc))
                })
                .collect::<Result<_>>()?;
            let (balance, allocation) = evaluated
                .into_iter()
                .enumerate()
                .min_by(|(ia, (a, _)), (ib, (b, _))| {
                    a.partial_cmp(b).unwrap().then(ia.cmp(ib))
                })
                .map(|(_, pair)| pair)
                .unwrap();
            Ok(DesignResult {
                method: "rerand-best".into(),
                seed,
                allocation,
                initial_balance: balance,
                final_balance: balance,
                switches: 0,
                objective: objective.tag().into(),
            })
        }
        RerandMode::Threshold {
            threshold,
            max_attempts,
        } => {
            if !(threshold > F::zero()) {
                return Err(Error::Domain("threshold must be positive".into()));
            }
            if max_attempts == 0 {
                return Err(Error::Domain("max_attempts must be at least 1".into()));
            }
            let mut best: Option<(F, Allocation)> = None;
            for attempt in 0..max_attempts {
                let alloc = random_balanced_allocation(n, mix64(seed, attempt as u64))?;
                let b = objective.evaluate(z, &alloc)?;
                if b < threshold {
                    return Ok(DesignResult {
                        method: "rerand-threshold".into(),
                        seed,
                        allocation: alloc,
                        initial_balance: b,
                        final_balance: b,
                        switches: 0,
                        objective: objective.tag().into(),
                    });
                }
                if best.as_ref().is_none_or(|(bb, _)| b < *bb) {
                    best = Some((b, alloc));
                }
            }
            let (best_balance, best_allocation) = best.unwrap();
            Err(Error::ThresholdNotMet {
                threshold: threshold.as_f64(),
                attempts: max_attempts,
                best_balance: best_balance.as_f64(),
                best_allocation,
            })
        }
    }
}

/// Anything that can produce an allocation for given covariates and seed.
/// Implemented by [`DesignMethod`]; tests and callers may supply their own.
pub trait Designer<F: Real>: Sync {
    fn design(&self, x: &CovariateMatrix<F>, seed: u64) -> Result<DesignResult<F>>;

    fn assign(&self, x: &CovariateMatrix<F>, seed: u64) -> Result<Allocation> {
        Ok(self.design(x, seed)?.allocation)
    }
}

/// A fully parameterized design method, as selected on the command line.
#[derive(Clone, Debug)]
pub enum DesignMethod<F> {
    Random {
        objective: ObjectiveKind<F>,
    },
    Greedy {
        objective: ObjectiveKind<F>,
    },
    GreedyRestarts {
        objective: ObjectiveKind<F>,
        restarts: usize,
    },
    GreedyRestricted {
        b: F,
        c_thresh: F,
    },
    GreedyStratified {
        objective: ObjectiveKind<F>,
    },
    MatchedPairs,
    RerandBest {
        objective: ObjectiveKind<F>,
        draws: usize,
    },
    RerandThreshold {
        objective: ObjectiveKind<F>,
        threshold: Option<F>,
        max_attempts: usize,
    },
}

impl<F: Real> DesignMethod<F> {
    pub fn name(&self) -> &'static str {
        match self {
            DesignMethod::Random { .. } => "random",
            DesignMethod::Greedy { .. } => "greedy",
            DesignMethod::GreedyRestarts { .. } => "greedy-restarts",
            DesignMethod::GreedyRestricted { .. } => "greedy-restricted",
            DesignMethod::GreedyStratified { .. } => "greedy-stratified",
            DesignMethod::MatchedPairs => "matched",
            DesignMethod::RerandBest { .. } => "rerand-best",
            DesignMethod::RerandThreshold { .. } => "rerand-threshold",
        }
    }

    /// Default restricted-greedy parameters: extreme-set coefficient 2 and
    /// one standardized unit of group-sum difference.
    pub fn restricted_defaults() -> (F, F) {
        (F::of(2.0), F::one())
    }
}

impl<F: Real> Designer<F> for DesignMethod<F> {
    fn design(&self, x: &CovariateMatrix<F>, seed: u64) -> Result<DesignResult<F>> {
        match self {
            DesignMethod::Random { objective } => {
                let z = standardize(x)?;
                let obj = objective.build(&z)?;
                let allocation = random_balanced_allocation(x.arm_size(), seed)?;
                let balance = obj.evaluate(&z, &allocation)?;
                Ok(DesignResult {
                    method: self.name().into(),
                    seed,
                    allocation,
                    initial_balance: balance,
                    final_balance: balance,
                    switches: 0,
                    objective: obj.tag().into(),
                })
            }
            DesignMethod::Greedy { objective } => {
                let z = standardize(x)?;
                let obj = objective.build(&z)?;
                let init = random_balanced_allocation(x.arm_size(), seed)?;
                Ok(greedy_pair_switch(&z, &init, &obj, seed)?.0)
            }
            DesignMethod::GreedyRestarts {
                objective,
                restarts,
            } => {
                let z = standardize(x)?;
                let obj = objective.build(&z)?;
                greedy_restarts(&z, &obj, *restarts, seed)
            }
            DesignMethod::GreedyRestricted { b, c_thresh } => {
                let z = standardize(x)?;
                greedy_restricted(&z, *b, *c_thresh, seed)
            }
            DesignMethod::GreedyStratified { objective } => {
                Ok(greedy_stratified(x, objective, seed)?.0)
            }
            DesignMethod::MatchedPairs => matched_pairs(x, seed),
            DesignMethod::RerandBest { objective, draws } => {
                let z = standardize(x)?;
                let obj = objective.build(&z)?;
                rerandomize(&z, &obj, RerandMode::BestOf { draws: *draws }, seed)
            }
            DesignMethod::RerandThreshold {
                objective,
                threshold,
                max_attempts,
            } => {
                let z = standardize(x)?;
                let obj = objective.build(&z)?;
                let threshold =
                    threshold.unwrap_or_else(|| default_rerand_threshold(x.cols()));
                rerandomize(
                    &z,
                    &obj,
                    RerandMode::Threshold {
                        threshold,
                        max_attempts: *max_attempts,
                    },
                    seed,
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::standardize;

    fn z1234() -> StandardizedCovariates<f64> {
        standardize(&CovariateMatrix::from_column(vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap()
    }

    fn normal_column(two_n: usize, seed: u64) -> CovariateMatrix<f64> {
        let mut rng = crate::seeding::rng(seed);
        CovariateMatrix::from_column(
            (0..two_n)
                .map(|_| f64::sample_standard_normal(&mut rng))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn four_subject_example_switches_once_to_zero() {
        // Init T = {3,4} (one-based): swaps give balances {0, 0.7746,
        // 0.7746, 0}; the tie resolves to switching subjects (3,1).
        let z = z1234();
        let obj = BalanceObjective::l1();
        let init = Allocation::from_treated(&[2, 3], 4).unwrap();
        let (result, trace) = greedy_pair_switch(&z, &init, &obj, 0).unwrap();
        assert_eq!(result.switches, 1);
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].treated, 2);
        assert_eq!(trace.steps[0].control, 0);
        assert!(result.final_balance.abs() < 1e-12);
        assert_eq!(result.allocation.treated_indices(), vec![0, 3]);
    }

    #[test]
    fn already_optimal_init_is_a_fixed_point() {
        let z = z1234();
        let obj = BalanceObjective::l1();
        let init = Allocation::from_treated(&[0, 3], 4).unwrap();
        let (result, trace) = greedy_pair_switch(&z, &init, &obj, 0).unwrap();
        assert_eq!(result.switches, 0);
        assert!(trace.steps.is_empty());
        assert_eq!(result.final_balance, result.initial_balance);
    }

    #[test]
    fn trace_balance_is_strictly_decreasing() {
        for seed in 0..30u64 {
            let x = normal_column(40, mix64(900, seed));
            let z = standardize(&x).unwrap();
            let obj = BalanceObjective::l1();
            let init = random_balanced_allocation(20, mix64(901, seed)).unwrap();
            let (result, trace) = greedy_pair_switch(&z, &init, &obj, seed).unwrap();
            let mut last = result.initial_balance;
            for step in &trace.steps {
                assert!(step.balance < last, "not strictly decreasing");
                last = step.balance;
            }
            assert!(result.final_balance <= result.initial_balance);
        }
    }

    #[test]
    fn final_allocation_is_locally_optimal() {
        // No single swap of the final allocation improves the balance.
        for seed in 0..10u64 {
            let x = normal_column(24, mix64(77, seed));
            let z = standardize(&x).unwrap();
            let obj = BalanceObjective::l1();
            let init = random_balanced_allocation(12, mix64(78, seed)).unwrap();
            let (result, _) = greedy_pair_switch(&z, &init, &obj, seed).unwrap();
            let t = treated_sums(&z, &result.allocation);
            for &ti in &result.allocation.treated_indices() {
                for &ci in &result.allocation.control_indices() {
                    let cand = [t[0] - z.get(ti, 0) + z.get(ci, 0)];
                    let b = obj.eval_from_treated_sums(&cand, 12);
                    assert!(
                        b >= result.final_balance - 1e-12,
                        "swap ({ti},{ci}) improves: {b} < {}",
                        result.final_balance
                    );
                }
            }
        }
    }

    #[test]
    fn greedy_is_deterministic() {
        let x = normal_column(30, 5);
        let method = DesignMethod::Greedy {
            objective: ObjectiveKind::<f64>::L1,
        };
        let a = method.design(&x, 123).unwrap();
        let b = method.design(&x, 123).unwrap();
        assert_eq!(a.allocation, b.allocation);
        assert_eq!(a.final_balance, b.final_balance);
        assert_eq!(a.switches, b.switches);
    }

    #[test]
    fn restarts_zero_is_a_domain_error() {
        let z = z1234();
        let obj = BalanceObjective::l1();
        assert!(matches!(
            greedy_restarts(&z, &obj, 0, 1),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn one_restart_matches_a_single_run() {
        let x = normal_column(40, 11);
        let z = standardize(&x).unwrap();
        let obj = BalanceObjective::l1();
        let master = 313u64;
        let restarted = greedy_restarts(&z, &obj, 1, master).unwrap();
        let derived = mix64(master, 0);
        let init = random_balanced_allocation(20, derived).unwrap();
        let (single, _) = greedy_pair_switch(&z, &init, &obj, derived).unwrap();
        assert_eq!(restarted.allocation, single.allocation);
        assert_eq!(restarted.final_balance, single.final_balance);
        assert_eq!(restarted.switches, single.switches);
    }

    #[test]
    fn best_of_restarts_beats_every_individual_run() {
        let x = normal_column(60, 21);
        let z = standardize(&x).unwrap();
        let obj = BalanceObjective::l1();
        let master = 99u64;
        let best = greedy_restarts(&z, &obj, 20, master).unwrap();
        for r in 0..20u64 {
            let seed = mix64(master, r);
            let init = random_balanced_allocation(30, seed).unwrap();
            let (run, _) = greedy_pair_switch(&z, &init, &obj, seed).unwrap();
            assert!(best.final_balance <= run.final_balance);
        }
    }

    #[test]
    fn restarts_median_improves_on_single_runs() {
        // Best-of-20 median over 100 trials is at most a fifth of the
        // single-run median at n = 50.
        let n = 50usize;
        let trials = 100u64;
        let mut single = Vec::new();
        let mut restarted = Vec::new();
        for trial in 0..trials {
            let x = normal_column(2 * n, mix64(5_000, trial));
            let z = standardize(&x).unwrap();
            let obj = BalanceObjective::l1();
            let master = mix64(6_000, trial);
            restarted.push(greedy_restarts(&z, &obj, 20, master).unwrap().final_balance);
            let seed = mix64(master, 0);
            let init = random_balanced_allocation(n, seed).unwrap();
            single.push(greedy_pair_switch(&z, &init, &obj, seed).unwrap().0.final_balance);
        }
        let median = |v: &mut Vec<f64>| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        let med_single = median(&mut single);
        let med_best = median(&mut restarted);
        assert!(
            med_best <= med_single / 5.0,
            "median single {med_single}, median best-of-20 {med_best}"
        );
    }

    #[test]
    fn restricted_preserves_non_extreme_assignments() {
        let n = 50usize;
        let x = normal_column(2 * n, 3_456);
        let z = standardize(&x).unwrap();
        let b = 2.0f64;
        let seed = 777u64;
        let result = greedy_restricted(&z, b, 1.0, seed).unwrap();
        let init = random_balanced_allocation(n, seed).unwrap();

        let k = (b * (n as f64).sqrt()).ceil() as usize;
        let col = z.column(0);
        let mut order: Vec<usize> = (0..2 * n).collect();
        order.sort_by(|&a, &c| col[a].partial_cmp(&col[c]).unwrap());
        let extreme: std::collections::HashSet<usize> =
            order[..k].iter().chain(order[2 * n - k..].iter()).copied().collect();
        for i in 0..2 * n {
            if !extreme.contains(&i) {
                assert_eq!(
                    result.allocation.is_treated(i),
                    init.is_treated(i),
                    "non-extreme subject {i} changed arm"
                );
            }
        }
    }

    #[test]
    fn restricted_with_infinite_threshold_switches_at_most_once() {
        for seed in 0..20u64 {
            let x = normal_column(40, mix64(88, seed));
            let z = standardize(&x).unwrap();
            let result = greedy_restricted(&z, 2.0, f64::INFINITY, seed).unwrap();
            assert!(result.switches <= 1, "switches = {}", result.switches);
        }
    }

    #[test]
    fn restricted_rejects_oversized_extreme_set() {
        let z = standardize(&normal_column(8, 1)).unwrap();
        // b sqrt(2n) = 4 sqrt(8) = 11.3 > n = 4.
        assert!(matches!(
            greedy_restricted(&z, 4.0, 1.0, 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn restricted_balances_well_while_retaining_most_assignments() {
        // Monte Carlo check of the limiting-randomness construction:
        // n=100, b=2, c_thresh=1.
        let n = 100usize;
        let runs = 200u64;
        let mut total_balance = 0.0;
        let mut retained = 0usize;
        for r in 0..runs {
            let x = normal_column(2 * n, mix64(21_000, r));
            let z = standardize(&x).unwrap();
            let seed = mix64(22_000, r);
            let result = greedy_restricted(&z, 2.0, 1.0, seed).unwrap();
            total_balance += result.final_balance;
            let init = random_balanced_allocation(n, seed).unwrap();
            retained += (0..2 * n)
                .filter(|&i| result.allocation.is_treated(i) == init.is_treated(i))
                .count();
        }
        let mean_balance = total_balance / runs as f64;
        assert!(mean_balance < 1e-2, "mean final balance {mean_balance}");
        let frac = retained as f64 / (runs as f64 * 2.0 * n as f64);
        let floor = 1.0 - 2.0 * (2.0 * (n as f64).sqrt()) / (2.0 * n as f64);
        assert!(frac >= floor, "retained fraction {frac} < {floor}");
    }

    #[test]
    fn stratified_single_stratum_reduces_to_greedy() {
        let mut rng = crate::seeding::rng(44);
        let values: Vec<f64> = (0..20).map(|_| f64::sample_standard_normal(&mut rng)).collect();
        let x = CovariateMatrix::new(20, 1, values.clone(), Some(vec!["only".into(); 20])).unwrap();
        let (result, reports) =
            greedy_stratified(&x, &ObjectiveKind::L1, 5).unwrap();
        assert_eq!(reports.len(), 1);

        let plain = CovariateMatrix::from_column(values).unwrap();
        let z = standardize(&plain).unwrap();
        let obj = BalanceObjective::l1();
        let derived = mix64(5, 0);
        let init = random_balanced_allocation(10, derived).unwrap();
        let (single, _) = greedy_pair_switch(&z, &init, &obj, derived).unwrap();
        assert_eq!(result.allocation, single.allocation);
        assert_eq!(result.final_balance, single.final_balance);
    }

    #[test]
    fn stratified_two_strata_balance_to_zero() {
        let values = vec![1.0f64, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0];
        let strata: Vec<String> = ["a", "a", "a", "a", "b", "b", "b", "b"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let x = CovariateMatrix::new(8, 1, values, Some(strata)).unwrap();
        let (result, reports) = greedy_stratified(&x, &ObjectiveKind::L1, 9).unwrap();
        for rep in &reports {
            assert!(rep.final_balance.abs() < 1e-12, "stratum {}", rep.label);
        }
        assert!(result.final_balance.abs() < 1e-12);
    }

    #[test]
    fn stratified_arms_are_balanced_within_every_stratum() {
        let mut rng = crate::seeding::rng(321);
        let values: Vec<f64> = (0..24).map(|_| f64::sample_standard_normal(&mut rng)).collect();
        let strata: Vec<String> = (0..24)
            .map(|i| if i < 10 { "u".into() } else { "v".into() })
            .collect();
        let x = CovariateMatrix::new(24, 1, values, Some(strata.clone())).unwrap();
        let (result, _) = greedy_stratified(&x, &ObjectiveKind::L1, 17).unwrap();
        for label in ["u", "v"] {
            let members: Vec<usize> = (0..24).filter(|&i| strata[i] == label).collect();
            let treated = members
                .iter()
                .filter(|&&i| result.allocation.is_treated(i))
                .count();
            assert_eq!(treated * 2, members.len(), "stratum {label}");
        }
    }

    #[test]
    fn stratified_rejects_odd_stratum_with_label() {
        let values = vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let strata: Vec<String> = ["a", "a", "a", "b", "b", "b"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let x = CovariateMatrix::new(6, 1, values, Some(strata)).unwrap();
        match greedy_stratified(&x, &ObjectiveKind::L1, 0) {
            Err(Error::Shape(msg)) => assert!(msg.contains('a'), "{msg}"),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn matched_pairs_never_co_assigns_within_a_pair() {
        let n = 10usize;
        let x = normal_column(2 * n, 2_024);
        let mut order: Vec<usize> = (0..2 * n).collect();
        order.sort_by(|&a, &b| x.get(b, 0).partial_cmp(&x.get(a, 0)).unwrap());
        for rep in 0..10_000u64 {
            let result = matched_pairs(&x, mix64(1, rep)).unwrap();
            for pair in order.chunks_exact(2) {
                assert!(!result.allocation.same_arm(pair[0], pair[1]));
            }
        }
    }

    #[test]
    fn matched_pairs_across_pair_co_assignment_is_half() {
        let n = 10usize;
        let x = normal_column(2 * n, 2_025);
        let mut order: Vec<usize> = (0..2 * n).collect();
        order.sort_by(|&a, &b| x.get(b, 0).partial_cmp(&x.get(a, 0)).unwrap());
        let (i, j) = (order[0], order[2]); // members of different pairs
        let reps = 10_000u64;
        let mut same = 0usize;
        for rep in 0..reps {
            let result = matched_pairs(&x, mix64(2, rep)).unwrap();
            if result.allocation.same_arm(i, j) {
                same += 1;
            }
        }
        let freq = same as f64 / reps as f64;
        let se = (0.25 / reps as f64).sqrt();
        assert!((freq - 0.5).abs() < 3.0 * se, "freq {freq}");
    }

    #[test]
    fn matched_pairs_balance_scales_as_one_over_n() {
        // n * mean(B) stays within a factor of 3 across n.
        let reps = 1_000u64;
        let mut scaled = Vec::new();
        for (gi, &n) in [25usize, 50, 100].iter().enumerate() {
            let mut acc = 0.0;
            for rep in 0..reps {
                let x = normal_column(2 * n, mix64(3_000 + gi as u64, rep));
                let result = matched_pairs(&x, mix64(4_000 + gi as u64, rep)).unwrap();
                acc += result.final_balance;
            }
            scaled.push(n as f64 * acc / reps as f64);
        }
        let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi / lo < 3.0, "n * mean B = {scaled:?}");
    }

    #[test]
    fn matched_pairs_rejects_multicolumn() {
        let x = CovariateMatrix::new(4, 2, vec![1.0; 8], None).unwrap();
        assert!(matches!(matched_pairs(&x, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn rerand_single_draw_is_complete_randomization() {
        let x = normal_column(20, 8);
        let z = standardize(&x).unwrap();
        let obj = BalanceObjective::l1();
        let result = rerandomize(&z, &obj, RerandMode::BestOf { draws: 1 }, 42).unwrap();
        let plain = random_balanced_allocation(10, mix64(42, 0)).unwrap();
        assert_eq!(result.allocation, plain);
    }

    #[test]
    fn rerand_best_of_more_draws_helps_in_median() {
        let n = 50usize;
        let trials = 500u64;
        let mut med1 = Vec::new();
        let mut med100 = Vec::new();
        for trial in 0..trials {
            let x = normal_column(2 * n, mix64(31_000, trial));
            let z = standardize(&x).unwrap();
            let obj = BalanceObjective::l1();
            let seed = mix64(32_000, trial);
            med1.push(
                rerandomize(&z, &obj, RerandMode::BestOf { draws: 1 }, seed)
                    .unwrap()
                    .final_balance,
            );
            med100.push(
                rerandomize(&z, &obj, RerandMode::BestOf { draws: 100 }, seed)
                    .unwrap()
                    .final_balance,
            );
        }
        let median = |v: &mut Vec<f64>| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        assert!(median(&mut med100) < median(&mut med1));
    }

    #[test]
    fn rerand_vacuous_threshold_accepts_first_draw() {
        let x = normal_column(20, 9);
        let z = standardize(&x).unwrap();
        let obj = BalanceObjective::l1();
        let result = rerandomize(
            &z,
            &obj,
            RerandMode::Threshold {
                threshold: f64::INFINITY,
                max_attempts: 10,
            },
            7,
        )
        .unwrap();
        let first = random_balanced_allocation(10, mix64(7, 0)).unwrap();
        assert_eq!(result.allocation, first);
    }

    #[test]
    fn single_precision_instantiation_works() {
        let x = CovariateMatrix::<f32>::from_column(vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let method = DesignMethod::Greedy {
            objective: ObjectiveKind::<f32>::L1,
        };
        let result = method.design(&x, 3).unwrap();
        // Both zero-balance splits pair an outer with an inner value.
        assert!(result.final_balance.abs() < 1e-6);
        let treated = result.allocation.canonical().treated_indices();
        assert!(treated == vec![0, 3] || treated == vec![1, 2], "{treated:?}");
    }

    #[test]
    fn rerand_unattainable_threshold_reports_best_seen() {
        let x = normal_column(12, 10);
        let z = standardize(&x).unwrap();
        let obj = BalanceObjective::l1();
        match rerandomize(
            &z,
            &obj,
            RerandMode::Threshold {
                threshold: 1e-300,
                max_attempts: 50,
            },
            7,
        ) {
            Err(Error::ThresholdNotMet {
                attempts,
                best_balance,
                best_allocation,
                ..
            }) => {
                assert_eq!(attempts, 50);
                let recomputed = obj.evaluate(&z, &best_allocation).unwrap();
                assert!((recomputed - best_balance).abs() < 1e-12);
            }
            other => panic!("expected ThresholdNotMet, got {other:?}"),
        }
    }
}

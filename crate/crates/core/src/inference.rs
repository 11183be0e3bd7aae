//! Difference-in-means estimation, permutation testing under the sharp
//! null, and confidence intervals by test inversion.
//!
//! The null distribution comes from rerunning the design method on the
//! actual subjects (covariates fixed) with derived seeds. Responses adjusted
//! by the hypothesized effect are allocation-independent under the sharp
//! null, so the p-value is exact up to the discreteness of resolution R.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::Allocation;
use crate::data::CovariateMatrix;
use crate::designs::{greedy_pair_switch, Designer};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seeding::mix64;
use crate::simharness::{generate_covariates, CovariateDist};

/// A completed experiment: covariates, responses, and the allocation that
/// was actually used.
#[derive(Clone, Debug)]
pub struct ExperimentData<F> {
    covariates: CovariateMatrix<F>,
    responses: Vec<F>,
    observed: Allocation,
}

impl<F: Real> ExperimentData<F> {
    pub fn new(
        covariates: CovariateMatrix<F>,
        responses: Vec<F>,
        observed: Allocation,
    ) -> Result<Self> {
        if responses.len() != covariates.rows() || observed.total() != covariates.rows() {
            return Err(Error::Shape(format!(
                "covariates ({} rows), responses ({}) and allocation ({}) disagree",
                covariates.rows(),
                responses.len(),
                observed.total()
            )));
        }
        if let Some(bad) = responses.iter().position(|y| !y.is_finite()) {
            return Err(Error::Shape(format!("non-finite response at row {}", bad + 1)));
        }
        Ok(Self {
            covariates,
            responses,
            observed,
        })
    }

    pub fn covariates(&self) -> &CovariateMatrix<F> {
        &self.covariates
    }

    pub fn responses(&self) -> &[F] {
        &self.responses
    }

    pub fn observed(&self) -> &Allocation {
        &self.observed
    }
}

/// Mean treated response minus mean control response.
pub fn diff_in_means<F: Real>(y: &[F], a: &Allocation) -> Result<F> {
    if y.len() != a.total() {
        return Err(Error::Shape(format!(
            "{} responses for {} subjects",
            y.len(),
            a.total()
        )));
    }
    let n = F::from_usize(a.arm_size()).unwrap();
    let mut treated = F::zero();
    let mut control = F::zero();
    for (yi, &s) in y.iter().zip(a.signs()) {
        if s == 1 {
            treated += *yi;
        } else {
            control += *yi;
        }
    }
    Ok((treated - control) / n)
}

/// Two-sided permutation p-value with the include-the-observed convention:
/// `(1 + #{|null| >= |observed|}) / (R + 1)`.
pub fn two_sided_p_value<F: Real>(observed: F, nulls: &[F]) -> F {
    let count = nulls.iter().filter(|b| b.abs() >= observed.abs()).count();
    F::from_usize(1 + count).unwrap() / F::from_usize(nulls.len() + 1).unwrap()
}

/// Result of a permutation test (and optional interval by inversion).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PermutationResult<F> {
    pub estimate: F,
    pub null_estimates: Vec<F>,
    pub p_value: F,
    pub ci: Option<(F, F)>,
    pub alpha: Option<F>,
    pub resolution: usize,
    pub beta0: F,
}

fn null_allocations<F: Real, D: Designer<F>>(
    x: &CovariateMatrix<F>,
    resolution: usize,
    designer: &D,
    master_seed: u64,
) -> Result<Vec<Allocation>> {
    (0..resolution)
        .into_par_iter()
        .map(|r| {
            designer
                .assign(x, mix64(master_seed, r as u64))
                .map_err(|e| e.in_replicate(r))
        })
        .collect()
}

/// Tests the sharp null that the additive effect equals `beta0`, using `R`
/// replicate designs on the fixed covariates as the reference distribution.
pub fn permutation_test<F: Real, D: Designer<F>>(
    data: &ExperimentData<F>,
    resolution: usize,
    designer: &D,
    master_seed: u64,
    beta0: F,
) -> Result<PermutationResult<F>> {
    if resolution == 0 {
        return Err(Error::Domain("resolution R must be at least 1".into()));
    }
    let estimate = diff_in_means(data.responses(), data.observed())?;
    let adjusted: Vec<F> = data
        .responses()
        .iter()
        .zip(data.observed().signs())
        .map(|(&y, &s)| if s == 1 { y - beta0 } else { y })
        .collect();
    let allocations = null_allocations(data.covariates(), resolution, designer, master_seed)?;
    let null_estimates: Vec<F> = allocations
        .iter()
        .map(|a| diff_in_means(&adjusted, a))
        .collect::<Result<_>>()?;
    let p_value = two_sided_p_value(estimate - beta0, &null_estimates);
    Ok(PermutationResult {
        estimate,
        null_estimates,
        p_value,
        ci: None,
        alpha: None,
        resolution,
        beta0,
    })
}

fn sample_sd<F: Real>(y: &[F]) -> F {
    let m = F::from_usize(y.len()).unwrap();
    let mean = y.iter().copied().sum::<F>() / m;
    let ss: F = y
        .iter()
        .map(|&v| {
            let d = v - mean;
            d * d
        })
        .sum();
    (ss / (m - F::one())).sqrt()
}

/// Inverts the permutation test: the set of effects beta0 with p(beta0) >
/// alpha, located by stepping out then bisecting on each side of the
/// estimate. The same replicate allocations are reused for every beta0
/// (common random numbers), which keeps the acceptance region an interval.
/// Endpoints are resolved to 1e-3 times the response standard deviation;
/// brackets are sought within 10 standard deviations.
pub fn invert_ci<F: Real, D: Designer<F>>(
    data: &ExperimentData<F>,
    resolution: usize,
    designer: &D,
    alpha: F,
    master_seed: u64,
) -> Result<(F, F)> {
    if !(alpha > F::zero() && alpha < F::of(0.5)) {
        return Err(Error::Domain("alpha must lie in (0, 0.5)".into()));
    }
    let estimate = diff_in_means(data.responses(), data.observed())?;
    let allocations = null_allocations(data.covariates(), resolution, designer, master_seed)?;
    // Null estimate at hypothesis beta0 is g_r - beta0 * h_r, where g_r is
    // the raw difference and h_r the overlap of the replicate with the
    // observed treated arm.
    let indicator: Vec<F> = data
        .observed()
        .signs()
        .iter()
        .map(|&s| if s == 1 { F::one() } else { F::zero() })
        .collect();
    let g: Vec<F> = allocations
        .iter()
        .map(|a| diff_in_means(data.responses(), a))
        .collect::<Result<_>>()?;
    let h: Vec<F> = allocations
        .iter()
        .map(|a| diff_in_means(&indicator, a))
        .collect::<Result<_>>()?;
    let p_of = |beta0: F| -> F {
        let observed = estimate - beta0;
        let count = g
            .iter()
            .zip(&h)
            .filter(|(&gr, &hr)| (gr - beta0 * hr).abs() >= observed.abs())
            .count();
        F::from_usize(1 + count).unwrap() / F::from_usize(resolution + 1).unwrap()
    };

    let sd = sample_sd(data.responses()).max(F::of(1e-12));
    let tol = F::of(1e-3) * sd;
    let max_steps = 10usize;

    let endpoint = |direction: F| -> Result<F> {
        let mut inside = estimate;
        let mut outside = None;
        for step in 1..=max_steps {
            let probe = estimate + direction * F::from_usize(step).unwrap() * sd;
            if p_of(probe) > alpha {
                inside = probe;
            } else {
                outside = Some(probe);
                break;
            }
        }
        let mut outside = outside.ok_or_else(|| {
            Error::Bracket(format!(
                "no rejection within {max_steps} response standard deviations of the estimate"
            ))
        })?;
        while (outside - inside).abs() > tol {
            let mid = (inside + outside) * F::of(0.5);
            if p_of(mid) > alpha {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        Ok(inside)
    };

    let hi = endpoint(F::one())?;
    let lo = endpoint(-F::one())?;
    Ok((lo, hi))
}

/// Permutation test plus interval, sharing the replicate pool.
pub fn permutation_inference<F: Real, D: Designer<F>>(
    data: &ExperimentData<F>,
    resolution: usize,
    designer: &D,
    alpha: F,
    master_seed: u64,
    beta0: F,
) -> Result<PermutationResult<F>> {
    let mut result = permutation_test(data, resolution, designer, master_seed, beta0)?;
    result.ci = Some(invert_ci(data, resolution, designer, alpha, master_seed)?);
    result.alpha = Some(alpha);
    Ok(result)
}

/// Response surface presets for the consistency probe.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResponseFn {
    Zero,
    Linear,
    Quadratic,
    Sinusoid,
}

impl ResponseFn {
    pub fn apply<F: Real>(&self, x: F) -> F {
        match self {
            ResponseFn::Zero => F::zero(),
            ResponseFn::Linear => x,
            ResponseFn::Quadratic => x * x,
            ResponseFn::Sinusoid => x.sin(),
        }
    }
}

/// One grid row of the consistency probe.
#[derive(Clone, Debug, Serialize)]
pub struct ProbeRow<F> {
    pub n: usize,
    pub mean_abs_error: F,
    /// Mean of the switched-pairs bound `(2/n) N_s (y_max - y_min)`.
    pub mean_bound: F,
    /// Runs where `|initial - final|` difference-in-means exceeded the bound.
    pub bound_violations: usize,
}

/// Simulates greedy-designed experiments with a known additive effect of 1
/// and reports the mean absolute estimation error per sample size, along
/// with the switched-pairs bound check on every run.
pub fn consistency_probe<F: Real>(
    f: ResponseFn,
    dist: CovariateDist,
    n_grid: &[usize],
    r: usize,
    noise_sd: F,
    master_seed: u64,
) -> Result<Vec<ProbeRow<F>>> {
    let beta = F::one();
    let mut rows = Vec::with_capacity(n_grid.len());
    for (gi, &n) in n_grid.iter().enumerate() {
        let cell_seed = mix64(master_seed, gi as u64);
        let runs: Vec<(F, F, bool)> = (0..r)
            .into_par_iter()
            .map(|rep| {
                let seed = mix64(cell_seed, rep as u64);
                let x = generate_covariates::<F>(dist, n, 1, mix64(seed, 0))?;
                let z = crate::data::standardize(&x)?;
                let obj = crate::balance::BalanceObjective::l1();
                let init =
                    crate::allocation::random_balanced_allocation(n, mix64(seed, 1))?;
                let (design, trace) = greedy_pair_switch(&z, &init, &obj, seed)?;

                let mut rng = crate::seeding::rng(mix64(seed, 2));
                let y: Vec<F> = (0..2 * n)
                    .map(|i| {
                        let effect = if design.allocation.is_treated(i) {
                            beta
                        } else {
                            F::zero()
                        };
                        effect
                            + f.apply(x.get(i, 0))
                            + noise_sd * F::sample_standard_normal(&mut rng)
                    })
                    .collect();

                let estimate = diff_in_means(&y, &design.allocation)?;
                let initial_estimate = diff_in_means(&y, &init)?;
                let y_max = y.iter().cloned().fold(F::neg_infinity(), F::max);
                let y_min = y.iter().cloned().fold(F::infinity(), F::min);
                let n_f = F::from_usize(n).unwrap();
                let bound = F::of(2.0) / n_f
                    * F::from_usize(trace.steps.len()).unwrap()
                    * (y_max - y_min);
                let drift = (initial_estimate - estimate).abs();
                let holds = drift <= bound + F::of(1e-9) * (F::one() + y_max.abs() + y_min.abs());
                Ok(((estimate - beta).abs(), bound, holds))
            })
            .collect::<Result<_>>()?;
        let rf = F::from_usize(r).unwrap();
        rows.push(ProbeRow {
            n,
            mean_abs_error: runs.iter().map(|(e, _, _)| *e).sum::<F>() / rf,
            mean_bound: runs.iter().map(|(_, b, _)| *b).sum::<F>() / rf,
            bound_violations: runs.iter().filter(|(_, _, ok)| !ok).count(),
        });
    }
    Ok(rows)
}

//! Pairwise co-assignment probabilities and the two randomness metrics.
//!
//! A design method is profiled by p_s, the probability that pair s of
//! subjects lands in the same arm, estimated over replicate runs. Under
//! complete randomization every p_s equals s_n = (n-1)/(2n-1). The entropy
//! metric is 1 at complete randomness and 0 for a deterministic method; the
//! deviation metric is the reverse.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::Allocation;
use crate::designs::Designer;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seeding::mix64;
use crate::simharness::{generate_covariates, CovariateDist};

/// Whether each replicate redraws covariates or all replicates share one
/// draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbMode {
    RedrawCovariates,
    FixedCovariates,
}

/// Estimated co-assignment probabilities over all C(2n, 2) subject pairs,
/// stored as integer counts so each estimate has denominator exactly `r`.
/// The flat triangular store is C(2n, 2) entries, which keeps metric runs
/// practical up to n in the low thousands.
#[derive(Clone, Debug)]
pub struct PairProbEstimate {
    n: usize,
    replicates: usize,
    mode: ProbMode,
    counts: Vec<u32>,
}

fn pair_count(total: usize) -> usize {
    total * (total - 1) / 2
}

fn pair_index(i: usize, j: usize, total: usize) -> usize {
    debug_assert!(i < j);
    i * total - i * (i + 1) / 2 + (j - i - 1)
}

impl PairProbEstimate {
    /// Tallies co-assignment counts from replicate allocations.
    pub fn from_allocations(allocations: &[Allocation], mode: ProbMode) -> Result<Self> {
        let first = allocations
            .first()
            .ok_or_else(|| Error::Domain("need at least 2 replicates".into()))?;
        if allocations.len() < 2 {
            return Err(Error::Domain("need at least 2 replicates".into()));
        }
        let total = first.total();
        let mut counts = vec![0u32; pair_count(total)];
        for a in allocations {
            if a.total() != total {
                return Err(Error::Shape("allocations of mixed sizes".into()));
            }
            let signs = a.signs();
            let mut idx = 0usize;
            for i in 0..total {
                let si = signs[i];
                for &sj in &signs[i + 1..] {
                    if si == sj {
                        counts[idx] += 1;
                    }
                    idx += 1;
                }
            }
        }
        Ok(Self {
            n: total / 2,
            replicates: allocations.len(),
            mode,
            counts,
        })
    }

    pub fn arm_size(&self) -> usize {
        self.n
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    pub fn mode(&self) -> ProbMode {
        self.mode
    }

    pub fn pair_count(&self) -> usize {
        self.counts.len()
    }

    /// Estimated probability for the pair (i, j).
    pub fn prob<F: Real>(&self, i: usize, j: usize) -> F {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        let c = self.counts[pair_index(i, j, 2 * self.n)];
        F::from_u32(c).unwrap() / F::from_usize(self.replicates).unwrap()
    }

    /// All estimated probabilities in pair-rank order.
    pub fn probs<F: Real>(&self) -> impl Iterator<Item = F> + '_ {
        let r = F::from_usize(self.replicates).unwrap();
        self.counts.iter().map(move |&c| F::from_u32(c).unwrap() / r)
    }

    /// The complete-randomization reference s_n = (n-1)/(2n-1).
    pub fn reference<F: Real>(&self) -> F {
        F::from_usize(self.n - 1).unwrap() / F::from_usize(2 * self.n - 1).unwrap()
    }

    /// The same estimate with subjects relabeled by `perm` (subject i of the
    /// relabeled estimate is subject perm[i] of the original).
    pub fn relabeled(&self, perm: &[usize]) -> Self {
        let total = 2 * self.n;
        assert_eq!(perm.len(), total);
        let mut counts = vec![0u32; self.counts.len()];
        for i in 0..total {
            for j in (i + 1)..total {
                let (a, b) = (perm[i].min(perm[j]), perm[i].max(perm[j]));
                counts[pair_index(i, j, total)] = self.counts[pair_index(a, b, total)];
            }
        }
        Self {
            counts,
            ..self.clone()
        }
    }
}

/// Runs the designer `r` times and tallies pairwise co-assignments. In
/// redraw mode every replicate draws fresh covariates; in fixed mode one
/// draw is shared.
pub fn estimate_pair_probabilities<F: Real, D: Designer<F>>(
    designer: &D,
    n: usize,
    p: usize,
    dist: CovariateDist,
    r: usize,
    master_seed: u64,
    mode: ProbMode,
) -> Result<PairProbEstimate> {
    if r < 2 {
        return Err(Error::Domain("need at least 2 replicates".into()));
    }
    let cov_master = mix64(master_seed, 0xC0);
    let design_master = mix64(master_seed, 0xDE);
    let fixed = match mode {
        ProbMode::FixedCovariates => Some(generate_covariates::<F>(dist, n, p, mix64(cov_master, 0))?),
        ProbMode::RedrawCovariates => None,
    };
    let allocations: Vec<Allocation> = (0..r)
        .into_par_iter()
        .map(|rep| {
            let seed = mix64(design_master, rep as u64);
            let alloc = match &fixed {
                Some(x) => designer.assign(x, seed),
                None => {
                    let x = generate_covariates::<F>(dist, n, p, mix64(cov_master, rep as u64))?;
                    designer.assign(&x, seed)
                }
            };
            alloc.map_err(|e| e.in_replicate(rep))
        })
        .collect::<Result<_>>()?;
    PairProbEstimate::from_allocations(&allocations, mode)
}

/// x ln x with the 0 ln 0 = 0 convention.
fn xlnx<F: Real>(x: F) -> F {
    if x > F::zero() {
        x * x.ln()
    } else {
        F::zero()
    }
}

fn pair_entropy_term<F: Real>(p: F) -> F {
    xlnx(p) + xlnx(F::one() - p)
}

/// Normalized pairwise entropy: 1 under complete randomness, 0 for a
/// deterministic method.
pub fn entropy_metric<F: Real>(est: &PairProbEstimate) -> F {
    let s = est.reference::<F>();
    let denom = pair_entropy_term(s);
    let m = F::from_usize(est.pair_count()).unwrap();
    let total: F = est.probs::<F>().map(pair_entropy_term).sum();
    total / (m * denom)
}

/// Scaled root-mean-square deviation of the pair probabilities from s_n:
/// 0 under complete randomness, 1 for a deterministic method. With
/// `bias_correct`, each squared term subtracts the Monte Carlo estimation
/// variance `p(1-p)/(r-1)`, floored at zero.
pub fn deviation_metric<F: Real>(est: &PairProbEstimate, bias_correct: bool) -> Result<F> {
    let n = est.arm_size();
    if n < 2 {
        return Err(Error::Domain(
            "deviation metric needs n >= 2 (denominator n - 1)".into(),
        ));
    }
    let s = est.reference::<F>();
    let r_minus_1 = F::from_usize(est.replicates() - 1).unwrap();
    let mut total = F::zero();
    for p in est.probs::<F>() {
        let dev = p - s;
        let mut term = dev * dev;
        if bias_correct {
            term = (term - p * (F::one() - p) / r_minus_1).max(F::zero());
        }
        total += term;
    }
    let nf = F::from_usize(n).unwrap();
    let scale = F::from_usize(2 * n - 1).unwrap() / F::from_usize(n - 1).unwrap();
    Ok((scale * total).sqrt() / nf)
}

/// Both randomness metrics for one estimate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RandomnessReport<F> {
    pub entropy: F,
    pub deviation: F,
    pub bias_corrected_deviation: F,
    pub reference: F,
}

pub fn randomness_report<F: Real>(est: &PairProbEstimate) -> Result<RandomnessReport<F>> {
    Ok(RandomnessReport {
        entropy: entropy_metric(est),
        deviation: deviation_metric(est, false)?,
        bias_corrected_deviation: deviation_metric(est, true)?,
        reference: est.reference(),
    })
}

/// Normalized entropy of a bare probability vector against a reference
/// probability (scalar counterpart of [`entropy_metric`]).
pub fn entropy_vs_reference<F: Real>(probs: &[F], reference: F) -> F {
    let m = F::from_usize(probs.len()).unwrap();
    let total: F = probs.iter().map(|&p| pair_entropy_term(p)).sum();
    total / (m * pair_entropy_term(reference))
}

/// Twice the sample standard deviation of a probability vector (scales a
/// {0, 1}-valued vector's spread to 1).
pub fn twice_sample_sd<F: Real>(probs: &[F]) -> F {
    let m = probs.len();
    let mf = F::from_usize(m).unwrap();
    let mean = probs.iter().copied().sum::<F>() / mf;
    let ss: F = probs
        .iter()
        .map(|&p| {
            let d = p - mean;
            d * d
        })
        .sum();
    F::of(2.0) * (ss / F::from_usize(m - 1).unwrap()).sqrt()
}

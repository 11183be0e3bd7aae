//! Balance objectives over (standardized covariates, allocation).
//!
//! With columns standardized to sum 0 and sum of squares `2n - 1`, the L1
//! balance is `(2/n) * sum_j |t_j|` where `t_j` is the treated sum of column
//! `j`; for one covariate this equals the absolute standardized
//! difference in arm means. The Mahalanobis form is `(n/2) d' S^-1 d` in the
//! arm-mean difference `d`, scaled so its null mean is `p`.

use serde::{Deserialize, Serialize};

use crate::allocation::Allocation;
use crate::data::StandardizedCovariates;
use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Real;

/// Condition-number guard for the pooled covariance.
const MAX_CONDITION: f64 = 1e12;

/// Which balance objective to build; carried in configs and CLI flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ObjectiveKind<F> {
    L1,
    WeightedL1 { weights: Vec<F> },
    Mahalanobis,
}

impl<F: Real> ObjectiveKind<F> {
    pub fn build(&self, z: &StandardizedCovariates<F>) -> Result<BalanceObjective<F>> {
        match self {
            ObjectiveKind::L1 => Ok(BalanceObjective::L1),
            ObjectiveKind::WeightedL1 { weights } => BalanceObjective::weighted(weights.clone(), z.cols()),
            ObjectiveKind::Mahalanobis => BalanceObjective::mahalanobis(z),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ObjectiveKind::L1 => "l1",
            ObjectiveKind::WeightedL1 { .. } => "weighted-l1",
            ObjectiveKind::Mahalanobis => "mahalanobis",
        }
    }
}

/// A balance objective ready to evaluate. The Mahalanobis variant caches the
/// inverse pooled covariance, computed once per dataset; swap sweeps then
/// only touch per-column treated sums.
#[derive(Clone, Debug)]
pub enum BalanceObjective<F> {
    L1,
    WeightedL1 { weights: Vec<F> },
    Mahalanobis { precision: Vec<F>, dim: usize },
}

impl<F: Real> BalanceObjective<F> {
    pub fn l1() -> Self {
        BalanceObjective::L1
    }

    pub fn weighted(weights: Vec<F>, cols: usize) -> Result<Self> {
        if weights.len() != cols {
            return Err(Error::Shape(format!(
                "{} weights for {cols} covariates",
                weights.len()
            )));
        }
        if let Some(bad) = weights.iter().position(|w| !(*w > F::zero())) {
            return Err(Error::Domain(format!(
                "weight {} is not strictly positive",
                bad + 1
            )));
        }
        Ok(BalanceObjective::WeightedL1 { weights })
    }

    /// Builds the Mahalanobis objective, caching `S^-1` where `S` is the
    /// sample covariance of all `2n` standardized rows (divisor `2n - 1`).
    pub fn mahalanobis(z: &StandardizedCovariates<F>) -> Result<Self> {
        let p = z.cols();
        let rows = z.rows();
        let denom = F::from_usize(rows - 1).unwrap();
        // Columns have mean zero, so S_jk = (1/(2n-1)) sum_i z_ij z_ik.
        let mut s = vec![F::zero(); p * p];
        for j in 0..p {
            let cj = z.column(j);
            for k in j..p {
                let ck = z.column(k);
                let dot = cj.iter().zip(ck).map(|(&a, &b)| a * b).sum::<F>() / denom;
                s[j * p + k] = dot;
                s[k * p + j] = dot;
            }
        }
        let mut precision = linalg::invert(&s, p)
            .ok_or_else(|| Error::SingularCovariance("pooled covariance not invertible".into()))?;
        let cond = (linalg::one_norm(&s, p) * linalg::one_norm(&precision, p)).as_f64();
        if !cond.is_finite() || cond > MAX_CONDITION {
            return Err(Error::SingularCovariance(format!(
                "condition number estimate {cond:.3e} exceeds {MAX_CONDITION:.0e}"
            )));
        }
        // Symmetrize: Gauss-Jordan output of a symmetric matrix is symmetric
        // only up to rounding.
        for j in 0..p {
            for k in (j + 1)..p {
                let avg = (precision[j * p + k] + precision[k * p + j]) / F::of(2.0);
                precision[j * p + k] = avg;
                precision[k * p + j] = avg;
            }
        }
        Ok(BalanceObjective::Mahalanobis { precision, dim: p })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            BalanceObjective::L1 => "l1",
            BalanceObjective::WeightedL1 { .. } => "weighted-l1",
            BalanceObjective::Mahalanobis { .. } => "mahalanobis",
        }
    }

    pub fn precision(&self) -> Option<&[F]> {
        match self {
            BalanceObjective::Mahalanobis { precision, .. } => Some(precision),
            _ => None,
        }
    }

    fn check_dims(&self, z: &StandardizedCovariates<F>, a: &Allocation) -> Result<()> {
        if a.total() != z.rows() {
            return Err(Error::Shape(format!(
                "allocation covers {} subjects, covariates have {}",
                a.total(),
                z.rows()
            )));
        }
        let expected = match self {
            BalanceObjective::WeightedL1 { weights } => weights.len(),
            BalanceObjective::Mahalanobis { dim, .. } => *dim,
            BalanceObjective::L1 => z.cols(),
        };
        if expected != z.cols() {
            return Err(Error::Shape(format!(
                "objective built for {expected} columns, covariates have {}",
                z.cols()
            )));
        }
        Ok(())
    }

    /// Balance of an allocation, evaluated from scratch.
    pub fn evaluate(&self, z: &StandardizedCovariates<F>, a: &Allocation) -> Result<F> {
        self.check_dims(z, a)?;
        let t = treated_sums(z, a);
        Ok(self.eval_from_treated_sums(&t, a.arm_size()))
    }

    /// Balance as a function of the per-column treated sums. This is the
    /// O(p) (L1) / O(p^2) (Mahalanobis) kernel behind swap sweeps and the
    /// exhaustive enumerator.
    pub fn eval_from_treated_sums(&self, t: &[F], n: usize) -> F {
        let scale = F::of(2.0) / F::from_usize(n).unwrap();
        match self {
            BalanceObjective::L1 => scale * t.iter().map(|v| v.abs()).sum::<F>(),
            BalanceObjective::WeightedL1 { weights } => {
                scale * t.iter().zip(weights).map(|(v, w)| *w * v.abs()).sum::<F>()
            }
            BalanceObjective::Mahalanobis { precision, dim } => {
                // Q = (n/2) d' P d with d = (2/n) t, i.e. (2/n) t' P t.
                let mut quad = F::zero();
                for j in 0..*dim {
                    let mut row = F::zero();
                    for k in 0..*dim {
                        row += precision[j * dim + k] * t[k];
                    }
                    quad += t[j] * row;
                }
                scale * quad
            }
        }
    }
}

/// Per-column sums of the treated subjects' standardized values.
pub fn treated_sums<F: Real>(z: &StandardizedCovariates<F>, a: &Allocation) -> Vec<F> {
    let mut t = vec![F::zero(); z.cols()];
    for (j, tj) in t.iter_mut().enumerate() {
        let col = z.column(j);
        *tj = col
            .iter()
            .zip(a.signs())
            .filter(|(_, &s)| s == 1)
            .map(|(&v, _)| v)
            .sum();
    }
    t
}

/// `(2/n) sum_j |sum_{i treated} z_ij|`; for p = 1 this is the absolute
/// standardized difference in arm means.
pub fn l1_balance<F: Real>(z: &StandardizedCovariates<F>, a: &Allocation) -> Result<F> {
    BalanceObjective::l1().evaluate(z, a)
}

/// Weighted variant: `(2/n) sum_j w_j |t_j|` with strictly positive weights.
pub fn weighted_l1_balance<F: Real>(
    z: &StandardizedCovariates<F>,
    a: &Allocation,
    weights: &[F],
) -> Result<F> {
    BalanceObjective::weighted(weights.to_vec(), z.cols())?.evaluate(z, a)
}

/// Mahalanobis balance `(n/2) d' S^-1 d`; approximately chi-square with `p`
/// degrees of freedom (mean `p`) under complete randomization.
pub fn mahalanobis_balance<F: Real>(z: &StandardizedCovariates<F>, a: &Allocation) -> Result<F> {
    BalanceObjective::mahalanobis(z)?.evaluate(z, a)
}

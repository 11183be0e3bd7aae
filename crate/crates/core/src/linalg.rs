//! Small dense linear algebra: just enough for a p-by-p precision matrix and
//! a four-column regression. Matrices are row-major `Vec<F>`.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Inverts a square matrix by Gauss-Jordan elimination with partial
/// pivoting. Returns `None` when a pivot vanishes.
pub fn invert<F: Real>(a: &[F], dim: usize) -> Option<Vec<F>> {
    assert_eq!(a.len(), dim * dim);
    let mut work = a.to_vec();
    let mut inv = vec![F::zero(); dim * dim];
    for i in 0..dim {
        inv[i * dim + i] = F::one();
    }
    for col in 0..dim {
        let pivot_row = (col..dim)
            .max_by(|&r1, &r2| {
                work[r1 * dim + col]
                    .abs()
                    .partial_cmp(&work[r2 * dim + col].abs())
                    .unwrap()
            })
            .unwrap();
        let pivot = work[pivot_row * dim + col];
        if pivot == F::zero() || !pivot.is_finite() {
            return None;
        }
        if pivot_row != col {
            for j in 0..dim {
                work.swap(col * dim + j, pivot_row * dim + j);
                inv.swap(col * dim + j, pivot_row * dim + j);
            }
        }
        let inv_pivot = F::one() / pivot;
        for j in 0..dim {
            work[col * dim + j] *= inv_pivot;
            inv[col * dim + j] *= inv_pivot;
        }
        for row in 0..dim {
            if row == col {
                continue;
            }
            let factor = work[row * dim + col];
            if factor == F::zero() {
                continue;
            }
            for j in 0..dim {
                let w = work[col * dim + j];
                let v = inv[col * dim + j];
                work[row * dim + j] -= factor * w;
                inv[row * dim + j] -= factor * v;
            }
        }
    }
    Some(inv)
}

/// Maximum absolute column sum.
pub fn one_norm<F: Real>(a: &[F], dim: usize) -> F {
    (0..dim)
        .map(|j| (0..dim).map(|i| a[i * dim + j].abs()).sum::<F>())
        .fold(F::zero(), F::max)
}

/// Ordinary least squares fit.
#[derive(Clone, Debug)]
pub struct OlsFit<F> {
    pub coefficients: Vec<F>,
    pub standard_errors: Vec<F>,
    pub r_squared: F,
    pub residual_variance: F,
}

/// Solves `min ||y - X b||` through the normal equations with pivoting.
/// `x` is m-by-k row-major with m = y.len().
pub fn ols<F: Real>(x: &[F], y: &[F], k: usize) -> Result<OlsFit<F>> {
    let m = y.len();
    if m * k != x.len() {
        return Err(Error::Shape(format!(
            "design matrix has {} entries, expected {m}x{k}",
            x.len()
        )));
    }
    if m <= k {
        return Err(Error::RankDeficient(format!(
            "{m} observations cannot identify {k} coefficients"
        )));
    }
    // XtX and Xty
    let mut xtx = vec![F::zero(); k * k];
    let mut xty = vec![F::zero(); k];
    for row in 0..m {
        let r = &x[row * k..(row + 1) * k];
        for i in 0..k {
            xty[i] += r[i] * y[row];
            for j in i..k {
                xtx[i * k + j] += r[i] * r[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            xtx[i * k + j] = xtx[j * k + i];
        }
    }
    let xtx_inv = invert(&xtx, k)
        .ok_or_else(|| Error::RankDeficient("normal equations are singular".into()))?;
    let mut coefficients = vec![F::zero(); k];
    for i in 0..k {
        coefficients[i] = (0..k).map(|j| xtx_inv[i * k + j] * xty[j]).sum();
    }

    let mean_y = y.iter().copied().sum::<F>() / F::from_usize(m).unwrap();
    let mut rss = F::zero();
    let mut tss = F::zero();
    for row in 0..m {
        let fitted: F = (0..k).map(|j| x[row * k + j] * coefficients[j]).sum();
        let res = y[row] - fitted;
        rss += res * res;
        let dev = y[row] - mean_y;
        tss += dev * dev;
    }
    let residual_variance = rss / F::from_usize(m - k).unwrap();
    let standard_errors = (0..k)
        .map(|i| (residual_variance * xtx_inv[i * k + i]).max(F::zero()).sqrt())
        .collect();
    let r_squared = if tss > F::zero() {
        F::one() - rss / tss
    } else {
        F::zero()
    };
    Ok(OlsFit {
        coefficients,
        standard_errors,
        r_squared,
        residual_variance,
    })
}

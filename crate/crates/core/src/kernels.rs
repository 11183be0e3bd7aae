//! Collision-density kernels: P(c), P+(c), P-(c) for the three reference
//! distributions, computed by adaptive Simpson quadrature and checked
//! against their closed forms.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seeding::mix64;

/// A conditional-collision kernel is undefined once P(c) falls below this.
const MIN_DENSITY: f64 = 1e-12;

/// Reference distributions with evaluable density and distribution function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dist {
    Uniform01,
    Exponential1,
    StdNormal,
}

impl Dist {
    pub fn pdf<F: Real>(&self, x: F) -> F {
        match self {
            Dist::Uniform01 => {
                if x >= F::zero() && x <= F::one() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Dist::Exponential1 => {
                if x >= F::zero() {
                    (-x).exp()
                } else {
                    F::zero()
                }
            }
            Dist::StdNormal => {
                let half = F::of(0.5);
                (-(x * x) * half).exp() / F::of((2.0 * std::f64::consts::PI).sqrt())
            }
        }
    }

    pub fn cdf<F: Real>(&self, x: F) -> F {
        let xf = x.as_f64();
        let v = match self {
            Dist::Uniform01 => xf.clamp(0.0, 1.0),
            Dist::Exponential1 => {
                if xf <= 0.0 {
                    0.0
                } else {
                    1.0 - (-xf).exp()
                }
            }
            Dist::StdNormal => 0.5 * (1.0 + statrs::function::erf::erf(xf / 2f64.sqrt())),
        };
        F::of(v)
    }

    pub fn mean<F: Real>(&self) -> F {
        match self {
            Dist::Uniform01 => F::of(0.5),
            Dist::Exponential1 => F::one(),
            Dist::StdNormal => F::zero(),
        }
    }

    pub fn sample<F: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> F {
        match self {
            Dist::Uniform01 => F::sample_unit_uniform(rng),
            Dist::Exponential1 => F::sample_standard_exponential(rng),
            Dist::StdNormal => F::sample_standard_normal(rng),
        }
    }

    /// Interval outside which the density is either exactly zero or small
    /// enough that the truncated mass is below 1e-12. The uniform support is
    /// exact; the exponential needs a far wider window than a
    /// mean-plus-ten-sigma rule to integrate to 1 within 1e-9.
    fn quad_support<F: Real>(&self) -> (F, F) {
        match self {
            Dist::Uniform01 => (F::zero(), F::one()),
            Dist::Exponential1 => (F::zero(), F::of(34.0)),
            Dist::StdNormal => (F::of(-10.0), F::of(10.0)),
        }
    }
}

/// Adaptive Simpson quadrature with per-panel absolute tolerance.
pub fn adaptive_simpson<F: Real>(f: &impl Fn(F) -> F, a: F, b: F, tol: F) -> F {
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Real>(
        f: &impl Fn(F) -> F,
        a: F,
        m: F,
        b: F,
        fa: F,
        fm: F,
        fb: F,
        whole: F,
        tol: F,
        depth: usize,
    ) -> F {
        let half = F::of(0.5);
        let sixth = F::of(6.0);
        let lm = (a + m) * half;
        let rm = (m + b) * half;
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / sixth * (fa + F::of(4.0) * flm + fm);
        let right = (b - m) / sixth * (fm + F::of(4.0) * frm + fb);
        let split = left + right;
        let err = split - whole;
        if depth == 0 || err.abs() <= F::of(15.0) * tol {
            split + err / F::of(15.0)
        } else {
            let tol = tol * half;
            recurse(f, a, lm, m, fa, flm, fm, left, tol, depth - 1)
                + recurse(f, m, rm, b, fm, frm, fb, right, tol, depth - 1)
        }
    }

    if !(b > a) {
        return F::zero();
    }
    let m = (a + b) * F::of(0.5);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / F::of(6.0) * (fa + F::of(4.0) * fm + fb);
    recurse(f, a, m, b, fa, fm, fb, whole, tol, 48)
}

const PANEL_TOL: f64 = 1e-10;

/// Integrates `pdf(x + shift) * weight(x) * pdf(x)` over the intersection of
/// the shifted and unshifted supports.
fn collision_integral<F: Real>(dist: Dist, shift: F, squared_shifted: bool) -> F {
    let (lo, hi) = dist.quad_support::<F>();
    let a = lo.max(lo - shift);
    let b = hi.min(hi - shift);
    if !(b > a) {
        return F::zero();
    }
    let f = |x: F| {
        let s = dist.pdf(x + shift);
        let s = if squared_shifted { s * s } else { s };
        s * dist.pdf(x)
    };
    adaptive_simpson(&f, a, b, F::of(PANEL_TOL))
}

/// The collision density `P(c) = integral of f(x + c) f(x) dx` for c >= 0.
pub fn collision_density<F: Real>(dist: Dist, c: F) -> Result<F> {
    if c < F::zero() {
        return Err(Error::Domain(
            "collision density is symmetric; pass |c| >= 0".into(),
        ));
    }
    Ok(collision_integral(dist, c, false))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

/// The conditional collision kernel `P+/-(c) = integral of f^2(x +/- c) f(x)
/// dx / P(c)`.
pub fn conditional_collision<F: Real>(dist: Dist, c: F, side: Side) -> Result<F> {
    if c < F::zero() {
        return Err(Error::Domain("conditional kernel needs c >= 0".into()));
    }
    let p = collision_density(dist, c)?;
    if p.as_f64() < MIN_DENSITY {
        return Err(Error::Domain(format!(
            "P(c) = {p:.3e} is too small to condition on"
        )));
    }
    let shift = match side {
        Side::Plus => c,
        Side::Minus => -c,
    };
    Ok(collision_integral(dist, shift, true) / p)
}

/// Closed form for P(c).
pub fn analytic_collision<F: Real>(dist: Dist, c: F) -> F {
    match dist {
        Dist::Uniform01 => (F::one() - c).max(F::zero()),
        Dist::Exponential1 => (-c).exp() * F::of(0.5),
        Dist::StdNormal => {
            let quarter = F::of(0.25);
            (-(c * c) * quarter).exp() / (F::of(2.0) * F::of(std::f64::consts::PI.sqrt()))
        }
    }
}

/// Closed form for P+(c) / P-(c); `None` where P(c) = 0 leaves the kernel
/// undefined (uniform with c >= 1).
pub fn analytic_conditional<F: Real>(dist: Dist, c: F, side: Side) -> Option<F> {
    match dist {
        Dist::Uniform01 => {
            if c < F::one() {
                Some(F::one())
            } else {
                None
            }
        }
        Dist::Exponential1 => Some(match side {
            Side::Plus => F::of(2.0 / 3.0) * (-c).exp(),
            Side::Minus => F::of(2.0 / 3.0),
        }),
        Dist::StdNormal => {
            let twelfth = F::of(1.0 / 12.0);
            Some((-(c * c) * twelfth).exp() / F::of((3.0 * std::f64::consts::PI).sqrt()))
        }
    }
}

/// Monte Carlo frequency, over `r` draws of 2n samples, that some
/// cross-group pair lands within `c +/- d/n^2` of each other in absolute
/// difference.
pub fn empirical_close_pair_rate<F: Real>(
    dist: Dist,
    n: usize,
    c: F,
    d: F,
    r: usize,
    seed: u64,
) -> Result<F> {
    if n < 2 {
        return Err(Error::Domain("need n >= 2".into()));
    }
    if c < F::zero() || d < F::zero() {
        return Err(Error::Domain("need c >= 0 and d >= 0".into()));
    }
    let eps = d / F::from_usize(n * n).unwrap();
    let hits: usize = (0..r)
        .into_par_iter()
        .map(|rep| {
            let mut rng = crate::seeding::rng(mix64(seed, rep as u64));
            let treated: Vec<F> = (0..n).map(|_| dist.sample(&mut rng)).collect();
            let control: Vec<F> = (0..n).map(|_| dist.sample(&mut rng)).collect();
            let hit = treated.iter().any(|&xt| {
                control.iter().any(|&xc| {
                    let gap = (xt - xc).abs();
                    gap >= c - eps && gap <= c + eps
                })
            });
            usize::from(hit)
        })
        .sum();
    Ok(F::from_usize(hits).unwrap() / F::from_usize(r).unwrap())
}

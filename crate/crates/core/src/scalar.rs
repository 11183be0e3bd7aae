//! Scalar abstraction: every numeric routine in this crate is generic over
//! [`Real`], which is implemented for `f32` and `f64`.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Open01, StandardNormal};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar usable throughout the crate: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum<Self>
    + fmt::Display
    + fmt::Debug
    + fmt::LowerExp
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant, panicking only on values a float cannot
    /// represent at all (never happens for the literals used here).
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("constant not representable")
    }

    /// Lossy view as `f64`, used at reporting boundaries.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }

    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
    fn sample_standard_exponential<R: Rng + ?Sized>(rng: &mut R) -> Self;
    /// Uniform draw on the open interval (0, 1).
    fn sample_unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            fn sample_standard_exponential<R: Rng + ?Sized>(rng: &mut R) -> Self {
                Exp1.sample(rng)
            }

            fn sample_unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
                Open01.sample(rng)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

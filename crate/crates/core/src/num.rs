//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

/// Floating point scalar the channel, analysis and simulator code is written against.
///
/// Implemented for `f32` and `f64`. The special functions that `num-traits`
/// does not cover (error function, log-gamma) and the random variates the
/// simulator needs are routed through this trait so that all generic code
/// stays precision-agnostic.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn erf(self) -> Self;
    fn erfc(self) -> Self;
    /// Natural log of the gamma function for positive arguments.
    fn ln_gamma(self) -> Self;
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
    /// Exponential variate with unit rate.
    fn standard_exp<R: Rng + ?Sized>(rng: &mut R) -> Self;
    /// Uniform variate on the half-open interval (0, 1].
    fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Lossy conversion from `f64`; every literal in the generic code goes through here.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Round half away from zero (the `⌊·⌉` convention used for gains and emissions).
    #[inline]
    fn round_half_away(self) -> Self {
        // `Float::round` already rounds half-way cases away from zero.
        self.round()
    }
}

impl Real for f64 {
    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }
    #[inline]
    fn erfc(self) -> Self {
        libm::erfc(self)
    }
    #[inline]
    fn ln_gamma(self) -> Self {
        libm::lgamma(self)
    }
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
    #[inline]
    fn standard_exp<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Exp1.sample(rng)
    }
    #[inline]
    fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
        1.0 - rng.random::<f64>()
    }
}

impl Real for f32 {
    #[inline]
    fn erf(self) -> Self {
        libm::erff(self)
    }
    #[inline]
    fn erfc(self) -> Self {
        libm::erfcf(self)
    }
    #[inline]
    fn ln_gamma(self) -> Self {
        libm::lgammaf(self)
    }
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
    #[inline]
    fn standard_exp<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Exp1.sample(rng)
    }
    #[inline]
    fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
        1.0 - rng.random::<f32>()
    }
}

/// Neumaier-compensated running sum. Used wherever probabilities are averaged
/// so that results do not depend on accumulation order beyond the fixed index order.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum<T> {
    sum: T,
    comp: T,
}

impl<T: Real> CompensatedSum<T> {
    pub fn new() -> Self {
        Self {
            sum: T::zero(),
            comp: T::zero(),
        }
    }

    pub fn add(&mut self, x: T) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp = self.comp + ((self.sum - t) + x);
        } else {
            self.comp = self.comp + ((x - t) + self.sum);
        }
        self.sum = t;
    }

    pub fn value(&self) -> T {
        self.sum + self.comp
    }
}

impl<T: Real> FromIterator<T> for CompensatedSum<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut acc = Self::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

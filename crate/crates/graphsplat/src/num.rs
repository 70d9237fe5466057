//! Scalar abstraction for the numeric core.
//!
//! Everything geometric in this crate is generic over [`Real`], which is any
//! floating-point type nalgebra can treat as a real field. The crate root
//! exports `f64`-backed aliases for the common instantiation; `f32` works
//! wherever memory or disk formats call for it.

use rand::distributions::uniform::SampleUniform;
use rand::Rng;

/// Floating-point scalar usable throughout the pipeline.
pub trait Real:
    nalgebra::RealField + Copy + Default + num_traits::FromPrimitive + num_traits::ToPrimitive + SampleUniform
{
    /// Lifts an `f64` constant into this scalar type.
    fn of(v: f64) -> Self;

    /// Converts to `f64`, e.g. for report formatting.
    fn as_f64(self) -> f64;

    /// Draws a standard normal sample.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draws a uniform sample from `[0, 1)`.
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.sample(rand_distr::StandardNormal)
            }

            #[inline]
            fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.gen::<$t>()
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

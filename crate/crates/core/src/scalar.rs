use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Beta, Distribution};

/// Floating-point scalar the numeric core is generic over: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// One Beta(alpha, beta) variate. Callers guarantee both shapes are
    /// finite and positive.
    fn sample_beta<R: Rng + ?Sized>(alpha: Self, beta: Self, rng: &mut R) -> Self;

    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable as float")
    }

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable as float")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn sample_beta<R: Rng + ?Sized>(alpha: Self, beta: Self, rng: &mut R) -> Self {
                Beta::new(alpha, beta)
                    .expect("validated beta shape parameters")
                    .sample(rng)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

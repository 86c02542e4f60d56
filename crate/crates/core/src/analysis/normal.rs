use statrs::function::erf::erfc;

use crate::{Error, Result, Scalar};

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Two-sided z-test: `z = estimate / se`, `p = 2 (1 - Phi(|z|))`.
pub fn z_test<T: Scalar>(estimate: T, standard_error: T) -> Result<(T, T)> {
    if standard_error <= T::zero() || !standard_error.is_finite() {
        return Err(Error::invalid(format!(
            "standard error must be positive, got {standard_error}"
        )));
    }
    let z = estimate / standard_error;
    // erfc(|z|/sqrt 2) == 2 (1 - Phi(|z|)) without the cancellation.
    let p = erfc(z.as_f64().abs() / std::f64::consts::SQRT_2);
    Ok((z, T::lit(p.clamp(0.0, 1.0))))
}

//! Beta-Bernoulli posteriors.
//!
//! Each arm keeps a `Beta(alpha, beta)` belief over its success probability.
//! Observing reward `r` on the chosen arm adds `(r, 1 - r)` to its parameters;
//! all other arms are left alone.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// Shape parameters of a Beta distribution. Both are strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams<T> {
    alpha: T,
    beta: T,
}

impl<T: Scalar> BetaParams<T> {
    pub fn new(alpha: T, beta: T) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && alpha > T::zero() && beta > T::zero()) {
            return Err(Error::invalid(format!(
                "beta parameters must be finite and positive, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    /// Beta(1, 1).
    pub fn uniform() -> Self {
        Self {
            alpha: T::one(),
            beta: T::one(),
        }
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    /// Conjugate update with one binary reward.
    #[must_use]
    pub fn update(self, reward: Reward) -> Self {
        if reward.is_success() {
            Self {
                alpha: self.alpha + T::one(),
                ..self
            }
        } else {
            Self {
                beta: self.beta + T::one(),
                ..self
            }
        }
    }

    /// Fold a batch of `successes` and `failures` at once. Equal to calling
    /// [`update`](Self::update) once per reward, in any order.
    #[must_use]
    pub fn batch_fold(self, successes: u64, failures: u64) -> Self {
        Self {
            alpha: self.alpha + T::from_count(successes),
            beta: self.beta + T::from_count(failures),
        }
    }

    /// `alpha / (alpha + beta)`.
    pub fn mean(&self) -> T {
        self.alpha / (self.alpha + self.beta)
    }

    /// Total pseudo-count mass `alpha + beta`.
    pub fn mass(&self) -> T {
        self.alpha + self.beta
    }

    /// One draw from `Beta(alpha, beta)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        T::sample_beta(self.alpha, self.beta, rng)
    }
}

impl<T: Scalar> Default for BetaParams<T> {
    fn default() -> Self {
        Self::uniform()
    }
}

impl<T: fmt::Display> fmt::Display for BetaParams<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Beta({}, {})", self.alpha, self.beta)
    }
}

/// `K` copies of the prior `Beta(alpha0, beta0)`.
pub fn init_prior<T: Scalar>(k: usize, alpha0: T, beta0: T) -> Result<Vec<BetaParams<T>>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 arms, got {k}")));
    }
    let prior = BetaParams::new(alpha0, beta0)?;
    Ok(vec![prior; k])
}

/// Binary reward: 1 for a success (a click), 0 otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reward(bool);

impl Reward {
    pub const SUCCESS: Reward = Reward(true);
    pub const FAILURE: Reward = Reward(false);

    pub fn is_success(self) -> bool {
        self.0
    }

    pub fn as_u8(self) -> u8 {
        u8::from(self.0)
    }
}

impl From<bool> for Reward {
    fn from(b: bool) -> Self {
        Reward(b)
    }
}

impl TryFrom<u8> for Reward {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Reward::FAILURE),
            1 => Ok(Reward::SUCCESS),
            other => Err(Error::invalid(format!("reward must be 0 or 1, got {other}"))),
        }
    }
}

impl std::str::FromStr for Reward {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "0" | "false" => Ok(Reward::FAILURE),
            "1" | "true" => Ok(Reward::SUCCESS),
            other => Err(Error::invalid(format!("reward must be 0 or 1, got `{other}`"))),
        }
    }
}

impl Serialize for Reward {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Reward {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Reward::try_from(v).map_err(serde::de::Error::custom)
    }
}

/// 1-based arm index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArmId(usize);

impl ArmId {
    /// Arm `index` (1-based) out of `k` arms.
    pub fn new(index: usize, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("need at least 2 arms, got {k}")));
        }
        if index == 0 || index > k {
            return Err(Error::invalid(format!("arm index {index} outside 1..={k}")));
        }
        Ok(ArmId(index))
    }

    /// From a 0-based position. Only for positions known to be in range.
    pub(crate) fn from_zero_based(i: usize) -> Self {
        ArmId(i + 1)
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn zero_based(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for ArmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    type B = BetaParams<f64>;

    fn b(a: f64, bb: f64) -> B {
        B::new(a, bb).unwrap()
    }

    #[test]
    fn uniform_prior_for_four_arms() {
        let p = init_prior(4, 1.0, 1.0).unwrap();
        assert_eq!(p, vec![b(1.0, 1.0); 4]);
    }

    #[test]
    fn custom_prior() {
        assert_eq!(init_prior(2, 2.0, 3.0).unwrap(), vec![b(2.0, 3.0); 2]);
    }

    #[test]
    fn prior_rejects_single_arm_and_bad_params() {
        assert!(init_prior(1, 1.0, 1.0).is_err());
        assert!(init_prior(3, 0.0, 1.0).is_err());
        assert!(init_prior(3, 1.0, -2.0).is_err());
        assert!(init_prior(3, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn update_examples() {
        assert_eq!(b(1.0, 1.0).update(Reward::SUCCESS), b(2.0, 1.0));
        assert_eq!(b(3.0, 2.0).update(Reward::FAILURE), b(3.0, 3.0));
        let rewards = [1, 1, 1, 1, 1, 0, 0, 0];
        let folded = rewards
            .iter()
            .fold(b(1.0, 1.0), |p, &r| p.update(Reward::try_from(r).unwrap()));
        assert_eq!(folded, b(6.0, 4.0));
    }

    #[test]
    fn batch_fold_examples() {
        assert_eq!(b(1.0, 1.0).batch_fold(5, 3), b(6.0, 4.0));
        assert_eq!(b(2.0, 7.0).batch_fold(0, 0), b(2.0, 7.0));
        assert_eq!(b(1.0, 1.0).batch_fold(20, 80), b(21.0, 81.0));
    }

    #[test]
    fn mean_examples() {
        assert_eq!(b(1.0, 1.0).mean(), 0.5);
        assert!((b(2.0, 1.0).mean() - 2.0 / 3.0).abs() < 1e-15);
        assert!((b(19.0, 81.0).mean() - 0.19).abs() < 1e-15);
    }

    #[test]
    fn sample_support_and_determinism() {
        let mut r = rng::stream(3);
        for _ in 0..1000 {
            let x = b(1.0, 1.0).sample(&mut r);
            assert!(x > 0.0 && x < 1.0);
        }
        let (mut r1, mut r2) = (rng::stream(11), rng::stream(11));
        assert_eq!(b(2.0, 3.0).sample(&mut r1), b(2.0, 3.0).sample(&mut r2));
    }

    #[test]
    fn concentrated_posterior_samples_near_one() {
        // P(X < 0.99) = 0.99^(10^6) ~ e^-10050 for Beta(10^6, 1).
        let mut r = rng::stream(5);
        for _ in 0..1000 {
            assert!(b(1e6, 1.0).sample(&mut r) > 0.99);
        }
    }

    #[test]
    fn single_precision_posterior() {
        let p = BetaParams::<f32>::uniform().batch_fold(3, 0);
        assert_eq!(p.mean(), 0.8);
        let x = p.sample(&mut rng::stream(1));
        assert!(x > 0.0 && x < 1.0);
    }

    #[test]
    fn reward_parsing() {
        assert_eq!("1".parse::<Reward>().unwrap(), Reward::SUCCESS);
        assert_eq!(" 0 ".parse::<Reward>().unwrap(), Reward::FAILURE);
        assert!("2".parse::<Reward>().is_err());
        assert!(Reward::try_from(3u8).is_err());
    }

    #[test]
    fn arm_id_bounds() {
        assert!(ArmId::new(0, 4).is_err());
        assert!(ArmId::new(5, 4).is_err());
        assert!(ArmId::new(1, 1).is_err());
        assert_eq!(ArmId::new(4, 4).unwrap().zero_based(), 3);
    }
}

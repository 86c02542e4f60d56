//! Arm selection: uniform random, Thompson Sampling, and the epsilon hybrid
//! that routes a fraction of participants to uniform assignment.
//!
//! Batches are assigned against a frozen posterior: every participant in a
//! batch gets an independent selection from the same batch-start beliefs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::posterior::{ArmId, BetaParams};
use crate::{Error, Result, Scalar};

/// Default Monte-Carlo draws for [`prob_optimal`].
pub const DEFAULT_DRAWS: u64 = 1_000_000;

/// Draws per deterministic sub-stream in [`prob_optimal`].
const PA_CHUNK: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AllocationPolicy {
    Uniform,
    ThompsonSampling,
    /// Uniform with probability `epsilon`, Thompson Sampling otherwise.
    /// With `share_uniform_data` the uniform branch's rewards also update the
    /// posterior that drives Thompson Sampling.
    Hybrid {
        epsilon: f64,
        share_uniform_data: bool,
    },
}

impl AllocationPolicy {
    pub fn hybrid(epsilon: f64, share_uniform_data: bool) -> Result<Self> {
        let p = AllocationPolicy::Hybrid {
            epsilon,
            share_uniform_data,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if let AllocationPolicy::Hybrid { epsilon, .. } = *self {
            if !(epsilon > 0.0 && epsilon < 1.0) {
                return Err(Error::invalid(format!(
                    "hybrid epsilon must lie strictly between 0 and 1, got {epsilon}"
                )));
            }
        }
        Ok(())
    }

    /// Whether rewards from uniformly assigned participants feed the posterior.
    /// A pure uniform experiment always learns from its own data so its
    /// probability-of-assignment report stays meaningful.
    pub fn learns_from_uniform(&self) -> bool {
        match *self {
            AllocationPolicy::Uniform => true,
            AllocationPolicy::ThompsonSampling => false,
            AllocationPolicy::Hybrid {
                share_uniform_data, ..
            } => share_uniform_data,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AllocationPolicy::Uniform => "uniform",
            AllocationPolicy::ThompsonSampling => "ts",
            AllocationPolicy::Hybrid { .. } => "hybrid",
        }
    }
}

/// Which branch produced an assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationSource {
    UniformArm,
    TsArm,
}

impl AllocationSource {
    pub fn as_str(self) -> &'static str {
        match self {
            AllocationSource::UniformArm => "uniform_arm",
            AllocationSource::TsArm => "ts_arm",
        }
    }
}

impl std::str::FromStr for AllocationSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_arm" => Ok(AllocationSource::UniformArm),
            "ts_arm" => Ok(AllocationSource::TsArm),
            other => Err(Error::Malformed(format!("unknown allocation source `{other}`"))),
        }
    }
}

/// Monte-Carlo estimate of each arm's probability of being the best arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbOptimal {
    pub probs: Vec<f64>,
    pub draws: u64,
}

impl ProbOptimal {
    /// Arm with the largest probability; ties go to the lowest index.
    pub fn favored(&self) -> ArmId {
        ArmId::from_zero_based(argmax_first(self.probs.iter().copied()))
    }

    pub fn max(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }
}

fn check_arms(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 arms, got {k}")));
    }
    Ok(())
}

/// Position of the first maximum.
fn argmax_first<T: PartialOrd>(values: impl IntoIterator<Item = T>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match &best {
            Some((_, b)) if v.partial_cmp(b) != Some(std::cmp::Ordering::Greater) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(0, |(i, _)| i)
}

pub fn uniform_select<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<ArmId> {
    check_arms(k)?;
    Ok(ArmId::from_zero_based(rng.random_range(0..k)))
}

/// Draw once from every posterior and return the arm with the largest draw.
pub fn ts_select<T: Scalar, R: Rng + ?Sized>(
    posteriors: &[BetaParams<T>],
    rng: &mut R,
) -> Result<ArmId> {
    check_arms(posteriors.len())?;
    Ok(ts_draw(posteriors, rng))
}

fn ts_draw<T: Scalar, R: Rng + ?Sized>(posteriors: &[BetaParams<T>], rng: &mut R) -> ArmId {
    ArmId::from_zero_based(argmax_first(posteriors.iter().map(|p| p.sample(rng))))
}

/// Flip the epsilon coin first, then pick uniformly or by Thompson Sampling.
pub fn hybrid_select<T: Scalar, R: Rng + ?Sized>(
    posteriors: &[BetaParams<T>],
    epsilon: f64,
    rng: &mut R,
) -> Result<(ArmId, AllocationSource)> {
    check_arms(posteriors.len())?;
    AllocationPolicy::hybrid(epsilon, true)?;
    Ok(hybrid_draw(posteriors, epsilon, rng))
}

fn hybrid_draw<T: Scalar, R: Rng + ?Sized>(
    posteriors: &[BetaParams<T>],
    epsilon: f64,
    rng: &mut R,
) -> (ArmId, AllocationSource) {
    if rng.random::<f64>() < epsilon {
        let arm = ArmId::from_zero_based(rng.random_range(0..posteriors.len()));
        (arm, AllocationSource::UniformArm)
    } else {
        (ts_draw(posteriors, rng), AllocationSource::TsArm)
    }
}

/// Probability that each arm has the largest mean, estimated from `draws`
/// joint posterior samples (ties credited to the lowest index).
///
/// A single `u64` is taken from `rng` to seed fixed-size sub-streams that are
/// evaluated in parallel and reduced in order, so the result only depends on
/// the rng state and the inputs.
pub fn prob_optimal<T: Scalar, R: Rng + ?Sized>(
    posteriors: &[BetaParams<T>],
    draws: u64,
    rng: &mut R,
) -> Result<ProbOptimal> {
    check_arms(posteriors.len())?;
    if draws == 0 {
        return Err(Error::invalid("prob_optimal needs at least one draw"));
    }
    let master: u64 = rng.random();
    let k = posteriors.len();
    let chunks = draws.div_ceil(PA_CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut sub = ChaCha8Rng::seed_from_u64(master);
            sub.set_stream(c);
            let n = PA_CHUNK.min(draws - c * PA_CHUNK);
            let mut wins = vec![0u64; k];
            for _ in 0..n {
                wins[ts_draw(posteriors, &mut sub).zero_based()] += 1;
            }
            wins
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(vec![0u64; k], |mut acc, w| {
            acc.iter_mut().zip(w).for_each(|(a, b)| *a += b);
            acc
        });
    let probs = counts.iter().map(|&c| c as f64 / draws as f64).collect();
    Ok(ProbOptimal { probs, draws })
}

/// `n` independent selections under `policy`, all against the same
/// posteriors. The posteriors are borrowed immutably.
pub fn assign_batch<T: Scalar, R: Rng + ?Sized>(
    posteriors: &[BetaParams<T>],
    policy: &AllocationPolicy,
    n: usize,
    rng: &mut R,
) -> Result<Vec<(ArmId, AllocationSource)>> {
    check_arms(posteriors.len())?;
    policy.validate()?;
    let k = posteriors.len();
    let out = (0..n)
        .map(|_| match *policy {
            AllocationPolicy::Uniform => (
                ArmId::from_zero_based(rng.random_range(0..k)),
                AllocationSource::UniformArm,
            ),
            AllocationPolicy::ThompsonSampling => {
                (ts_draw(posteriors, rng), AllocationSource::TsArm)
            }
            AllocationPolicy::Hybrid { epsilon, .. } => hybrid_draw(posteriors, epsilon, rng),
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    type B = BetaParams<f64>;

    fn b(a: f64, bb: f64) -> B {
        B::new(a, bb).unwrap()
    }

    fn frequencies(arms: impl Iterator<Item = ArmId>, k: usize) -> Vec<f64> {
        let mut c = vec![0usize; k];
        let mut n = 0;
        for a in arms {
            c[a.zero_based()] += 1;
            n += 1;
        }
        c.into_iter().map(|x| x as f64 / n as f64).collect()
    }

    #[test]
    fn uniform_select_is_uniform() {
        let mut r = rng::stream(1);
        let f = frequencies((0..100_000).map(|_| uniform_select(4, &mut r).unwrap()), 4);
        for p in f {
            assert!((p - 0.25).abs() < 0.01, "{p}");
        }
    }

    #[test]
    fn uniform_select_deterministic_and_validated() {
        let a = uniform_select(2, &mut rng::stream(9)).unwrap();
        let b = uniform_select(2, &mut rng::stream(9)).unwrap();
        assert_eq!(a, b);
        assert!(uniform_select(1, &mut rng::stream(9)).is_err());
    }

    #[test]
    fn ts_select_dominant_arm() {
        let post = [b(1e6, 1.0), b(1.0, 1e6)];
        let mut r = rng::stream(2);
        let f = frequencies((0..10_000).map(|_| ts_select(&post, &mut r).unwrap()), 2);
        assert!(f[0] > 0.999);
    }

    #[test]
    fn ts_select_symmetric() {
        let post = [b(1.0, 1.0); 4];
        let mut r = rng::stream(3);
        let f = frequencies((0..100_000).map(|_| ts_select(&post, &mut r).unwrap()), 4);
        for p in f {
            assert!((p - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn ts_select_matches_closed_form_pair() {
        // P(Beta(2,1) > Beta(1,2)) = int_0^1 2x (2x - x^2) dx = 5/6.
        let post = [b(2.0, 1.0), b(1.0, 2.0)];
        let mut r = rng::stream(4);
        let f = frequencies((0..1_000_000).map(|_| ts_select(&post, &mut r).unwrap()), 2);
        assert!((f[0] - 5.0 / 6.0).abs() < 0.003, "{}", f[0]);
    }

    #[test]
    fn ts_select_needs_two_arms() {
        assert!(ts_select(&[b(1.0, 1.0)], &mut rng::stream(0)).is_err());
    }

    #[test]
    fn hybrid_coin_fraction() {
        let post = [b(1.0, 1.0); 4];
        let mut r = rng::stream(5);
        let n = 10_000;
        let uni = (0..n)
            .filter(|_| hybrid_select(&post, 0.5, &mut r).unwrap().1 == AllocationSource::UniformArm)
            .count();
        assert!((uni as f64 / n as f64 - 0.5).abs() < 0.015);

        let uni = (0..n)
            .filter(|_| hybrid_select(&post, 0.001, &mut r).unwrap().1 == AllocationSource::UniformArm)
            .count();
        assert!((uni as f64 / n as f64) < 0.01);
    }

    #[test]
    fn hybrid_symmetric_posteriors_stay_uniform() {
        let post = [b(1.0, 1.0); 4];
        let mut r = rng::stream(6);
        let f = frequencies((0..100_000).map(|_| hybrid_select(&post, 0.5, &mut r).unwrap().0), 4);
        for p in f {
            assert!((p - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn hybrid_rejects_degenerate_epsilon() {
        let post = [b(1.0, 1.0); 2];
        for eps in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(hybrid_select(&post, eps, &mut rng::stream(0)).is_err());
        }
    }

    #[test]
    fn prob_optimal_examples() {
        let mut r = rng::stream(7);
        let pa = prob_optimal(&[b(1.0, 1.0); 4], DEFAULT_DRAWS, &mut r).unwrap();
        assert!(pa.probs.iter().all(|p| (p - 0.25).abs() < 0.005));

        let pa = prob_optimal(&[b(2.0, 1.0), b(1.0, 2.0)], DEFAULT_DRAWS, &mut r).unwrap();
        assert!((pa.probs[0] - 5.0 / 6.0).abs() < 0.003);
        assert!((pa.probs[1] - 1.0 / 6.0).abs() < 0.003);

        let pa = prob_optimal(&[b(1.0, 1.0); 2], DEFAULT_DRAWS, &mut r).unwrap();
        assert!(pa.probs.iter().all(|p| (p - 0.5).abs() < 0.005));
    }

    #[test]
    fn prob_optimal_sums_to_one_and_is_deterministic() {
        let post = [b(3.0, 7.0), b(7.0, 3.0), b(1.0, 1.0), b(5.0, 5.0)];
        let a = prob_optimal(&post, 123_457, &mut rng::stream(8)).unwrap();
        let c = prob_optimal(&post, 123_457, &mut rng::stream(8)).unwrap();
        assert_eq!(a, c);
        assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn prob_optimal_rejects_zero_draws() {
        assert!(prob_optimal(&[b(1.0, 1.0); 2], 0, &mut rng::stream(0)).is_err());
    }

    #[test]
    fn ties_credit_lowest_index() {
        assert_eq!(argmax_first([0.5, 0.7, 0.7]), 1);
        assert_eq!(argmax_first([0.2, 0.2]), 0);
        let pa = ProbOptimal {
            probs: vec![0.25; 4],
            draws: 4,
        };
        assert_eq!(pa.favored().get(), 1);
    }

    #[test]
    fn assign_batch_examples() {
        let post = [b(1.0, 1.0); 4];
        let mut r = rng::stream(10);
        assert!(assign_batch(&post, &AllocationPolicy::Uniform, 0, &mut r).unwrap().is_empty());

        let out = assign_batch(&post, &AllocationPolicy::Uniform, 400, &mut r).unwrap();
        let mut counts = [0; 4];
        for (a, s) in &out {
            assert_eq!(*s, AllocationSource::UniformArm);
            counts[a.zero_based()] += 1;
        }
        assert!(counts.iter().all(|&c| (70..=130).contains(&c)), "{counts:?}");

        let post = [b(2.0, 1.0), b(1.0, 2.0)];
        let out = assign_batch(&post, &AllocationPolicy::ThompsonSampling, 100_000, &mut r).unwrap();
        assert!(out.iter().all(|(_, s)| *s == AllocationSource::TsArm));
        let share = out.iter().filter(|(a, _)| a.get() == 1).count() as f64 / 1e5;
        assert!((share - 5.0 / 6.0).abs() < 0.01);
    }

    #[test]
    fn assign_batch_is_reproducible() {
        let post = [b(3.0, 2.0), b(2.0, 3.0), b(1.0, 1.0)];
        let pol = AllocationPolicy::hybrid(0.5, true).unwrap();
        let a = assign_batch(&post, &pol, 500, &mut rng::stream(12)).unwrap();
        let c = assign_batch(&post, &pol, 500, &mut rng::stream(12)).unwrap();
        assert_eq!(a, c);
    }
}

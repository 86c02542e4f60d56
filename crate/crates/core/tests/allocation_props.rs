use batchbandit::allocation::{assign_batch, prob_optimal, ts_select, AllocationPolicy};
use batchbandit::posterior::BetaParams;
use batchbandit::rng;
use proptest::prelude::*;

type B = BetaParams<f64>;

fn posts(v: &[(f64, f64)]) -> Vec<B> {
    v.iter().map(|&(a, b)| B::new(a, b).unwrap()).collect()
}

fn ts_frequencies(p: &[B], n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed);
    let mut counts = vec![0usize; p.len()];
    for _ in 0..n {
        counts[ts_select(p, &mut r).unwrap().zero_based()] += 1;
    }
    counts.iter().map(|&c| c as f64 / n as f64).collect()
}

fn param() -> impl Strategy<Value = (f64, f64)> {
    (1u32..30, 1u32..30).prop_map(|(a, b)| (a as f64, b as f64))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn ts_frequencies_match_prob_optimal(
        v in prop::collection::vec(param(), 2..=4),
        seed in any::<u64>(),
    ) {
        let p = posts(&v);
        let freq = ts_frequencies(&p, 100_000, seed);
        let pa = prob_optimal(&p, 400_000, &mut rng::stream(seed ^ 1)).unwrap();
        for (f, q) in freq.iter().zip(&pa.probs) {
            prop_assert!((f - q).abs() <= 0.01, "{:?} vs {:?}", freq, pa.probs);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prob_optimal_entries_partition_draws(
        v in prop::collection::vec(param(), 2..=6),
        draws in 1u64..200_000,
        seed in any::<u64>(),
    ) {
        let pa = prob_optimal(&posts(&v), draws, &mut rng::stream(seed)).unwrap();
        let credited: f64 = pa.probs.iter().map(|p| p * draws as f64).sum();
        prop_assert!((credited - draws as f64).abs() < 1e-6);
        prop_assert!((pa.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(pa.probs.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn assignment_is_deterministic_and_frozen(
        v in prop::collection::vec(param(), 2..=5),
        eps in 0.05f64..0.95,
        n in 0usize..300,
        seed in any::<u64>(),
    ) {
        let p = posts(&v);
        let before = p.clone();
        let policy = AllocationPolicy::hybrid(eps, false).unwrap();
        let a = assign_batch(&p, &policy, n, &mut rng::stream(seed)).unwrap();
        let b = assign_batch(&p, &policy, n, &mut rng::stream(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), n);
        prop_assert_eq!(p, before);
    }
}

#[test]
fn raising_alpha_does_not_lower_prob_optimal() {
    let base = [(3.0, 7.0), (7.0, 3.0), (1.0, 1.0), (5.0, 5.0)];
    for arm in 0..base.len() {
        let mut prev = 0.0;
        for bump in [0.0, 1.0, 3.0, 10.0] {
            let mut v = base;
            v[arm].0 += bump;
            let pa = prob_optimal(&posts(&v), 1_000_000, &mut rng::stream(77)).unwrap();
            assert!(pa.probs[arm] >= prev - 0.005, "arm {arm} bump {bump}: {} < {prev}", pa.probs[arm]);
            prev = pa.probs[arm];
        }
    }
}

#[test]
fn uniform_batch_counts_within_multinomial_band() {
    let p = posts(&[(1.0, 1.0); 4]);
    let out = assign_batch(&p, &AllocationPolicy::Uniform, 400, &mut rng::stream(9)).unwrap();
    let mut counts = [0i64; 4];
    for (arm, _) in out {
        counts[arm.zero_based()] += 1;
    }
    assert!(counts.iter().all(|&c| (c - 100).abs() <= 30), "{counts:?}");
}

use batchbandit::allocation::prob_optimal;
use batchbandit::engine::create_experiment;
use batchbandit::{rng, AllocationPolicy, ExperimentConfig, Reward};

fn main() -> batchbandit::Result<()> {
    let policy = AllocationPolicy::hybrid(0.5, true)?;
    let mut exp = create_experiment(ExperimentConfig::with_arms("week1", 4, policy), 42)?;

    let ids: Vec<String> = (0..80).map(|i| format!("p{i}")).collect();
    let assigned = exp.open_batch(&ids)?;
    let rewards: Vec<(String, Reward)> = assigned
        .iter()
        .map(|r| (r.participant_id.clone(), Reward::FAILURE))
        .collect();
    exp.record_rewards(&rewards)?;

    let pa = prob_optimal(exp.posteriors(), 1_000_000, &mut rng::stream(7))?;
    println!("{:?} favored {}", pa.probs, pa.favored());
    Ok(())
}

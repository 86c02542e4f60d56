//! Experiment lifecycle.
//!
//! An experiment moves through `(Open -> BatchPending -> Open)* -> Closed`.
//! Opening a batch assigns every participant against the posterior frozen at
//! batch start; recording rewards closes the batch, folds the visible rewards
//! into the posterior and advances the batch counter. Every operation
//! validates its input before touching state, so a failed call leaves the
//! experiment exactly as it was.

mod snapshot;
mod store;

use std::collections::{HashMap, HashSet};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::allocation::{self, AllocationPolicy, AllocationSource};
use crate::posterior::{self, ArmId, Reward};
use crate::{rng, BetaParams, Error, Result};

pub use snapshot::{Snapshot, SNAPSHOT_FORMAT_VERSION};
pub use store::{FileStore, MemoryStore, Store};

/// Default number of batches per experiment (one per weekday).
pub const DEFAULT_BATCHES: u32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub id: String,
    pub arm_labels: Vec<String>,
    pub prior: BetaParams,
    pub policy: AllocationPolicy,
    pub batches_planned: u32,
}

impl ExperimentConfig {
    /// `k` arms labelled `arm1..armK`, uniform prior, default batch budget.
    pub fn with_arms(id: impl Into<String>, k: usize, policy: AllocationPolicy) -> Self {
        Self {
            id: id.into(),
            arm_labels: (1..=k).map(|i| format!("arm{i}")).collect(),
            prior: BetaParams::uniform(),
            policy,
            batches_planned: DEFAULT_BATCHES,
        }
    }

    pub fn k(&self) -> usize {
        self.arm_labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        validate_id(&self.id)?;
        if self.k() < 2 {
            return Err(Error::invalid(format!("need at least 2 arms, got {}", self.k())));
        }
        let unique: HashSet<&str> = self.arm_labels.iter().map(String::as_str).collect();
        if unique.len() != self.k() {
            return Err(Error::invalid("arm labels must be unique"));
        }
        if self.batches_planned == 0 {
            return Err(Error::invalid("batches_planned must be at least 1"));
        }
        BetaParams::new(self.prior.alpha(), self.prior.beta())?;
        self.policy.validate()
    }
}

/// Experiment ids double as file names in [`FileStore`].
pub(crate) fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "experiment id `{id}` must be 1-128 chars of [A-Za-z0-9_.-] and not start with '.'"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Open,
    BatchPending,
    Closed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountCell {
    pub assigned: u64,
    pub clicked: u64,
}

impl CountCell {
    pub fn failures(&self) -> u64 {
        self.assigned - self.clicked
    }

    fn add(&mut self, reward: Reward) {
        self.assigned += 1;
        self.clicked += u64::from(reward.as_u8());
    }
}

/// Per-arm counts split by allocation source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmCounts {
    pub uniform: CountCell,
    pub ts: CountCell,
}

impl ArmCounts {
    pub fn cell(&self, source: AllocationSource) -> &CountCell {
        match source {
            AllocationSource::UniformArm => &self.uniform,
            AllocationSource::TsArm => &self.ts,
        }
    }

    fn cell_mut(&mut self, source: AllocationSource) -> &mut CountCell {
        match source {
            AllocationSource::UniformArm => &mut self.uniform,
            AllocationSource::TsArm => &mut self.ts,
        }
    }

    pub fn total(&self) -> CountCell {
        CountCell {
            assigned: self.uniform.assigned + self.ts.assigned,
            clicked: self.uniform.clicked + self.ts.clicked,
        }
    }

    /// Counts that feed the posterior under `policy`.
    pub fn visible(&self, policy: &AllocationPolicy) -> CountCell {
        if policy.learns_from_uniform() {
            self.total()
        } else {
            self.ts
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub participant_id: String,
    pub batch_index: u32,
    pub arm: ArmId,
    pub source: AllocationSource,
    /// Absent until the batch is closed.
    pub reward: Option<Reward>,
}

#[derive(Debug, Clone)]
pub struct ExperimentState {
    config: ExperimentConfig,
    seed: u64,
    rng: ChaCha8Rng,
    posteriors: Vec<BetaParams>,
    counts: Vec<ArmCounts>,
    batch_index: u32,
    status: Status,
    records: Vec<AssignmentRecord>,
    /// Posterior after each closed batch.
    posterior_history: Vec<Vec<BetaParams>>,
    assigned: HashMap<String, usize>,
}

// Generators at the same stream position compare equal even when their block
// buffers differ (a restored generator refills eagerly).
impl PartialEq for ExperimentState {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.seed == other.seed
            && self.rng.get_seed() == other.rng.get_seed()
            && self.rng.get_stream() == other.rng.get_stream()
            && self.rng.get_word_pos() == other.rng.get_word_pos()
            && self.posteriors == other.posteriors
            && self.counts == other.counts
            && self.batch_index == other.batch_index
            && self.status == other.status
            && self.records == other.records
            && self.posterior_history == other.posterior_history
    }
}

/// Start a new experiment at its prior. Uniqueness of the id is enforced by
/// the [`Store`] the state is inserted into.
pub fn create_experiment(config: ExperimentConfig, seed: u64) -> Result<ExperimentState> {
    config.validate()?;
    let posteriors = posterior::init_prior(config.k(), config.prior.alpha(), config.prior.beta())?;
    Ok(ExperimentState {
        counts: vec![ArmCounts::default(); config.k()],
        config,
        seed,
        rng: rng::stream(seed),
        posteriors,
        batch_index: 0,
        status: Status::Open,
        records: Vec::new(),
        posterior_history: Vec::new(),
        assigned: HashMap::new(),
    })
}

impl ExperimentState {
    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn id(&self) -> &str {
        &self.config.id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn posteriors(&self) -> &[BetaParams] {
        &self.posteriors
    }

    pub fn counts(&self) -> &[ArmCounts] {
        &self.counts
    }

    /// Number of closed batches.
    pub fn batch_index(&self) -> u32 {
        self.batch_index
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn records(&self) -> &[AssignmentRecord] {
        &self.records
    }

    pub fn posterior_history(&self) -> &[Vec<BetaParams>] {
        &self.posterior_history
    }

    /// Records of the batch awaiting rewards (empty unless `BatchPending`).
    pub fn pending(&self) -> &[AssignmentRecord] {
        &self.records[self.pending_start()..]
    }

    fn pending_start(&self) -> usize {
        if self.status != Status::BatchPending {
            return self.records.len();
        }
        self.records
            .iter()
            .rposition(|r| r.batch_index != self.batch_index)
            .map_or(0, |i| i + 1)
    }

    /// Assign `participants` against the current posterior and move to
    /// `BatchPending`. An empty list still opens (and must close) a batch.
    pub fn open_batch(&mut self, participants: &[String]) -> Result<Vec<AssignmentRecord>> {
        match self.status {
            Status::Open => {}
            Status::BatchPending => {
                return Err(Error::InvalidState(format!(
                    "batch {} is still pending rewards",
                    self.batch_index + 1
                )))
            }
            Status::Closed => {
                return Err(Error::BatchBudgetExhausted(self.config.batches_planned))
            }
        }
        let mut seen = HashSet::with_capacity(participants.len());
        for p in participants {
            if p.is_empty() {
                return Err(Error::invalid("participant ids must be non-empty"));
            }
            if self.assigned.contains_key(p) || !seen.insert(p.as_str()) {
                return Err(Error::DuplicateParticipant(p.clone()));
            }
        }

        let picks = allocation::assign_batch(
            &self.posteriors,
            &self.config.policy,
            participants.len(),
            &mut self.rng,
        )?;
        let start = self.records.len();
        for (p, (arm, source)) in participants.iter().zip(picks) {
            self.assigned.insert(p.clone(), self.records.len());
            self.records.push(AssignmentRecord {
                participant_id: p.clone(),
                batch_index: self.batch_index,
                arm,
                source,
                reward: None,
            });
        }
        self.status = Status::BatchPending;
        Ok(self.records[start..].to_vec())
    }

    /// Close the pending batch. Participants of the batch missing from
    /// `rewards` are recorded as failures.
    pub fn record_rewards(&mut self, rewards: &[(String, Reward)]) -> Result<()> {
        if self.status != Status::BatchPending {
            return Err(Error::InvalidState(format!(
                "no batch is pending (status {:?})",
                self.status
            )));
        }
        let start = self.pending_start();
        let mut given: HashMap<usize, Reward> = HashMap::with_capacity(rewards.len());
        for (id, r) in rewards {
            let idx = match self.assigned.get(id) {
                Some(&i) if i >= start => i,
                _ => return Err(Error::UnknownParticipant(id.clone())),
            };
            if given.insert(idx, *r).is_some() {
                return Err(Error::DuplicateReward(id.clone()));
            }
        }

        let k = self.config.k();
        let mut batch = vec![ArmCounts::default(); k];
        for (i, rec) in self.records[start..].iter_mut().enumerate() {
            let reward = given.get(&(start + i)).copied().unwrap_or(Reward::FAILURE);
            rec.reward = Some(reward);
            batch[rec.arm.zero_based()].cell_mut(rec.source).add(reward);
        }
        let policy = self.config.policy;
        for ((post, total), add) in self.posteriors.iter_mut().zip(&mut self.counts).zip(&batch) {
            for source in [AllocationSource::UniformArm, AllocationSource::TsArm] {
                let (dst, src) = (total.cell_mut(source), add.cell(source));
                dst.assigned += src.assigned;
                dst.clicked += src.clicked;
            }
            let seen = add.visible(&policy);
            *post = post.batch_fold(seen.clicked, seen.failures());
        }
        self.posterior_history.push(self.posteriors.clone());
        self.batch_index += 1;
        self.status = if self.batch_index == self.config.batches_planned {
            Status::Closed
        } else {
            Status::Open
        };
        Ok(())
    }

    /// Same as [`record_rewards`](Self::record_rewards) from a map.
    pub fn record_reward_map<'a>(
        &mut self,
        rewards: impl IntoIterator<Item = (&'a String, &'a Reward)>,
    ) -> Result<()> {
        let list: Vec<(String, Reward)> = rewards.into_iter().map(|(k, v)| (k.clone(), *v)).collect();
        self.record_rewards(&list)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot::capture(self)
    }

    pub fn restore(snapshot: Snapshot) -> Result<Self> {
        snapshot.into_state()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn hybrid(share: bool) -> AllocationPolicy {
        AllocationPolicy::hybrid(0.5, share).unwrap()
    }

    #[test]
    fn create_examples() {
        let s = create_experiment(ExperimentConfig::with_arms("w1", 4, hybrid(true)), 1).unwrap();
        assert_eq!(s.posteriors(), &[BetaParams::uniform(); 4]);
        assert_eq!(s.batch_index(), 0);
        assert_eq!(s.status(), Status::Open);

        assert!(create_experiment(ExperimentConfig::with_arms("u", 2, AllocationPolicy::Uniform), 1).is_ok());
        assert!(create_experiment(ExperimentConfig::with_arms("x", 1, AllocationPolicy::Uniform), 1).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::with_arms("a", 3, AllocationPolicy::Uniform);
        c.arm_labels[2] = "arm1".into();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::with_arms("a", 3, AllocationPolicy::Uniform);
        c.batches_planned = 0;
        assert!(c.validate().is_err());
        for bad in ["", "../x", ".hidden", "a b"] {
            assert!(ExperimentConfig::with_arms(bad, 2, AllocationPolicy::Uniform).validate().is_err());
        }
    }

    #[test]
    fn open_batch_hybrid_split() {
        let mut s = create_experiment(ExperimentConfig::with_arms("w", 4, hybrid(true)), 21).unwrap();
        let recs = s.open_batch(&ids("p", 80)).unwrap();
        assert_eq!(recs.len(), 80);
        let uni = recs.iter().filter(|r| r.source == AllocationSource::UniformArm).count();
        assert!((25..=55).contains(&uni), "{uni}");
        assert_eq!(s.status(), Status::BatchPending);
        assert_eq!(s.posteriors(), &[BetaParams::uniform(); 4]);
    }

    #[test]
    fn empty_batch_still_pends() {
        let mut s = create_experiment(ExperimentConfig::with_arms("w", 4, hybrid(true)), 2).unwrap();
        assert!(s.open_batch(&[]).unwrap().is_empty());
        assert_eq!(s.status(), Status::BatchPending);
        s.record_rewards(&[]).unwrap();
        assert_eq!(s.batch_index(), 1);
        assert_eq!(s.posteriors(), &[BetaParams::uniform(); 4]);
    }

    #[test]
    fn illegal_calls_do_not_mutate() {
        let mut s = create_experiment(ExperimentConfig::with_arms("w", 2, hybrid(true)), 3).unwrap();
        assert!(matches!(s.record_rewards(&[]), Err(Error::InvalidState(_))));
        s.open_batch(&ids("a", 5)).unwrap();
        let before = s.clone();
        assert!(matches!(s.open_batch(&ids("b", 5)), Err(Error::InvalidState(_))));
        assert_eq!(s, before);
        let bad = vec![("zzz".to_string(), Reward::SUCCESS)];
        assert!(matches!(s.record_rewards(&bad), Err(Error::UnknownParticipant(_))));
        let dup = vec![("a1".to_string(), Reward::SUCCESS), ("a1".to_string(), Reward::FAILURE)];
        assert!(matches!(s.record_rewards(&dup), Err(Error::DuplicateReward(_))));
        assert_eq!(s, before);
    }

    #[test]
    fn duplicate_participants_rejected() {
        let mut s = create_experiment(ExperimentConfig::with_arms("w", 2, hybrid(true)), 4).unwrap();
        let dup = vec!["x".to_string(), "x".to_string()];
        assert!(matches!(s.open_batch(&dup), Err(Error::DuplicateParticipant(_))));
        s.open_batch(&ids("p", 3)).unwrap();
        s.record_rewards(&[]).unwrap();
        assert!(matches!(s.open_batch(&ids("p", 1)), Err(Error::DuplicateParticipant(_))));
        // Rewards for earlier batches are no longer accepted.
        s.open_batch(&ids("q", 2)).unwrap();
        let late = vec![("p0".to_string(), Reward::SUCCESS)];
        assert!(matches!(s.record_rewards(&late), Err(Error::UnknownParticipant(_))));
    }

    #[test]
    fn degenerate_posterior_batch_fold() {
        let mut c = ExperimentConfig::with_arms("w", 2, AllocationPolicy::ThompsonSampling);
        c.prior = BetaParams::uniform();
        let mut s = create_experiment(c, 5).unwrap();
        // Force arm 1 by making arm 2 hopeless.
        s.posteriors[1] = BetaParams::new(1.0, 1e12).unwrap();
        let people = ids("p", 10);
        let recs = s.open_batch(&people).unwrap();
        assert!(recs.iter().all(|r| r.arm.get() == 1));
        let rewards = vec![("p0".to_string(), Reward::SUCCESS), ("p7".to_string(), Reward::SUCCESS)];
        s.record_rewards(&rewards).unwrap();
        assert_eq!(s.posteriors()[0], BetaParams::new(3.0, 9.0).unwrap());
    }

    #[test]
    fn unshared_uniform_rewards_leave_posterior() {
        let mut s = create_experiment(ExperimentConfig::with_arms("w", 4, hybrid(false)), 6).unwrap();
        let recs = s.open_batch(&ids("p", 200)).unwrap();
        let rewards: Vec<_> = recs
            .iter()
            .filter(|r| r.source == AllocationSource::UniformArm)
            .map(|r| (r.participant_id.clone(), Reward::SUCCESS))
            .collect();
        assert!(!rewards.is_empty());
        s.record_rewards(&rewards).unwrap();
        for (post, c) in s.posteriors().iter().zip(s.counts()) {
            assert_eq!(post.alpha(), 1.0);
            assert_eq!(post.beta(), 1.0 + c.ts.assigned as f64);
        }
    }

    #[test]
    fn missing_rewards_are_failures() {
        let mut s = create_experiment(ExperimentConfig::with_arms("w", 4, hybrid(true)), 7).unwrap();
        s.open_batch(&ids("p", 40)).unwrap();
        s.record_rewards(&[]).unwrap();
        for (post, c) in s.posteriors().iter().zip(s.counts()) {
            assert_eq!(post.alpha(), 1.0);
            assert_eq!(post.beta(), 1.0 + c.total().assigned as f64);
        }
        assert!(s.records().iter().all(|r| r.reward == Some(Reward::FAILURE)));
    }

    #[test]
    fn closes_at_budget() {
        let mut c = ExperimentConfig::with_arms("w", 2, AllocationPolicy::Uniform);
        c.batches_planned = 2;
        let mut s = create_experiment(c, 8).unwrap();
        for b in 0..2 {
            s.open_batch(&ids(&format!("b{b}-"), 3)).unwrap();
            s.record_rewards(&[]).unwrap();
        }
        assert_eq!(s.status(), Status::Closed);
        assert!(matches!(s.open_batch(&ids("z", 1)), Err(Error::BatchBudgetExhausted(2))));
        assert_eq!(s.posterior_history().len(), 2);
    }
}

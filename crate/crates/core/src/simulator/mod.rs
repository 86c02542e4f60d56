//! Synthetic Bernoulli environments driving the engine.
//!
//! A run feeds the engine batch by batch, drawing each participant's click
//! from the true probability of the arm they were given, and reports a
//! [`Trajectory`]: per batch and arm, the counts, the cumulative click rate
//! and the probability of assignment for the following batch.

mod campaign;
mod table;

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocation::{self, AllocationSource};
use crate::analysis::cumulative_click_rate;
use crate::engine::{create_experiment, ExperimentConfig, ExperimentState};
use crate::{rng, Error, Result, Reward};

pub use campaign::{
    chi_square_uniform, run_campaign, CampaignConfig, CampaignSummary, ChiSquare, PairedComparison,
    PolicySpec, PolicySummary,
};
pub use table::{published_table, replay_table, FixtureGroup, FixtureRow, Highlight, RenderedTable, TableFixture, TableStyle};

/// True click probability of every arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    true_probs: Vec<f64>,
}

impl Environment {
    pub fn new(true_probs: Vec<f64>) -> Result<Self> {
        if true_probs.len() < 2 {
            return Err(Error::invalid("an environment needs at least 2 arms"));
        }
        if let Some(p) = true_probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("arm probability {p} outside [0, 1]")));
        }
        Ok(Self { true_probs })
    }

    pub fn k(&self) -> usize {
        self.true_probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.true_probs
    }

    pub fn best(&self) -> f64 {
        self.true_probs.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmRow {
    pub assigned_uniform: u64,
    pub assigned_ts: u64,
    pub clicked_uniform: u64,
    pub clicked_ts: u64,
    /// Cumulative click rate through this batch, absent before the first assignment.
    pub ccr: Option<f64>,
    /// Probability of assignment for the next batch.
    pub pa: f64,
}

impl ArmRow {
    pub fn assigned(&self) -> u64 {
        self.assigned_uniform + self.assigned_ts
    }

    pub fn clicked(&self) -> u64 {
        self.clicked_uniform + self.clicked_ts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    /// 1-based batch number.
    pub batch: u32,
    pub arms: Vec<ArmRow>,
}

impl BatchRow {
    pub fn assigned_by(&self, source: AllocationSource) -> u64 {
        self.arms
            .iter()
            .map(|a| match source {
                AllocationSource::UniformArm => a.assigned_uniform,
                AllocationSource::TsArm => a.assigned_ts,
            })
            .sum()
    }

    pub fn pa(&self) -> Vec<f64> {
        self.arms.iter().map(|a| a.pa).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub arm_labels: Vec<String>,
    pub batches: Vec<BatchRow>,
}

impl Trajectory {
    /// Table of a (partially) completed experiment. The probability of
    /// assignment after batch `b` is estimated with `draws` samples from a
    /// stream seeded by `derive_seed(pa_seed, b)`.
    pub fn from_state(state: &ExperimentState, draws: u64, pa_seed: u64) -> Result<Self> {
        let k = state.config().k();
        let closed: Vec<_> = state
            .records()
            .iter()
            .filter(|r| r.batch_index < state.batch_index())
            .cloned()
            .collect();
        let ccr = cumulative_click_rate(&closed, k)?;
        let mut batches = Vec::with_capacity(state.batch_index() as usize);
        for (b, posterior) in state.posterior_history().iter().enumerate() {
            let pa = allocation::prob_optimal(
                posterior,
                draws,
                &mut rng::stream(rng::derive_seed(pa_seed, b as u64)),
            )?;
            let mut arms = vec![ArmRow::default(); k];
            for r in closed.iter().filter(|r| r.batch_index as usize == b) {
                let row = &mut arms[r.arm.zero_based()];
                let clicked = u64::from(r.reward.expect("closed batch").as_u8());
                match r.source {
                    AllocationSource::UniformArm => {
                        row.assigned_uniform += 1;
                        row.clicked_uniform += clicked;
                    }
                    AllocationSource::TsArm => {
                        row.assigned_ts += 1;
                        row.clicked_ts += clicked;
                    }
                }
            }
            for (i, row) in arms.iter_mut().enumerate() {
                row.ccr = ccr.get(b, i);
                row.pa = pa.probs[i];
            }
            batches.push(BatchRow {
                batch: b as u32 + 1,
                arms,
            });
        }
        Ok(Trajectory {
            arm_labels: state.config().arm_labels.clone(),
            batches,
        })
    }

    pub fn total_assigned(&self) -> Vec<u64> {
        let k = self.arm_labels.len();
        self.batches.iter().fold(vec![0; k], |mut acc, b| {
            acc.iter_mut().zip(&b.arms).for_each(|(a, r)| *a += r.assigned());
            acc
        })
    }

    pub fn total_clicked(&self) -> u64 {
        self.batches
            .iter()
            .flat_map(|b| &b.arms)
            .map(ArmRow::clicked)
            .sum()
    }

    pub fn final_pa(&self) -> Option<Vec<f64>> {
        self.batches.last().map(BatchRow::pa)
    }

    /// One CSV row per batch and arm.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "batch",
            "arm",
            "label",
            "assigned",
            "clicked",
            "assigned_uniform",
            "assigned_ts",
            "clicked_uniform",
            "clicked_ts",
            "ccr",
            "pa",
        ])?;
        for b in &self.batches {
            for (i, a) in b.arms.iter().enumerate() {
                out.write_record([
                    b.batch.to_string(),
                    (i + 1).to_string(),
                    self.arm_labels[i].clone(),
                    a.assigned().to_string(),
                    a.clicked().to_string(),
                    a.assigned_uniform.to_string(),
                    a.assigned_ts.to_string(),
                    a.clicked_uniform.to_string(),
                    a.clicked_ts.to_string(),
                    a.ccr.map_or_else(String::new, |c| format!("{c:.6}")),
                    format!("{:.6}", a.pa),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Render-ready rows named `name`.
    pub fn to_fixture(&self, name: &str) -> FixtureGroup {
        FixtureGroup {
            name: name.to_string(),
            rows: self
                .batches
                .iter()
                .map(|b| FixtureRow {
                    batch: format!("Batch {}", b.batch),
                    ccr: b.arms.iter().map(|a| a.ccr).collect(),
                    pa: b.pa(),
                })
                .collect(),
        }
    }
}

/// Seeds a run derives from its master seed.
const ENGINE_STREAM: u64 = 1;
const ENV_STREAM: u64 = 2;
const PA_STREAM: u64 = 3;

/// Drive one experiment through `batch_sizes` against `env`.
///
/// Each participant carries `K` uniform draws (one per arm) from the
/// environment stream, and clicks if the draw for the assigned arm falls
/// below that arm's probability. Runs with the same `seed` therefore share
/// potential outcomes across policies.
pub fn simulate_run(
    env: &Environment,
    config: &ExperimentConfig,
    batch_sizes: &[usize],
    seed: u64,
    pa_draws: u64,
) -> Result<Trajectory> {
    let state = run_state(env, config, batch_sizes, seed)?;
    Trajectory::from_state(&state, pa_draws, rng::derive_seed(seed, PA_STREAM))
}

pub(crate) fn run_state(
    env: &Environment,
    config: &ExperimentConfig,
    batch_sizes: &[usize],
    seed: u64,
) -> Result<ExperimentState> {
    if env.k() != config.k() {
        return Err(Error::invalid(format!(
            "environment has {} arms, experiment {}",
            env.k(),
            config.k()
        )));
    }
    if batch_sizes.len() != config.batches_planned as usize {
        return Err(Error::invalid(format!(
            "{} batch sizes for {} planned batches",
            batch_sizes.len(),
            config.batches_planned
        )));
    }
    let mut state = create_experiment(config.clone(), rng::derive_seed(seed, ENGINE_STREAM))?;
    let mut env_rng = rng::stream(rng::derive_seed(seed, ENV_STREAM));
    let mut outcomes = vec![0.0f64; env.k()];
    for (b, &size) in batch_sizes.iter().enumerate() {
        let ids: Vec<String> = (0..size).map(|i| format!("b{}-{i}", b + 1)).collect();
        let assigned = state.open_batch(&ids)?;
        let mut rewards = Vec::new();
        for rec in assigned {
            outcomes.iter_mut().for_each(|u| *u = env_rng.random());
            let arm = rec.arm.zero_based();
            if outcomes[arm] < env.probs()[arm] {
                rewards.push((rec.participant_id, Reward::SUCCESS));
            }
        }
        state.record_rewards(&rewards)?;
    }
    Ok(state)
}

/// Sum over assignments of the gap between the best arm's probability and
/// the assigned arm's.
pub fn cumulative_regret(trajectory: &Trajectory, env: &Environment) -> Result<f64> {
    if trajectory.arm_labels.len() != env.k() {
        return Err(Error::invalid("trajectory and environment disagree on arm count"));
    }
    let best = env.best();
    Ok(trajectory
        .total_assigned()
        .iter()
        .zip(env.probs())
        .map(|(&n, &p)| n as f64 * (best - p))
        .sum())
}

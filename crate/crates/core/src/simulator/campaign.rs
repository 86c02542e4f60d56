use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{cumulative_regret, simulate_run, Environment, Trajectory};
use crate::analysis::z_test;
use crate::engine::{ExperimentConfig, DEFAULT_BATCHES};
use crate::{rng, AllocationPolicy, BetaParams, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub label: String,
    pub policy: AllocationPolicy,
}

impl PolicySpec {
    pub fn new(label: impl Into<String>, policy: AllocationPolicy) -> Self {
        Self {
            label: label.into(),
            policy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub policies: Vec<PolicySpec>,
    pub batch_sizes: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    /// Monte-Carlo draws per probability-of-assignment estimate.
    pub pa_draws: u64,
    /// A run "strongly favours" an arm when its final PA exceeds this.
    pub favor_threshold: f64,
    pub prior: BetaParams,
}

impl CampaignConfig {
    pub fn new(policies: Vec<PolicySpec>, replications: usize, seed: u64) -> Self {
        Self {
            policies,
            batch_sizes: vec![80; DEFAULT_BATCHES as usize],
            replications,
            seed,
            pa_draws: 20_000,
            favor_threshold: 0.5,
            prior: BetaParams::uniform(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Pearson goodness-of-fit of `counts` against equal cell probabilities.
pub fn chi_square_uniform(counts: &[u64]) -> Result<ChiSquare> {
    let total: u64 = counts.iter().sum();
    if counts.len() < 2 || total == 0 {
        return Err(Error::invalid("chi-square needs at least 2 cells and a positive total"));
    }
    let expected = total as f64 / counts.len() as f64;
    let statistic = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let df = counts.len() - 1;
    let dist = ChiSquared::new(df as f64).expect("positive df");
    Ok(ChiSquare {
        statistic,
        df,
        p_value: dist.sf(statistic),
    })
}

/// Across-replication means for one batch and arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchArmMean {
    pub batch: u32,
    pub arm: usize,
    pub mean_assigned: f64,
    pub mean_clicked: f64,
    pub mean_pa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub label: String,
    pub policy: AllocationPolicy,
    pub mean_reward: f64,
    pub se_reward: f64,
    pub mean_regret: f64,
    pub se_regret: f64,
    /// How often each arm had the largest final PA.
    pub favored_histogram: Vec<u64>,
    pub favored_uniformity: Option<ChiSquare>,
    /// Share of replications whose largest final PA exceeds the threshold.
    pub frac_max_pa_above: f64,
    /// Assignments per arm summed over replications.
    pub assigned_per_arm: Vec<u64>,
    pub batch_arm: Vec<BatchArmMean>,
    /// Per-replication cumulative reward, in replication order.
    pub rewards: Vec<f64>,
}

/// Challenger minus baseline cumulative reward, paired by replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub baseline: String,
    pub challenger: String,
    pub mean_diff: f64,
    pub se_diff: f64,
    pub z: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub replications: usize,
    pub favor_threshold: f64,
    pub policies: Vec<PolicySummary>,
    /// Every policy after the first against the first.
    pub comparisons: Vec<PairedComparison>,
}

struct RunStats {
    reward: f64,
    regret: f64,
    trajectory: Trajectory,
}

/// Replicate every policy `replications` times against `env`.
///
/// Replication `r` uses seed `derive_seed(seed, r)` for every policy, so the
/// policies face the same participants with the same potential outcomes.
/// Replications run in parallel and are reduced in index order.
pub fn run_campaign(env: &Environment, cfg: &CampaignConfig) -> Result<CampaignSummary> {
    if cfg.replications == 0 {
        return Err(Error::invalid("replications must be at least 1"));
    }
    if cfg.policies.is_empty() {
        return Err(Error::invalid("at least one policy is required"));
    }
    let configs: Vec<ExperimentConfig> = cfg
        .policies
        .iter()
        .map(|p| {
            let mut c = ExperimentConfig::with_arms("campaign", env.k(), p.policy);
            c.prior = cfg.prior;
            c.batches_planned = cfg.batch_sizes.len() as u32;
            c.validate().map(|_| c)
        })
        .collect::<Result<_>>()?;

    let runs: Vec<Vec<RunStats>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let seed = rng::derive_seed(cfg.seed, r as u64);
            configs
                .iter()
                .map(|c| {
                    let trajectory = simulate_run(env, c, &cfg.batch_sizes, seed, cfg.pa_draws)?;
                    Ok(RunStats {
                        reward: trajectory.total_clicked() as f64,
                        regret: cumulative_regret(&trajectory, env)?,
                        trajectory,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let policies: Vec<PolicySummary> = cfg
        .policies
        .iter()
        .enumerate()
        .map(|(i, spec)| summarize(spec, runs.iter().map(|r| &r[i]), env.k(), cfg))
        .collect::<Result<_>>()?;

    let comparisons = policies
        .iter()
        .skip(1)
        .map(|ch| paired(&policies[0], ch))
        .collect();

    Ok(CampaignSummary {
        replications: cfg.replications,
        favor_threshold: cfg.favor_threshold,
        policies,
        comparisons,
    })
}

fn summarize<'a>(
    spec: &PolicySpec,
    runs: impl Iterator<Item = &'a RunStats>,
    k: usize,
    cfg: &CampaignConfig,
) -> Result<PolicySummary> {
    let runs: Vec<&RunStats> = runs.collect();
    let n = runs.len() as f64;
    let rewards: Vec<f64> = runs.iter().map(|r| r.reward).collect();
    let regrets: Vec<f64> = runs.iter().map(|r| r.regret).collect();
    let (mean_reward, se_reward) = mean_se(&rewards);
    let (mean_regret, se_regret) = mean_se(&regrets);

    let mut favored_histogram = vec![0u64; k];
    let mut above = 0usize;
    let mut assigned_per_arm = vec![0u64; k];
    let batches = cfg.batch_sizes.len();
    let mut sums = vec![(0.0, 0.0, 0.0); batches * k];
    for run in &runs {
        let t = &run.trajectory;
        if let Some(pa) = t.final_pa() {
            let fav = crate::ProbOptimal { probs: pa, draws: cfg.pa_draws };
            favored_histogram[fav.favored().zero_based()] += 1;
            if fav.max() > cfg.favor_threshold {
                above += 1;
            }
        }
        for (acc, a) in assigned_per_arm.iter_mut().zip(t.total_assigned()) {
            *acc += a;
        }
        for (b, row) in t.batches.iter().enumerate() {
            for (i, arm) in row.arms.iter().enumerate() {
                let s = &mut sums[b * k + i];
                s.0 += arm.assigned() as f64;
                s.1 += arm.clicked() as f64;
                s.2 += arm.pa;
            }
        }
    }
    let batch_arm = sums
        .iter()
        .enumerate()
        .map(|(idx, s)| BatchArmMean {
            batch: (idx / k) as u32 + 1,
            arm: idx % k + 1,
            mean_assigned: s.0 / n,
            mean_clicked: s.1 / n,
            mean_pa: s.2 / n,
        })
        .collect();

    Ok(PolicySummary {
        label: spec.label.clone(),
        policy: spec.policy,
        mean_reward,
        se_reward,
        mean_regret,
        se_regret,
        favored_uniformity: chi_square_uniform(&favored_histogram).ok(),
        favored_histogram,
        frac_max_pa_above: above as f64 / n,
        assigned_per_arm,
        batch_arm,
        rewards,
    })
}

/// Mean and standard error; the error is 0 for a single value.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn paired(base: &PolicySummary, ch: &PolicySummary) -> PairedComparison {
    let diffs: Vec<f64> = ch.rewards.iter().zip(&base.rewards).map(|(c, b)| c - b).collect();
    let (mean_diff, se_diff) = mean_se(&diffs);
    let zp = z_test(mean_diff, se_diff).ok();
    PairedComparison {
        baseline: base.label.clone(),
        challenger: ch.label.clone(),
        mean_diff,
        se_diff,
        z: zp.map(|(z, _)| z),
        p_value: zp.map(|(_, p)| p),
    }
}

impl CampaignSummary {
    pub fn policy(&self, label: &str) -> Option<&PolicySummary> {
        self.policies.iter().find(|p| p.label == label)
    }

    /// One row per policy, batch and arm of across-replication means.
    pub fn write_rows_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["policy", "batch", "arm", "mean_assigned", "mean_clicked", "mean_pa"])?;
        for p in &self.policies {
            for r in &p.batch_arm {
                out.write_record([
                    p.label.clone(),
                    r.batch.to_string(),
                    r.arm.to_string(),
                    format!("{:.6}", r.mean_assigned),
                    format!("{:.6}", r.mean_clicked),
                    format!("{:.6}", r.mean_pa),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// One row per policy. The favoured-arm histogram is `;`-joined.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "policy",
            "replications",
            "mean_reward",
            "se_reward",
            "mean_regret",
            "se_regret",
            "favor_threshold",
            "frac_max_pa_above",
            "favored_histogram",
            "favored_chi2_p",
            "reward_diff_vs_baseline",
            "reward_diff_p",
        ])?;
        for (i, p) in self.policies.iter().enumerate() {
            let cmp = i.checked_sub(1).and_then(|j| self.comparisons.get(j));
            out.write_record([
                p.label.clone(),
                self.replications.to_string(),
                format!("{:.6}", p.mean_reward),
                format!("{:.6}", p.se_reward),
                format!("{:.6}", p.mean_regret),
                format!("{:.6}", p.se_regret),
                self.favor_threshold.to_string(),
                format!("{:.6}", p.frac_max_pa_above),
                p.favored_histogram.iter().map(u64::to_string).collect::<Vec<_>>().join(";"),
                p.favored_uniformity.map_or_else(String::new, |c| format!("{:.6}", c.p_value)),
                cmp.map_or_else(String::new, |c| format!("{:.6}", c.mean_diff)),
                cmp.and_then(|c| c.p_value).map_or_else(String::new, |p| format!("{p:.6}")),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

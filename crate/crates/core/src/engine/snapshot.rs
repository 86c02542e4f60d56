use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{ArmCounts, AssignmentRecord, ExperimentConfig, ExperimentState, Status};
use crate::{rng, BetaParams, Error, Result};

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

/// Durable, self-describing record of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub status: Status,
    pub batch_index: u32,
    pub posteriors: Vec<BetaParams>,
    pub counts: Vec<ArmCounts>,
    pub rng: RngCursor,
    pub posterior_history: Vec<Vec<BetaParams>>,
    pub records: Vec<AssignmentRecord>,
}

/// Position of an experiment's ChaCha8 stream. `word_pos` is a decimal
/// string because it is a 128-bit counter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngCursor {
    pub seed: u64,
    pub word_pos: String,
}

impl Snapshot {
    pub(super) fn capture(s: &ExperimentState) -> Self {
        Snapshot {
            format_version: SNAPSHOT_FORMAT_VERSION,
            config: s.config.clone(),
            status: s.status,
            batch_index: s.batch_index,
            posteriors: s.posteriors.clone(),
            counts: s.counts.clone(),
            rng: RngCursor {
                seed: s.seed,
                word_pos: s.rng.get_word_pos().to_string(),
            },
            posterior_history: s.posterior_history.clone(),
            records: s.records.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("snapshot serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Snapshot(e.to_string()))
    }

    /// Rebuild the state, checking every invariant the engine maintains.
    pub(super) fn into_state(self) -> Result<ExperimentState> {
        let bad = |msg: String| Err(Error::Snapshot(msg));
        if self.format_version != SNAPSHOT_FORMAT_VERSION {
            return bad(format!(
                "unsupported format_version {} (expected {SNAPSHOT_FORMAT_VERSION})",
                self.format_version
            ));
        }
        self.config
            .validate()
            .map_err(|e| Error::Snapshot(format!("config: {e}")))?;
        let cfg = &self.config;
        let k = cfg.k();
        if self.posteriors.len() != k || self.counts.len() != k {
            return bad(format!("expected {k} posteriors and count rows"));
        }
        for p in self.posteriors.iter().chain(self.posterior_history.iter().flatten()) {
            BetaParams::new(p.alpha(), p.beta()).map_err(|e| Error::Snapshot(e.to_string()))?;
        }
        if self.batch_index > cfg.batches_planned {
            return bad("batch_index exceeds batches_planned".into());
        }
        let expected_status = if self.batch_index == cfg.batches_planned {
            Status::Closed
        } else {
            Status::Open
        };
        if self.status != expected_status
            && !(self.status == Status::BatchPending && expected_status == Status::Open)
        {
            return bad(format!(
                "status {:?} inconsistent with batch {}/{}",
                self.status, self.batch_index, cfg.batches_planned
            ));
        }
        if self.posterior_history.len() != self.batch_index as usize
            || self.posterior_history.iter().any(|h| h.len() != k)
        {
            return bad("posterior history does not match closed batches".into());
        }

        let mut assigned = HashMap::with_capacity(self.records.len());
        let mut tally = vec![ArmCounts::default(); k];
        let mut last_batch = 0;
        for (i, r) in self.records.iter().enumerate() {
            if r.arm.get() == 0 || r.arm.get() > k {
                return bad(format!("record {i}: arm {} out of range", r.arm));
            }
            if r.batch_index < last_batch {
                return bad(format!("record {i}: batches out of order"));
            }
            last_batch = r.batch_index;
            let pending = self.status == Status::BatchPending && r.batch_index == self.batch_index;
            match (pending, r.reward) {
                (true, None) => {}
                (false, Some(reward)) if r.batch_index < self.batch_index => {
                    tally[r.arm.zero_based()].cell_mut(r.source).add(reward)
                }
                _ => return bad(format!("record {i}: reward/batch inconsistent with status")),
            }
            if assigned.insert(r.participant_id.clone(), i).is_some() {
                return bad(format!("duplicate participant `{}`", r.participant_id));
            }
        }
        if tally != self.counts {
            return bad("counts disagree with assignment records".into());
        }
        for (arm, (post, c)) in self.posteriors.iter().zip(&self.counts).enumerate() {
            let seen = c.visible(&cfg.policy);
            let expect = cfg.prior.batch_fold(seen.clicked, seen.failures());
            if !close(post.alpha(), expect.alpha()) || !close(post.beta(), expect.beta()) {
                return bad(format!(
                    "arm {}: posterior {post} disagrees with prior plus counts ({expect})",
                    arm + 1
                ));
            }
        }
        let word_pos: u128 = self
            .rng
            .word_pos
            .parse()
            .map_err(|_| Error::Snapshot(format!("bad rng word_pos `{}`", self.rng.word_pos)))?;
        let mut stream = rng::stream(self.rng.seed);
        stream.set_word_pos(word_pos);

        Ok(ExperimentState {
            config: self.config,
            seed: self.rng.seed,
            rng: stream,
            posteriors: self.posteriors,
            counts: self.counts,
            batch_index: self.batch_index,
            status: self.status,
            records: self.records,
            posterior_history: self.posterior_history,
            assigned,
        })
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

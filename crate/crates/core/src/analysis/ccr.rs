use serde::Serialize;

use crate::engine::AssignmentRecord;
use crate::{Error, Result};

/// Cumulative click rate per batch and arm. `None` marks an arm with no
/// assignments so far.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CcrTable {
    /// `rows[batch][arm]`.
    pub rows: Vec<Vec<Option<f64>>>,
}

impl CcrTable {
    pub fn get(&self, batch: usize, arm: usize) -> Option<f64> {
        self.rows.get(batch).and_then(|r| r.get(arm)).copied().flatten()
    }
}

fn resolved(records: &[AssignmentRecord]) -> Result<()> {
    let missing = records.iter().filter(|r| r.reward.is_none()).count();
    if missing > 0 {
        return Err(Error::UnresolvedRewards(missing));
    }
    Ok(())
}

/// Clicks over assignments accumulated through each batch, for `k` arms.
pub fn cumulative_click_rate(records: &[AssignmentRecord], k: usize) -> Result<CcrTable> {
    resolved(records)?;
    let batches = records.iter().map(|r| r.batch_index as usize + 1).max().unwrap_or(0);
    let mut per_batch = vec![vec![(0u64, 0u64); k]; batches];
    for r in records {
        let arm = r.arm.zero_based();
        if arm >= k {
            return Err(Error::invalid(format!("record arm {} exceeds {k} arms", r.arm)));
        }
        let cell = &mut per_batch[r.batch_index as usize][arm];
        cell.0 += 1;
        cell.1 += u64::from(r.reward.expect("checked").as_u8());
    }
    let mut acc = vec![(0u64, 0u64); k];
    let rows = per_batch
        .into_iter()
        .map(|batch| {
            acc.iter_mut()
                .zip(batch)
                .map(|(a, (n, c))| {
                    a.0 += n;
                    a.1 += c;
                    (a.0 > 0).then(|| a.1 as f64 / a.0 as f64)
                })
                .collect()
        })
        .collect();
    Ok(CcrTable { rows })
}

/// Clicks over all records; `None` for an empty slice.
pub fn overall_click_rate(records: &[AssignmentRecord]) -> Result<Option<f64>> {
    resolved(records)?;
    if records.is_empty() {
        return Ok(None);
    }
    let clicks: u64 = records.iter().map(|r| u64::from(r.reward.expect("checked").as_u8())).sum();
    Ok(Some(clicks as f64 / records.len() as f64))
}

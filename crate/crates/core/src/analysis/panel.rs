use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ols::{least_squares, Design};
use super::z_test;
use crate::engine::AssignmentRecord;
use crate::{AllocationSource, ArmId, Error, Result, Scalar};

/// One participant-week observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelRow {
    pub participant: String,
    pub week: String,
    pub arm: ArmId,
    pub clicked: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelSpec {
    pub week_effects: bool,
    pub participant_effects: bool,
}

/// Which assignment sources become regression rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SourceFilter {
    /// Only uniformly assigned participants.
    #[default]
    UniformOnly,
    All,
}

/// Rows for one week from an experiment's resolved assignment records.
pub fn panel_rows_from_records(
    week: &str,
    records: &[AssignmentRecord],
    filter: SourceFilter,
) -> Result<Vec<PanelRow>> {
    records
        .iter()
        .filter(|r| filter == SourceFilter::All || r.source == AllocationSource::UniformArm)
        .map(|r| {
            let reward = r.reward.ok_or(Error::UnresolvedRewards(1))?;
            Ok(PanelRow {
                participant: r.participant_id.clone(),
                week: week.to_string(),
                arm: r.arm,
                clicked: reward.is_success(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionResult<T> {
    pub names: Vec<String>,
    pub estimates: Vec<T>,
    pub standard_errors: Vec<T>,
    pub z_stats: Vec<T>,
    pub p_values: Vec<T>,
    pub n_observations: usize,
    pub residual_df: usize,
    /// Participant groups absorbed by demeaning (0 without participant effects).
    pub absorbed_groups: usize,
    pub reference_arm: ArmId,
    pub spec: PanelSpec,
}

/// One named coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficient<T> {
    pub estimate: T,
    pub standard_error: T,
    pub z: T,
    pub p_value: T,
}

impl<T: Scalar> RegressionResult<T> {
    pub fn coefficient(&self, name: &str) -> Option<Coefficient<T>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(Coefficient {
            estimate: self.estimates[i],
            standard_error: self.standard_errors[i],
            z: self.z_stats[i],
            p_value: self.p_values[i],
        })
    }

    /// Names of the arm indicator coefficients.
    pub fn arm_names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str).filter(|n| n.starts_with("arm_"))
    }

    /// Aligned plain-text report with significance stars (`*` p<0.05, `**` p<0.01).
    pub fn to_text(&self) -> String {
        let width = self.names.iter().map(String::len).max().unwrap_or(0).max(9);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>10}  {:>10}  {:>8}  {:>8}",
            "term", "estimate", "std.err", "z", "p"
        );
        for i in 0..self.names.len() {
            let p = self.p_values[i].as_f64();
            let stars = if p < 0.01 {
                "**"
            } else if p < 0.05 {
                "*"
            } else {
                ""
            };
            let _ = writeln!(
                out,
                "{:<width$}  {:>10.4}  {:>10.4}  {:>8.3}  {:>8.4}{}",
                self.names[i],
                self.estimates[i].as_f64(),
                self.standard_errors[i].as_f64(),
                self.z_stats[i].as_f64(),
                p,
                stars
            );
        }
        let yes = |b: bool| if b { "yes" } else { "no" };
        let _ = writeln!(out, "week effects:        {}", yes(self.spec.week_effects));
        let _ = writeln!(out, "participant effects: {}", yes(self.spec.participant_effects));
        let _ = writeln!(out, "reference arm:       {}", self.reference_arm);
        let _ = writeln!(out, "observations:        {}", self.n_observations);
        let _ = writeln!(out, "residual df:         {}", self.residual_df);
        out
    }
}

/// Linear probability model of `clicked` on arm indicators, with optional
/// week indicators and participant effects absorbed by the within
/// transformation.
///
/// The lowest arm present is the reference category, as is the first week in
/// lexical order. An intercept is reported only without participant effects.
/// Residual degrees of freedom subtract the number of absorbed participants.
pub fn fit_panel_ols<T: Scalar>(rows: &[PanelRow], spec: PanelSpec) -> Result<RegressionResult<T>> {
    if rows.is_empty() {
        return Err(Error::invalid("no observations"));
    }
    let arms: BTreeSet<ArmId> = rows.iter().map(|r| r.arm).collect();
    let weeks: BTreeSet<&str> = rows.iter().map(|r| r.week.as_str()).collect();
    let reference_arm = *arms.iter().next().expect("non-empty");
    let n = rows.len();

    let mut names = Vec::new();
    let mut columns: Vec<Vec<T>> = Vec::new();
    if !spec.participant_effects {
        names.push("intercept".to_string());
        columns.push(vec![T::one(); n]);
    }
    for &arm in arms.iter().skip(1) {
        names.push(format!("arm_{arm}"));
        columns.push(rows.iter().map(|r| indicator(r.arm == arm)).collect());
    }
    if spec.week_effects {
        for &week in weeks.iter().skip(1) {
            names.push(format!("week_{week}"));
            columns.push(rows.iter().map(|r| indicator(r.week == week)).collect());
        }
    }
    if columns.is_empty() {
        return Err(Error::invalid(
            "no regressors: a single arm with participant effects leaves nothing to estimate",
        ));
    }
    let mut y: Vec<T> = rows.iter().map(|r| indicator(r.clicked)).collect();

    let mut absorbed = 0;
    if spec.participant_effects {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in rows.iter().enumerate() {
            groups.entry(r.participant.as_str()).or_default().push(i);
        }
        if groups.values().all(|g| g.len() < 2) {
            return Err(Error::invalid(
                "participant effects need at least one participant observed more than once",
            ));
        }
        absorbed = groups.len();
        for members in groups.values() {
            demean(&mut y, members);
            for col in &mut columns {
                demean(col, members);
            }
        }
    }

    let p = columns.len();
    let residual_df = n
        .checked_sub(p + absorbed)
        .filter(|&df| df > 0)
        .ok_or_else(|| {
            Error::invalid(format!(
                "{n} observations cannot identify {p} coefficients and {absorbed} absorbed effects"
            ))
        })?;

    let design = Design { names, n, columns };
    let fit = least_squares(&design, &y)?;
    let sigma2 = fit.rss / T::from_count(residual_df as u64);

    let mut standard_errors = Vec::with_capacity(p);
    let mut z_stats = Vec::with_capacity(p);
    let mut p_values = Vec::with_capacity(p);
    for (&b, &d) in fit.beta.iter().zip(&fit.xtx_inv_diag) {
        let se = (sigma2 * d).sqrt();
        let (z, pv) = match z_test(b, se) {
            Ok(zp) => zp,
            // Perfect fit: the limit of the test as the error vanishes.
            Err(_) if b == T::zero() => (T::zero(), T::one()),
            Err(_) => (b.signum() * T::infinity(), T::zero()),
        };
        standard_errors.push(se);
        z_stats.push(z);
        p_values.push(pv);
    }

    Ok(RegressionResult {
        names: design.names,
        estimates: fit.beta,
        standard_errors,
        z_stats,
        p_values,
        n_observations: n,
        residual_df,
        absorbed_groups: absorbed,
        reference_arm,
        spec,
    })
}

fn indicator<T: Scalar>(b: bool) -> T {
    if b {
        T::one()
    } else {
        T::zero()
    }
}

fn demean<T: Scalar>(v: &mut [T], members: &[usize]) {
    let sum = members.iter().fold(T::zero(), |acc, &i| acc + v[i]);
    let mean = sum / T::from_count(members.len() as u64);
    for &i in members {
        v[i] = v[i] - mean;
    }
}

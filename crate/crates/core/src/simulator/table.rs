//! CCR/PA tables with the highest probability of assignment highlighted.

use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::{ArmId, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRow {
    pub batch: String,
    pub ccr: Vec<Option<f64>>,
    pub pa: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureGroup {
    pub name: String,
    pub rows: Vec<FixtureRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableFixture {
    pub groups: Vec<FixtureGroup>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TableStyle {
    /// Pipe table, highlight as `**x**`.
    #[default]
    Markdown,
    /// `tabular` body, highlight as `\textbf{x}`.
    Latex,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Highlight {
    pub group: String,
    pub batch: String,
    pub arm: ArmId,
    pub pa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenderedTable {
    pub text: String,
    pub highlights: Vec<Highlight>,
}

/// Long-format CSV row: `group,batch,arm,ccr,pa` (empty `ccr` = absent).
#[derive(Debug, Deserialize)]
struct LongRow {
    group: String,
    batch: String,
    arm: usize,
    ccr: Option<f64>,
    pa: f64,
}

impl TableFixture {
    /// Parse the long format, keeping group and batch order of first
    /// appearance. Arms must be listed `1..=K` within each batch.
    pub fn from_csv<R: Read>(r: R) -> Result<Self> {
        let mut groups: Vec<FixtureGroup> = Vec::new();
        for (line, rec) in csv::Reader::from_reader(r).deserialize::<LongRow>().enumerate() {
            let rec = rec.map_err(|e| Error::Malformed(format!("fixture row {}: {e}", line + 1)))?;
            if groups.last().map(|g| g.name != rec.group).unwrap_or(true) {
                groups.push(FixtureGroup {
                    name: rec.group.clone(),
                    rows: Vec::new(),
                });
            }
            let group = groups.last_mut().expect("pushed");
            if group.rows.last().map(|b| b.batch != rec.batch).unwrap_or(true) {
                group.rows.push(FixtureRow {
                    batch: rec.batch.clone(),
                    ccr: Vec::new(),
                    pa: Vec::new(),
                });
            }
            let row = group.rows.last_mut().expect("pushed");
            if rec.arm != row.pa.len() + 1 {
                return Err(Error::Malformed(format!(
                    "{} / {}: expected arm {}, found {}",
                    rec.group,
                    rec.batch,
                    row.pa.len() + 1,
                    rec.arm
                )));
            }
            row.ccr.push(rec.ccr);
            row.pa.push(rec.pa);
        }
        let fixture = TableFixture { groups };
        fixture.validate()?;
        Ok(fixture)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Malformed(m));
        if self.groups.is_empty() || self.groups.iter().any(|g| g.rows.is_empty()) {
            return bad("fixture has no rows".into());
        }
        let k = self.groups[0].rows[0].pa.len();
        if k < 2 {
            return bad(format!("fixture needs at least 2 arms, found {k}"));
        }
        for g in &self.groups {
            for r in &g.rows {
                let at = format!("{} / {}", g.name, r.batch);
                if r.pa.len() != k || r.ccr.len() != k {
                    return bad(format!("{at}: expected {k} arms"));
                }
                if r.pa.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return bad(format!("{at}: PA outside [0, 1]"));
                }
                if r.ccr.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
                    return bad(format!("{at}: CCR outside [0, 1]"));
                }
                // Published values are rounded to three decimals.
                let sum: f64 = r.pa.iter().sum();
                if (sum - 1.0).abs() > 0.01 {
                    return bad(format!("{at}: PA sums to {sum:.4}"));
                }
            }
        }
        Ok(())
    }
}

/// Render every row, highlighting the largest PA (lowest arm on ties).
pub fn replay_table(fixture: &TableFixture, style: TableStyle) -> Result<RenderedTable> {
    fixture.validate()?;
    let k = fixture.groups[0].rows[0].pa.len();
    let mark = |s: String, on: bool| match (on, style) {
        (false, _) => s,
        (true, TableStyle::Markdown) => format!("**{s}**"),
        (true, TableStyle::Latex) => format!("\\textbf{{{s}}}"),
    };
    let mut text = String::new();
    let mut highlights = Vec::new();

    match style {
        TableStyle::Markdown => {
            let mut head = String::from("| Group | Batch |");
            let mut rule = String::from("|---|---|");
            for a in 1..=k {
                let _ = write!(head, " Arm {a} CCR | Arm {a} PA |");
                rule.push_str("---:|---:|");
            }
            let _ = writeln!(text, "{head}\n{rule}");
        }
        TableStyle::Latex => {
            let heads: Vec<String> = (1..=k).map(|a| format!("Arm {a} CCR & Arm {a} PA")).collect();
            let _ = writeln!(text, "Group & Batch & {} \\\\\n\\hline", heads.join(" & "));
        }
    }

    for g in &fixture.groups {
        for r in &g.rows {
            let best = first_max(&r.pa);
            highlights.push(Highlight {
                group: g.name.clone(),
                batch: r.batch.clone(),
                arm: ArmId::new(best + 1, k)?,
                pa: r.pa[best],
            });
            let cells: Vec<String> = (0..k)
                .flat_map(|i| {
                    let ccr = r.ccr[i].map_or_else(|| "-".to_string(), |c| format!("{c:.3}"));
                    [ccr, mark(format!("{:.3}", r.pa[i]), i == best)]
                })
                .collect();
            match style {
                TableStyle::Markdown => {
                    let _ = writeln!(text, "| {} | {} | {} |", g.name, r.batch, cells.join(" | "));
                }
                TableStyle::Latex => {
                    let _ = writeln!(text, "{} & {} & {} \\\\", g.name, r.batch, cells.join(" & "));
                }
            }
        }
    }
    Ok(RenderedTable { text, highlights })
}

fn first_max(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Published weekly CCR/PA values: two weeks of the 0.5-hybrid followed by
/// one week of plain Thompson Sampling, four daily batches each.
pub fn published_table() -> TableFixture {
    type Row = ([f64; 4], [f64; 4]);
    const WEEKS: [(&str, [Row; 4]); 3] = [
        (
            "Week1-eps[0.5]-TS",
            [
                ([0.200, 0.277, 0.212, 0.167], [0.117, 0.659, 0.177, 0.047]),
                ([0.219, 0.22, 0.149, 0.152], [0.466, 0.443, 0.040, 0.052]),
                ([0.206, 0.209, 0.137, 0.163], [0.434, 0.452, 0.017, 0.097]),
                ([0.163, 0.205, 0.161, 0.162], [0.077, 0.697, 0.104, 0.122]),
            ],
        ),
        (
            "Week2-eps[0.5]-TS",
            [
                ([0.213, 0.086, 0.246, 0.300], [0.116, 0.000, 0.225, 0.659]),
                ([0.198, 0.14, 0.244, 0.266], [0.082, 0.004, 0.311, 0.603]),
                ([0.197, 0.186, 0.261, 0.235], [0.065, 0.041, 0.666, 0.229]),
                ([0.194, 0.209, 0.249, 0.240], [0.052, 0.109, 0.505, 0.334]),
            ],
        ),
        (
            "Week3-TS",
            [
                ([0.231, 0.153, 0.22, 0.157], [0.477, 0.056, 0.389, 0.078]),
                ([0.233, 0.137, 0.135, 0.120], [0.926, 0.030, 0.033, 0.011]),
                ([0.183, 0.129, 0.133, 0.174], [0.510, 0.039, 0.070, 0.381]),
                ([0.181, 0.152, 0.144, 0.181], [0.405, 0.086, 0.076, 0.433]),
            ],
        ),
    ];
    TableFixture {
        groups: WEEKS
            .iter()
            .map(|(name, rows)| FixtureGroup {
                name: name.to_string(),
                rows: rows
                    .iter()
                    .enumerate()
                    .map(|(b, (ccr, pa))| FixtureRow {
                        batch: format!("Batch {}", b + 1),
                        ccr: ccr.iter().map(|&c| Some(c)).collect(),
                        pa: pa.to_vec(),
                    })
                    .collect(),
            })
            .collect(),
    }
}

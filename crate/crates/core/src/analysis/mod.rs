//! Click-rate summaries and the fixed-effects panel regression used to test
//! for arm differences in uniformly assigned data.
//!
//! The regression is a linear probability model: OLS of the binary click on
//! arm indicators (first arm present is the reference), optional week
//! indicators, and optional participant effects absorbed by demeaning.
//! Standard errors are the classical homoskedastic ones.

mod ccr;
mod normal;
mod ols;
mod panel;

pub use ccr::{cumulative_click_rate, overall_click_rate, CcrTable};
pub use normal::{normal_cdf, z_test};
pub use panel::{fit_panel_ols, panel_rows_from_records, PanelRow, PanelSpec, RegressionResult, SourceFilter};

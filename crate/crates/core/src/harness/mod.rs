//! Experiment grids, sweeps, result files and the spectral-gap report.

pub mod config;
pub mod select;
pub mod sweep;

pub use config::{parse_config, ExperimentGrid, DEFAULT_T_LIST, SEED_ENV};
pub use select::{aggregate_median_t, best_t_per_seed, select_best_t, BestT, SelectionMetric};
pub use sweep::{
    parse_results_csv, results_csv, run_cell, run_sweep, summarize, summary_csv, trajectory_csv, write_atomic,
    CellFailure, ResultRow, SweepOutcome, RESULTS_HEADER, SUMMARY_HEADER, TRAJECTORY_HEADER,
};

use crate::error::Result;
use crate::numerics::RngStream;
use crate::topology::{spectral_gap_report, BaseGraph, MixingPolicy};

pub const RHO_REPORT_HEADER: &str = "p,lambda2,rho_sq_hat,stderr,one_minus_rho";

/// Spectral-gap diagnostics as CSV, one row per `p`.
pub fn rho_report(
    graph: &BaseGraph,
    policy: MixingPolicy,
    p_list: &[f64],
    n_samples: usize,
    rng: &RngStream,
) -> Result<String> {
    let report = spectral_gap_report(graph, policy, p_list, n_samples, rng)?;
    let mut out = String::from(RHO_REPORT_HEADER);
    out.push('\n');
    for r in &report.rows {
        let cols = [r.p, r.lambda2, r.rho_sq_hat, r.stderr, r.one_minus_rho].map(sweep::fmt_float);
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    Ok(out)
}

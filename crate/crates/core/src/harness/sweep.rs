//! Grid execution and CSV persistence.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, io_error, Error, Result};
use crate::harness::config::ExperimentGrid;
use crate::metrics::RoundRecord;
use crate::protocol::{run_training, MethodVariant, RunConfig, Trajectory};

pub const RESULTS_HEADER: &str =
    "method,p,T,seed,final_mean_client_loss,final_F_avg,min_running_avg_grad_norm,mean_late_cross_norm,rho_hat";

pub const TRAJECTORY_HEADER: &str = "round,phase,delta_A_sq,delta_B_sq,cross_norm,decomposition_residual,bound_slack,F_avg_model,grad_norm_sq,mean_client_loss,mean_local_loss,rho_realized";

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// One completed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: MethodVariant,
    pub p: f64,
    #[serde(rename = "T")]
    pub t: u64,
    pub seed: u64,
    pub final_mean_client_loss: f64,
    #[serde(rename = "final_F_avg")]
    pub final_f_avg: f64,
    /// `min_t (1/(t+1)) Σ_{s≤t} ‖∇F(θ̄^s)‖²` over recorded rounds.
    pub min_running_avg_grad_norm: f64,
    /// Mean `‖C‖_F` over the late window.
    pub mean_late_cross_norm: f64,
    /// `sqrt(mean_t ‖W_t − J‖₂²)` over the run.
    pub rho_hat: f64,
}

impl ResultRow {
    pub fn from_trajectory<S: crate::Scalar>(traj: &Trajectory<S>) -> Result<Self> {
        let cfg = &traj.config;
        let last = traj.final_record();
        let late = traj.late_records();
        let row = Self {
            method: cfg.method,
            p: cfg.topology.p,
            t: cfg.t_interval,
            seed: cfg.root_seed,
            final_mean_client_loss: last.mean_client_loss,
            final_f_avg: last.f_avg_model,
            min_running_avg_grad_norm: min_running_average(traj.records.iter().map(|r| r.grad_norm_sq)),
            mean_late_cross_norm: late.iter().map(|r| r.snapshot.cross_norm).sum::<f64>() / late.len() as f64,
            rho_hat: (traj.records.iter().map(|r| r.rho_realized.powi(2)).sum::<f64>() / traj.records.len() as f64)
                .sqrt(),
        };
        if !row.values().iter().all(|x| x.is_finite()) {
            return Err(Error::Diverged { round: last.round });
        }
        Ok(row)
    }

    fn values(&self) -> [f64; 5] {
        [
            self.final_mean_client_loss,
            self.final_f_avg,
            self.min_running_avg_grad_norm,
            self.mean_late_cross_norm,
            self.rho_hat,
        ]
    }

    pub fn to_csv_line(&self) -> String {
        let mut line = format!("{},{},{},{}", self.method, fmt_float(self.p), self.t, self.seed);
        for v in self.values() {
            line.push(',');
            line.push_str(&fmt_float(v));
        }
        line
    }
}

/// Smallest running average of a sequence; `+inf` for an empty one.
pub fn min_running_average(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut best = f64::INFINITY;
    for (k, x) in xs.into_iter().enumerate() {
        sum += x;
        best = best.min(sum / (k + 1) as f64);
    }
    best
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

/// Parses a results file, insisting on the exact header.
pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let header = text.lines().next().unwrap_or_default();
    if header != RESULTS_HEADER {
        return Err(Error::Parse(format!(
            "results header must be '{RESULTS_HEADER}', found '{header}'"
        )));
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn trajectory_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for r in records {
        let s = &r.snapshot;
        let _ = write!(out, "{},{}", r.round, r.phase);
        for v in [
            s.delta_a_sq,
            s.delta_b_sq,
            s.cross_norm,
            s.decomposition_residual,
            s.bound_slack,
            r.f_avg_model,
            r.grad_norm_sq,
            r.mean_client_loss,
            r.mean_local_loss,
            r.rho_realized,
        ] {
            out.push(',');
            out.push_str(&fmt_float(v));
        }
        out.push('\n');
    }
    out
}

/// Per-cell mean and sample standard deviation across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub method: MethodVariant,
    pub p: f64,
    pub t: u64,
    pub n_seeds: usize,
    /// `(mean, std)` for each value column of [`ResultRow`], in header order.
    pub stats: [(f64, f64); 5],
}

pub const SUMMARY_HEADER: &str = "method,p,T,n_seeds,final_mean_client_loss_mean,final_mean_client_loss_std,final_F_avg_mean,final_F_avg_std,min_running_avg_grad_norm_mean,min_running_avg_grad_norm_std,mean_late_cross_norm_mean,mean_late_cross_norm_std,rho_hat_mean,rho_hat_std";

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups rows by `(method, p, T)` in first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Vec<CellSummary> {
    let mut keys: Vec<(MethodVariant, f64, u64)> = Vec::new();
    for r in rows {
        let k = (r.method, r.p, r.t);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, p, t)| {
            let group: Vec<&ResultRow> = rows.iter().filter(|r| (r.method, r.p, r.t) == (method, p, t)).collect();
            let stats = std::array::from_fn(|i| mean_std(&group.iter().map(|r| r.values()[i]).collect::<Vec<_>>()));
            CellSummary {
                method,
                p,
                t,
                n_seeds: group.len(),
                stats,
            }
        })
        .collect()
}

pub fn summary_csv(cells: &[CellSummary]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for c in cells {
        let _ = write!(out, "{},{},{},{}", c.method, fmt_float(c.p), c.t, c.n_seeds);
        for (m, s) in c.stats {
            let _ = write!(out, ",{},{}", fmt_float(m), fmt_float(s));
        }
        out.push('\n');
    }
    out
}

/// Writes `contents` to a temporary sibling and renames it into place, so readers
/// never observe a partially written file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| invalid_config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, contents).map_err(|e| io_error(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_error(path, e))
}

pub fn trajectory_file_name(cfg: &RunConfig) -> String {
    format!(
        "traj_{}_p{}_T{}_seed{}.csv",
        cfg.method, cfg.topology.p, cfg.t_interval, cfg.root_seed
    )
}

/// Runs one cell and, if `out_dir` is given, writes its trajectory CSV.
pub fn run_cell(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<ResultRow> {
    let traj = run_training::<f64>(cfg)?;
    let row = ResultRow::from_trajectory(&traj)?;
    if let Some(dir) = out_dir {
        write_atomic(
            &dir.join("trajectories").join(trajectory_file_name(cfg)),
            &trajectory_csv(&traj.records),
        )?;
    }
    Ok(row)
}

#[derive(Debug)]
pub struct CellFailure {
    pub config: RunConfig,
    pub error: Error,
}

#[derive(Debug)]
pub struct SweepOutcome {
    /// Completed cells in grid order (method, p, T, seed).
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
}

impl SweepOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Cells in grid order: methods outermost, then `p`, `T`, seed.
pub fn grid_cells(grid: &ExperimentGrid) -> Vec<RunConfig> {
    let mut cells = Vec::with_capacity(grid.n_cells());
    for &method in &grid.method_list {
        for &p in &grid.p_list {
            for &t in &grid.t_list {
                for &seed in &grid.seeds {
                    cells.push(grid.cell_config(method, p, t, seed));
                }
            }
        }
    }
    cells
}

/// Executes every cell on up to `jobs` threads. A failing cell is recorded and
/// the sweep continues. With `out_dir`, writes `results.csv`, `summary.csv`,
/// `resolved_config.json` and one trajectory per cell.
pub fn run_sweep(grid: &ExperimentGrid, out_dir: Option<&Path>, jobs: usize) -> Result<SweepOutcome> {
    grid.validate()?;
    let cells = grid_cells(grid);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| invalid_config(format!("cannot start {jobs} worker threads: {e}")))?;
    let results: Vec<Result<ResultRow>> = pool.install(|| cells.par_iter().map(|cfg| run_cell(cfg, out_dir)).collect());

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (cfg, res) in cells.into_iter().zip(results) {
        match res {
            Ok(row) => rows.push(row),
            Err(error) => failures.push(CellFailure { config: cfg, error }),
        }
    }
    if let Some(dir) = out_dir {
        write_atomic(&dir.join("results.csv"), &results_csv(&rows))?;
        write_atomic(&dir.join("summary.csv"), &summary_csv(&summarize(&rows)))?;
        write_atomic(&dir.join("resolved_config.json"), &grid.to_json())?;
    }
    Ok(SweepOutcome { rows, failures })
}

/// Output directory from the command line, falling back to the document's `output_dir`.
pub fn resolve_out_dir(cli: Option<PathBuf>, grid: &ExperimentGrid) -> Option<PathBuf> {
    cli.or_else(|| grid.output_dir.clone())
}

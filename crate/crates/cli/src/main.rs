//! Command-line front end for the simulator.
//!
//! Exit status: 0 on success, 1 when a run or sweep cell fails, 2 on a
//! configuration or usage error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tadlora_core::error::io_error;
use tadlora_core::harness::{
    aggregate_median_t, parse_config, parse_results_csv, rho_report, run_cell, run_sweep, select_best_t,
    sweep::{fmt_float, resolve_out_dir},
    ExperimentGrid, SelectionMetric, RESULTS_HEADER, SEED_ENV,
};
use tadlora_core::numerics::RngStream;
use tadlora_core::protocol::{estimate_phi, PolicyKind, TopologyConfig};
use tadlora_core::topology::GraphKind;
use tadlora_core::{Error, Result};

#[derive(Parser)]
#[command(name = "tadlora", version, about = "Decentralized alternating LoRA simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the base configuration once and print its result row.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Directory for the trajectory CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every cell of the grid and write results, summary and trajectories.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the document's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Pick the best switching interval per method and p; several files are
    /// treated as separate tasks and aggregated by median.
    BestT {
        #[arg(long, required = true, num_args = 1..)]
        results: Vec<PathBuf>,
        #[arg(long, default_value = "final_mean_client_loss")]
        metric: String,
    },
    /// Estimate the mixing contraction for each activation probability.
    RhoReport {
        #[arg(long, value_enum, default_value_t = GraphArg::Complete)]
        graph: GraphArg,
        #[arg(long, default_value_t = 10)]
        m: usize,
        /// Comma-separated activation probabilities.
        #[arg(long, value_delimiter = ',', default_value = "0.02,0.05,0.1,0.2,0.5,1.0")]
        p: Vec<f64>,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = PolicyArg::LaplacianStep)]
        policy: PolicyArg,
    },
    /// Centralized gap between interval T and T=1 at convergence.
    Phi {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        t_list: Vec<u64>,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 200_000)]
        max_rounds: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphArg {
    Complete,
    Ring,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    LaplacianStep,
    PairwiseGossip,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn load_grid(path: &Path) -> Result<ExperimentGrid> {
    let text = read(path).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    parse_config(&text, env_seed()?)
}

fn cmd_run(config: &Path, out: Option<PathBuf>) -> Result<ExitCode> {
    let grid = load_grid(config)?;
    let row = run_cell(&grid.base, out.as_deref())?;
    println!("{RESULTS_HEADER}\n{}", row.to_csv_line());
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(config: &Path, out: Option<PathBuf>, jobs: usize) -> Result<ExitCode> {
    let grid = load_grid(config)?;
    let out_dir = resolve_out_dir(out, &grid)
        .ok_or_else(|| Error::InvalidConfig("sweep needs --out or output_dir in the config".into()))?;
    let outcome = run_sweep(&grid, Some(&out_dir), jobs)?;
    for f in &outcome.failures {
        eprintln!(
            "cell failed: method={} p={} T={} seed={}: {}",
            f.config.method, f.config.topology.p, f.config.t_interval, f.config.root_seed, f.error
        );
    }
    eprintln!(
        "{} of {} cells completed; results in {}",
        outcome.rows.len(),
        grid.n_cells(),
        out_dir.display()
    );
    Ok(if outcome.all_succeeded() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_best_t(results: &[PathBuf], metric: &str) -> Result<ExitCode> {
    let metric: SelectionMetric = metric.parse()?;
    let mut per_task = Vec::new();
    for path in results {
        let rows =
            parse_results_csv(&read(path)?).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        per_task.push(select_best_t(&rows, metric)?);
    }
    // Keys in first-seen order across tasks.
    let mut keys = Vec::new();
    for best in per_task.iter().flatten() {
        if !keys.contains(&(best.method, best.p)) {
            keys.push((best.method, best.p));
        }
    }
    let mut out = String::from("method,p,T_star_median,T_star_mean,n_tasks,T_star_per_task\n");
    for (method, p) in keys {
        let ts: Vec<f64> = per_task
            .iter()
            .filter_map(|task| task.iter().find(|b| b.method == method && b.p == p))
            .map(|b| b.t_star as f64)
            .collect();
        let (median, mean) = aggregate_median_t(&ts)?;
        let list: Vec<String> = ts.iter().map(|t| t.to_string()).collect();
        let _ = writeln!(
            out,
            "{method},{},{median},{mean},{},{}",
            fmt_float(p),
            ts.len(),
            list.join(";")
        );
    }
    print!("{out}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_rho_report(
    graph: GraphArg,
    m: usize,
    p: &[f64],
    samples: usize,
    seed: u64,
    policy: PolicyArg,
) -> Result<ExitCode> {
    let topo = TopologyConfig {
        kind: match graph {
            GraphArg::Complete => GraphKind::Complete,
            GraphArg::Ring => GraphKind::Ring,
        },
        policy: match policy {
            PolicyArg::LaplacianStep => PolicyKind::LaplacianStep,
            PolicyArg::PairwiseGossip => PolicyKind::PairwiseGossip,
        },
        ..TopologyConfig::default()
    };
    let g = topo.graph(m)?;
    let policy = topo.policy(&g)?;
    print!("{}", rho_report(&g, policy, p, samples, &RngStream::new(seed))?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_phi(config: &Path, t_list: &[u64], tol: f64, max_rounds: u64) -> Result<ExitCode> {
    let grid = load_grid(config)?;
    let mut out = String::from("T,phi,tol,F_end_T,F_end_1,rounds_T,rounds_1\n");
    for &t in t_list {
        let e = estimate_phi::<f64>(&grid.base, t, tol, max_rounds)?;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.t_interval,
            fmt_float(e.phi),
            fmt_float(e.tol),
            fmt_float(e.f_end_t),
            fmt_float(e.f_end_1),
            e.rounds_t,
            e.rounds_1
        );
    }
    print!("{out}");
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run { config, out } => cmd_run(&config, out),
        Command::Sweep { config, out, jobs } => cmd_sweep(&config, out, jobs),
        Command::BestT { results, metric } => cmd_best_t(&results, &metric),
        Command::RhoReport {
            graph,
            m,
            p,
            samples,
            seed,
            policy,
        } => cmd_rho_report(graph, m, &p, samples, seed, policy),
        Command::Phi {
            config,
            t_list,
            tol,
            max_rounds,
        } => cmd_phi(&config, &t_list, tol, max_rounds),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}

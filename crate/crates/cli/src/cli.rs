//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 solver or check failure, 2 usage or config
//! error, 3 infeasible problem.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use crate::config::{ExperimentConfig, MethodKind};
use crate::experiments::{
    estimate_norm_from_file, run_bound, run_comparison, run_estimate_norm, run_example1, run_example2,
    run_shrinkage_check,
};
use crate::output::{ensure_dir, summary, write_json, write_mask, write_surface, write_table};
use crate::{CliError, Result};

/// Largest growth of C or fall of B tolerated by `shrinkage-check`.
pub const SHRINKAGE_TOL: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "rkhs-envelope", version, about = "Optimal robust bounds for functions in an RKHS ball")]
pub struct Cli {
    /// Flat TOML experiment config; missing keys take the Hénon defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Bounding method; repeat to run several. Overrides the config list.
    #[arg(long = "method", global = true, value_enum)]
    pub methods: Vec<MethodKind>,
    /// Worker threads for query-level parallelism (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Envelope at the points of a query CSV for a dataset CSV.
    Bound {
        /// Rows `x1,…,xn,y`; repeated inputs carry several outputs.
        #[arg(long)]
        data: PathBuf,
        /// Rows `x1,…,xn`.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        delta_bar: Option<f64>,
        #[arg(long)]
        lengthscale: Option<f64>,
    },
    /// Lower estimate of the RKHS norm from noise-free samples.
    EstimateNorm {
        /// Dataset CSV; defaults to samples of the configured ground truth.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        lengthscale: Option<f64>,
    },
    /// Envelope surfaces and average distances on the query lattice.
    Example1,
    /// Constrained minimization with the upper bound as constraint.
    Example2,
    /// Width tables of optimal, sub-optimal and GP bounds.
    Compare,
    /// Checks that added samples never widen the envelope.
    ShrinkageCheck,
}

/// Parses `args` (program name first), runs the command, prints the JSON
/// summary and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json value serializes"));
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if !cli.methods.is_empty() {
        cfg.methods = cli.methods.clone();
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<Value> {
    let cfg = load_config(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli, cfg))
}

fn finish<T: Serialize>(out: &Path, command: &str, payload: &T) -> Result<Value> {
    let v = summary(command, payload);
    write_json(&out.join("metrics.json"), &v)?;
    Ok(v)
}

fn dispatch(cli: &Cli, mut cfg: ExperimentConfig) -> Result<Value> {
    let out = &cli.out_dir;
    match &cli.command {
        Command::Bound {
            data,
            queries,
            gamma,
            delta_bar,
            lengthscale,
        } => {
            cfg.gamma = gamma.unwrap_or(cfg.gamma);
            cfg.delta_bar = delta_bar.unwrap_or(cfg.delta_bar);
            cfg.lengthscale = lengthscale.unwrap_or(cfg.lengthscale);
            let ds = rkhs_envelope::load_csv(data, &Default::default())?;
            let pts = crate::output::read_points(queries)?;
            let method = cli.methods.first().copied().unwrap_or(MethodKind::Optimal);
            let (p, s) = run_bound(&cfg, ds, method, &pts)?;
            ensure_dir(out)?;
            let path = out.join("envelope.csv");
            write_surface(&path, &s)?;
            Ok(summary(
                "bound",
                &serde_json::json!({
                    "method": method.as_str(),
                    "queries": pts.len(),
                    "sites": p.dataset().sites(),
                    "jitter": p.factorization().jitter,
                    "min_norm": p.min_norm().norm,
                    "nonoptimal": s.bounds.iter().filter(|b| !b.optimal).count(),
                    "envelope": path,
                }),
            ))
        }
        Command::EstimateNorm { data, lengthscale } => {
            cfg.lengthscale = lengthscale.unwrap_or(cfg.lengthscale);
            let est = match data {
                Some(path) => estimate_norm_from_file(&cfg, path)?,
                None => run_estimate_norm(&cfg)?,
            };
            Ok(summary("estimate-norm", &est))
        }
        Command::Example1 => {
            let rep = run_example1(&cfg)?;
            ensure_dir(out)?;
            for s in &rep.surfaces {
                write_surface(&out.join(format!("surface_{}.csv", s.method.as_str())), s)?;
            }
            finish(out, "example1", &rep)
        }
        Command::Compare => {
            let table = run_comparison(&cfg)?;
            ensure_dir(out)?;
            write_table(&out.join("table.csv"), &table)?;
            let violations = table.ordering_violations();
            finish(
                out,
                "compare",
                &serde_json::json!({ "rows": table.rows, "ordering_violations": violations }),
            )
        }
        Command::Example2 => {
            let rep = run_example2(&cfg)?;
            ensure_dir(out)?;
            for r in &rep.runs {
                if let Some(mask) = &r.mask {
                    write_mask(&out.join(format!("feasible_mask_{}.csv", r.count)), mask)?;
                }
            }
            finish(out, "example2", &rep)
        }
        Command::ShrinkageCheck => {
            let rep = run_shrinkage_check(&cfg)?;
            ensure_dir(out)?;
            let v = finish(out, "shrinkage-check", &rep)?;
            if rep.max_violation > SHRINKAGE_TOL {
                return Err(CliError::CheckFailed(format!(
                    "envelope grew by {:.3e} after adding a sample",
                    rep.max_violation
                )));
            }
            Ok(v)
        }
    }
}

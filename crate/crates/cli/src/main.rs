//! Command-line driver for subpopulation-shift experiments. One archival
//! config file (TOML or JSON) describes the whole experiment; the
//! subcommands run its stages in order:
//!
//! ```text
//! subshift synth    --config exp.toml [--out DIR]             write the synthetic CSV
//! subshift run      --config exp.toml [--out DIR] [--resume]  partition + training sweeps
//! subshift select   --config exp.toml [--out DIR]             winners per (family, criterion)
//! subshift evaluate --config exp.toml [--out DIR]             bootstrap CIs on the test split
//! subshift report   [--config exp.toml] [--out DIR]           render metric reports to CSV
//! ```
//!
//! Every command is deterministic given the config file: all seeds are
//! explicit, and a copy of the config is written into the output directory.
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
//! error, 4 sweep finished but some training runs failed.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::exit;
use subshift_core::dataset::NUM_FOLDS;
use subshift_core::experiment::{
    cmd_evaluate, cmd_report, cmd_run, cmd_select, cmd_synth, SweepStats,
};
use subshift_core::{Error, ExperimentConfig, Result};

#[derive(Parser)]
#[command(
    name = "subshift",
    version,
    about = "Train and evaluate binary classifiers under subpopulation shift"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (TOML or JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the sweep and the bootstrap (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic dataset plus its provenance record.
    Synth(Common),
    /// Partition the data and run every configured training sweep.
    Run {
        #[command(flatten)]
        common: Common,
        /// Continue a sweep in an output directory that already has results.
        #[arg(long)]
        resume: bool,
    },
    /// Pick winners per (family, criterion) from the completed sweeps.
    Select(Common),
    /// Bootstrap-evaluate every selected model on the test split.
    Evaluate(Common),
    /// Render every JSON metric report in the output directory to CSV.
    Report {
        /// Experiment config file (TOML or JSON); used for its `out_dir`.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; overrides the config's `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    match dispatch(Cli::parse()) {
        Ok(failures) if failures > 0 => {
            eprintln!("{failures} training runs failed; see the store indexes under the output directory");
            exit(4);
        }
        Ok(_) => {}
        Err(e) => {
            eprintln!("error: {e}");
            exit(e.exit_code());
        }
    }
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let config = ExperimentConfig::load(&common.config)?;
    let out = config.resolve_out(common.out.as_deref())?;
    install_pool(common.jobs)?;
    Ok((config, out))
}

/// Cap rayon's global pool when `--jobs` is given. Parallelism never affects
/// results; it only schedules independent, deterministically-seeded tasks.
fn install_pool(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::config("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config(format!("could not build the worker pool: {e}")))?;
    }
    Ok(())
}

fn print_stats(name: &str, stats: &SweepStats) {
    println!(
        "{name}: {}/{} runs recorded, {} failed",
        stats.records,
        stats.configs * NUM_FOLDS,
        stats.failures
    );
}

/// Run one subcommand; the Ok value is the count of failed sweep runs.
fn dispatch(cli: Cli) -> Result<usize> {
    match cli.command {
        Command::Synth(common) => {
            let (config, out) = load(&common)?;
            let path = cmd_synth::<f64>(&config, &out)?;
            println!("wrote {}", path.display());
            Ok(0)
        }
        Command::Run { common, resume } => {
            let (config, out) = load(&common)?;
            if !resume && out.join("stores").exists() {
                return Err(Error::config(format!(
                    "output directory {} already contains sweep results; pass --resume to continue",
                    out.display()
                )));
            }
            let summary = cmd_run::<f64>(&config, &out)?;
            print_stats("erm sweep", &summary.erm);
            if let Some(dro) = &summary.dro {
                print_stats("robust sweep", dro);
            }
            if let Some(groups) = &summary.stratified {
                for (g, stats) in groups.iter().enumerate() {
                    print_stats(&format!("stratified sweep, group {g}"), stats);
                }
            }
            Ok(summary.total_failures)
        }
        Command::Select(common) => {
            let (config, out) = load(&common)?;
            let artifacts = cmd_select::<f64>(&config, &out)?;
            println!(
                "baseline (pooled ERM by mean loss): config {}",
                artifacts.baseline.winner
            );
            for (family, criterion, report) in &artifacts.by_family {
                println!("{family} / {criterion}: config {}", report.winner);
            }
            if let Some(winners) = &artifacts.stratified {
                for (g, w) in winners.iter().enumerate() {
                    println!("stratified group {g}: config {}", w.config_id);
                }
            }
            Ok(0)
        }
        Command::Evaluate(common) => {
            let (config, out) = load(&common)?;
            let reports = cmd_evaluate::<f64>(&config, &out)?;
            for r in &reports {
                println!("evaluated {} ({} rows)", r.method, r.rows.len());
            }
            println!("reports written under {}", out.join("reports").display());
            Ok(0)
        }
        Command::Report { config, out } => {
            let dir = match (config, out) {
                (_, Some(out)) => out,
                (Some(path), None) => ExperimentConfig::load(path)?.resolve_out(None)?,
                (None, None) => {
                    return Err(Error::config(
                        "report needs --out, or --config whose file sets out_dir",
                    ))
                }
            };
            for path in cmd_report(&dir)? {
                println!("{}", path.display());
            }
            Ok(0)
        }
    }
}

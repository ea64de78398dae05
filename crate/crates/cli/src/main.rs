//! `fair`: run α sweeps, assemble Pareto fronts, export instance weights,
//! draw plots and run the diagnostic suite.

mod config;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use config::Config;
use fair_core::data::synth::write_fixtures;
use fair_core::fairmodels::Family;
use fair_core::harness::check::{run_checks, CheckOptions, WeightLimitOptions};
use fair_core::harness::plot::plot_dir;
use fair_core::harness::weights::export_weights;
use fair_core::harness::{self, load_inputs, stored_runs, SweepSpec};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fair", version, about = "Fair adversarial instance reweighting experiments")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Experiment config (JSON, unknown keys rejected). Flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset CSV.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Schema JSON of the dataset.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Model families, comma separated (e.g. fair-scalar,fad).
    #[arg(long, value_delimiter = ',')]
    family: Vec<Family>,
    /// Alpha grid, comma separated; replaces every selected family's grid.
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    /// Seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Concurrent runs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset and print its shape, splits and hashes.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Write the bundled fixtures into this directory instead.
        #[arg(long, value_name = "DIR")]
        write_fixtures: Option<PathBuf>,
    },
    /// Train one (family, alpha, seed) run.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Train every (family, alpha, seed) run not already in the output directory.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Rebuild run tables and Pareto fronts from completed runs.
    Front {
        #[command(flatten)]
        common: Common,
    },
    /// Export instance weights of a FAIR family across its alpha grid.
    Weights {
        #[command(flatten)]
        common: Common,
        /// Instances listed for the first alpha with a weight above 0.99.
        #[arg(long, default_value_t = 10)]
        top_k: usize,
    },
    /// Draw SVG front scatters and alpha curves.
    Plot {
        #[command(flatten)]
        common: Common,
    },
    /// Gradient, estimator and weight-limit checks.
    Check {
        #[command(flatten)]
        common: Common,
        /// Draws per toy-estimator check.
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        /// Random initializations per architecture.
        #[arg(long, default_value_t = 20)]
        instances: usize,
        /// Also train FAIR-scalar on --dataset for this many epochs per run.
        #[arg(long)]
        epochs: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn resolve(common: &Common) -> Result<SweepSpec> {
    let config = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    config.into_spec(common)
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Ingest { common, write_fixtures: Some(dir) } => {
            if common.dataset.is_some() || common.config.is_some() {
                bail!("--write-fixtures takes no dataset");
            }
            write_fixtures(&dir).with_context(|| format!("writing fixtures to {}", dir.display()))?;
            println!("fixtures written to {}", dir.display());
        }
        Command::Ingest { common, write_fixtures: None } => {
            let spec = resolve(&common)?;
            let inputs = load_inputs(&spec.dataset, &spec.schema, spec.kind, spec.split_seed)?;
            println!("{}", serde_json::to_string_pretty(&inputs.info)?);
            println!("architecture row: {}", inputs.kind);
        }
        Command::Train { common } => {
            if common.family.len() > 1 || common.alpha.len() > 1 || common.seed.len() > 1 {
                bail!("train takes one family, one alpha and one seed; use sweep for grids");
            }
            let mut spec = resolve(&common)?;
            if spec.families.len() != 1 {
                bail!("train needs exactly one --family");
            }
            let family = spec.families[0];
            let grid = spec.grid(family);
            if grid.len() != 1 || spec.seeds.len() != 1 {
                bail!("train needs exactly one --alpha and one --seed");
            }
            spec.grids.insert(family, grid);
            let inputs = load_inputs(&spec.dataset, &spec.schema, spec.kind, spec.split_seed)?;
            let hash = harness::plan(&spec, &inputs)?[0].hash.clone();
            let summary = harness::sweep_with(&spec, &inputs)?;
            if let Some(f) = summary.failures.first() {
                bail!("{}: {}", f.run, f.error);
            }
            let run = stored_runs(&spec.out)?
                .into_iter()
                .find(|r| r.manifest.run_hash == hash)
                .context("trained run not found")?;
            println!("run {}", run.dir.display());
            println!("{}", serde_json::to_string_pretty(&run.test)?);
        }
        Command::Sweep { common } => {
            let spec = resolve(&common)?;
            let summary = harness::sweep(&spec)?;
            println!(
                "{} runs planned, {} trained, {} already complete, {} failed",
                summary.planned,
                summary.trained,
                summary.cached,
                summary.failures.len()
            );
            for f in &summary.failures {
                println!("FAILED {}: {}", f.run, f.error);
            }
            if !summary.failures.is_empty() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Front { common } => {
            let out = out_dir(&common)?;
            for fronts in harness::assemble(&out)? {
                println!("{} vs AUC_y, overall front:", fronts.metric.name().to_uppercase());
                for p in &fronts.overall {
                    println!(
                        "  {:<15} alpha={:<8} seed={} auc={:.3} {}={:.3}",
                        p.family.name(),
                        p.alpha,
                        p.seed,
                        p.test.auc_y.unwrap_or(f64::NAN),
                        fronts.metric.name(),
                        p.test.metric(fronts.metric).unwrap_or(f64::NAN)
                    );
                }
            }
            println!("tables written to {}", out.display());
        }
        Command::Weights { common, top_k } => {
            let out = out_dir(&common)?;
            let family = match common.family.as_slice() {
                [] => Family::FairScalar,
                [f] => *f,
                _ => bail!("weights takes one --family"),
            };
            let seeds = if common.seed.is_empty() { vec![0] } else { common.seed.clone() };
            for seed in seeds {
                let (report, path) = export_weights(&out, family, seed, top_k)?;
                println!("{}", path.display());
                for a in &report.alphas {
                    println!(
                        "  alpha={:<8} mean weight {:.3}, {} above 0.99, {} below 0.01",
                        a.alpha, a.mean_weight, a.above, a.below
                    );
                }
                for note in &report.notes {
                    println!("  {note}");
                }
            }
        }
        Command::Plot { common } => {
            let out = out_dir(&common)?;
            for path in plot_dir(&out)? {
                println!("{}", path.display());
            }
        }
        Command::Check { common, draws, instances, epochs } => {
            let mut opts = CheckOptions {
                seed: common.seed.first().copied().unwrap_or(0),
                draws,
                instances,
                jobs: common.jobs.unwrap_or(1),
                ..CheckOptions::default()
            };
            if let Some(epochs) = epochs {
                let spec = resolve(&common)?;
                let seeds = if common.seed.is_empty() { spec.seeds.clone() } else { common.seed.clone() };
                opts.weight_limits = Some(WeightLimitOptions {
                    inputs: load_inputs(&spec.dataset, &spec.schema, spec.kind, spec.split_seed)?,
                    seeds,
                    epochs,
                });
            }
            let results = run_checks(&opts)?;
            for r in &results {
                println!("{}", r.line());
            }
            if results.iter().any(|r| !r.passed) {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let out = match (&common.out, &common.config) {
        (Some(out), _) => out.clone(),
        (None, Some(path)) => Config::load(path)?.out.context("the config sets no output directory")?,
        (None, None) => bail!("--out is required"),
    };
    if !out.is_dir() {
        bail!("{} is not a sweep directory", out.display());
    }
    Ok(out)
}

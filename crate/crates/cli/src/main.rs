//! Batch command-line interface for multi-scale factor analysis.
//!
//! Subcommands cover the full pipeline: `simulate` draws a modular VAR(1)
//! panel with exact ground truth, `fit` estimates the factor model from a
//! panel and layout, `connectivity` and `test` summarize and test the
//! between-cluster or between-network dependence of a fit, and `bench` runs
//! the Monte-Carlo estimator comparison.
//!
//! Exit codes: 0 success, 2 validation failure, 3 numerical failure,
//! 4 i/o failure. Every command writes a `manifest.json` with input and
//! output digests; seeded commands rerun bit-for-bit from the same seed.

mod artifacts;
mod commands;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use msfa::{FactorSelection, Level};

#[derive(Parser)]
#[command(
    name = "msfa",
    version,
    about = "Multi-scale factor analysis of networked time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Cluster,
    Network,
}

impl From<LevelArg> for Level {
    fn from(value: LevelArg) -> Self {
        match value {
            LevelArg::Cluster => Level::Cluster,
            LevelArg::Network => Level::Network,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Bin,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a modular VAR(1) panel with exact ground-truth matrices.
    Simulate {
        /// Simulation spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        /// Number of retained samples.
        #[arg(long = "t-samples", short = 't')]
        t_samples: usize,
        /// Master seed; generated and printed when absent.
        #[arg(long)]
        seed: Option<u64>,
        /// Samples discarded before recording.
        #[arg(long, default_value_t = msfa::DEFAULT_BURN_IN)]
        burn_in: usize,
        /// Panel output format.
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the multi-scale factor model to a panel.
    Fit(FitArgs),
    /// RV dependence matrix of a previous fit.
    Connectivity {
        /// Directory produced by `msfa fit`.
        #[arg(long)]
        fit: PathBuf,
        #[arg(long, value_enum, default_value = "cluster")]
        level: LevelArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Standardized RV significance tests of a previous fit.
    Test {
        /// Directory produced by `msfa fit`.
        #[arg(long)]
        fit: PathBuf,
        #[arg(long, value_enum, default_value = "cluster")]
        level: LevelArg,
        /// Family significance level.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Override the Bonferroni divisor (defaults to the number of
        /// tested pairs).
        #[arg(long)]
        d_override: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte-Carlo estimator benchmark against simulated ground truth.
    Bench {
        /// Benchmark config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write per-replication raw errors.
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct FitArgs {
    /// Panel file (CSV, or raw binary with a .bin extension).
    #[arg(long)]
    panel: PathBuf,
    /// Layout file (JSON).
    #[arg(long)]
    layout: PathBuf,
    /// Variance-threshold factor selection with this fraction.
    #[arg(long, group = "selection")]
    tau: Option<f64>,
    /// Cap on the factor count when using --tau.
    #[arg(long, requires = "tau")]
    max_factors: Option<usize>,
    /// Fixed factor count for every cluster.
    #[arg(long, group = "selection")]
    fixed_m: Option<usize>,
    /// Penalized (BIC-style) factor-count selection.
    #[arg(long, group = "selection")]
    bic: bool,
    /// Candidate bound for --bic.
    #[arg(long, requires = "bic")]
    l_max: Option<usize>,
    /// Skip centering (the model assumes zero-mean signals).
    #[arg(long)]
    no_center: bool,
    /// Scale each node to unit variance after centering.
    #[arg(long)]
    standardize: bool,
    /// Refuse dense whole-network assembly above this node count.
    #[arg(long, default_value_t = msfa::DEFAULT_DENSE_CEILING)]
    dense_ceiling: usize,
    #[arg(long)]
    out: PathBuf,
}

impl FitArgs {
    fn selection(&self) -> Result<FactorSelection, String> {
        match (self.tau, self.fixed_m, self.bic) {
            (Some(tau), None, false) => Ok(FactorSelection::VarianceThreshold {
                tau,
                cap: self.max_factors,
            }),
            (None, Some(m), false) => Ok(FactorSelection::Fixed { m }),
            (None, None, true) => Ok(FactorSelection::Bic { l_max: self.l_max }),
            _ => Err("exactly one of --tau, --fixed-m, --bic is required".into()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            spec,
            t_samples,
            seed,
            burn_in,
            format,
            out,
        } => commands::cmd_simulate(
            &spec,
            t_samples,
            seed,
            burn_in,
            match format {
                FormatArg::Csv => commands::PanelFormat::Csv,
                FormatArg::Bin => commands::PanelFormat::Bin,
            },
            &out,
        ),
        Command::Fit(args) => match args.selection() {
            Ok(selection) => commands::cmd_fit(
                &args.panel,
                &args.layout,
                &commands::FitOptions {
                    selection,
                    center: !args.no_center,
                    standardize: args.standardize,
                    dense_ceiling: args.dense_ceiling,
                },
                &args.out,
            ),
            Err(message) => {
                eprintln!("error: {message}");
                return ExitCode::from(2);
            }
        },
        Command::Connectivity { fit, level, out } => {
            commands::cmd_connectivity(&fit, level.into(), &out)
        }
        Command::Test {
            fit,
            level,
            alpha,
            d_override,
            out,
        } => commands::cmd_test(&fit, level.into(), alpha, d_override, &out),
        Command::Bench {
            config,
            seed,
            raw,
            out,
        } => commands::cmd_bench(&config, seed, raw, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(artifacts::exit_code(&err) as u8)
        }
    }
}

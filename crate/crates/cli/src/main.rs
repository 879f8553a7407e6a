use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use etagap::{
    cmd_lemma31, cmd_report, cmd_spectrum, cmd_verify, parse_checks, parse_resolution,
    CommandOutcome, EXIT_USAGE,
};
use etagap_core::scenario::{Check, Overrides};

/// Eigenvalue gap estimates for (η,T)-divergence form operators.
#[derive(Parser)]
#[command(name = "etagap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble, solve and validate; write spectrum.csv.
    Spectrum {
        /// Config file path or `builtin:<name>`.
        config: String,
        #[command(flatten)]
        overrides: OverrideArgs,
        /// Output directory (default: the config's `output`, else etagap-out/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline with the selected checks.
    Verify {
        config: String,
        /// Comma-separated subset of gap,yang,cor32,lemma32,parseval.
        #[arg(long, value_parser = parse_check_list)]
        checks: Option<CheckList>,
        #[command(flatten)]
        overrides: OverrideArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Randomized check of the nondecreasing-sequence inequality.
    Lemma31 {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the suite (including counterexamples) as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify several configs (every builtin by default), one directory each.
    Report {
        configs: Vec<String>,
        #[command(flatten)]
        overrides: OverrideArgs,
        #[arg(long, default_value = "etagap-out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct OverrideArgs {
    /// Cells per axis: `128` for every axis or `128x64`.
    #[arg(long, value_parser = parse_resolution_arg)]
    resolution: Option<Resolution>,
    /// Number of eigenpairs.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    solve_tol: Option<f64>,
    #[arg(long)]
    ortho_tol: Option<f64>,
    #[arg(long)]
    multiplicity_rel_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl From<OverrideArgs> for Overrides {
    fn from(a: OverrideArgs) -> Self {
        Overrides {
            resolution: a.resolution.map(|r| r.0),
            k: a.k,
            solve_tol: a.solve_tol,
            ortho_tol: a.ortho_tol,
            multiplicity_rel_tol: a.multiplicity_rel_tol,
            seed: a.seed,
            checks: None,
        }
    }
}

#[derive(Clone)]
struct CheckList(Vec<Check>);

#[derive(Clone)]
struct Resolution(Vec<usize>);

fn parse_check_list(s: &str) -> Result<CheckList, String> {
    parse_checks(s).map(CheckList).map_err(|e| e.to_string())
}

fn parse_resolution_arg(s: &str) -> Result<Resolution, String> {
    parse_resolution(s).map(Resolution)
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("ETAGAP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("ETAGAP_THREADS must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    if let Err(e) = configure_threads() {
        log::error!("{e}");
        return ExitCode::from(EXIT_USAGE as u8);
    }
    let outcome: CommandOutcome = match cli.command {
        Command::Spectrum { config, overrides, out } => {
            cmd_spectrum(&config, &overrides.into(), out.as_deref())
        }
        Command::Verify { config, checks, overrides, out } => {
            cmd_verify(&config, checks.map(|c| c.0), &overrides.into(), out.as_deref())
        }
        Command::Lemma31 { trials, seed, out } => cmd_lemma31(trials, seed, out.as_deref()),
        Command::Report { configs, overrides, out } => cmd_report(&configs, &overrides.into(), &out),
    };
    for line in &outcome.summary {
        if outcome.exit_code == EXIT_USAGE {
            log::error!("{line}");
        } else {
            log::info!("{line}");
        }
    }
    ExitCode::from(outcome.exit_code as u8)
}

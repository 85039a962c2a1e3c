//! Batch experiment runner: certification, stability sweeps, classifier
//! sweeps, and tensor recovery, each writing records.jsonl, summary.csv,
//! and manifest.txt into the output directory.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use saddle_lab::config::{Experiment, Settings};
use saddle_lab::experiments::run_from_settings;

#[derive(Parser)]
#[command(
    name = "saddle-lab",
    about = "Strict-saddle certification and ERM-stability experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root random seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker-thread cap (defaults to the number of cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory for records.jsonl, summary.csv, manifest.txt.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Per-key override, repeatable: --set key=value.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate strict-saddle parameters for a PCA population objective and
    /// certify sampled points against them.
    Certify,
    /// Leave-one-out stability sweep for PCA, with rate, chain, and
    /// exclusion audits.
    StabilityPca,
    /// Leave-one-out stability sweep for single-component ICA.
    StabilityIca,
    /// Near-stationary branch classifier sweep over random gapped PCA
    /// matrices.
    NearStationary,
    /// Near-minimum lower-bound and balanced-saddle invariants for the
    /// exact ICA tensor.
    NearMinimum,
    /// Recover an ICA mixing matrix by tensor decomposition, exactly and
    /// from samples.
    RecoverIca,
}

impl Command {
    fn experiment(&self) -> Experiment {
        match self {
            Command::Certify => Experiment::Certify,
            Command::StabilityPca => Experiment::StabilityPca,
            Command::StabilityIca => Experiment::StabilityIca,
            Command::NearStationary => Experiment::NearStationary,
            Command::NearMinimum => Experiment::NearMinimum,
            Command::RecoverIca => Experiment::RecoverIca,
        }
    }
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, String> {
    raw.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| format!("--set expects key=value, got `{s}`"))
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: could not configure worker pool: {e}");
            return ExitCode::from(2);
        }
    }

    let overrides = match parse_overrides(&cli.set) {
        Ok(o) => o,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };

    let settings = match Settings::resolve(
        cli.command.experiment(),
        cli.config.as_deref(),
        cli.seed,
        &overrides,
    ) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    match run_from_settings(&settings, &cli.out) {
        Ok(checks) => {
            for c in &checks {
                println!(
                    "{}: {} ({})",
                    c.name,
                    if c.passed { "pass" } else { "FAIL" },
                    c.detail
                );
            }
            println!("wrote {}", cli.out.display());
            if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

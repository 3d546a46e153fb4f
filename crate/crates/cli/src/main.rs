//! `hypoharnack` command line: run and sweep verification campaigns.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hypoharnack::campaign::{run, sweep};
use hypoharnack::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "hypoharnack", version, about = "Numerical verification of supremum bounds and weak Harnack inequalities for kinetic equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the inner parallel loops.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory; the HYPOHARNACK_OUT environment variable takes precedence.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured campaign.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run the campaign once per value of a numeric config field.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted field path, e.g. `coefficients.Lambda` or `harnack.eta`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; may be empty.
        #[arg(long, allow_hyphen_values = true, default_value = "")]
        values: String,
    },
    /// Print the default configuration.
    PrintDefaults,
    /// Load and validate a configuration without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

const EXIT_FAILED: u8 = 1;
const EXIT_ERROR: u8 = 2;

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), String> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| e.to_string())?,
        None => ExperimentConfig::default().resolved(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.resolve();
    }
    cfg.validate().map_err(|e| e.to_string())?;
    let out = match std::env::var_os("HYPOHARNACK_OUT") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => common.out.clone().unwrap_or_else(|| cfg.output_dir.clone()),
    };
    if let Some(jobs) = common.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global().map_err(|e| e.to_string())?;
    }
    Ok((cfg, out))
}

fn parse_values(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<f64>().map_err(|e| format!("bad sweep value {p:?}: {e}")))
        .collect()
}

fn cmd_run(common: &Common) -> Result<bool, String> {
    let (cfg, out) = load(common)?;
    let outcome = run(&cfg, &out).map_err(|e| format!("{} campaign failed: {e}", cfg.campaign.name()))?;
    for (name, ok) in &outcome.predicates {
        println!("{} {name}", if *ok { "PASS" } else { "FAIL" });
    }
    println!("{} {} = {:?} ({})", outcome.campaign, cfg.campaign.headline(), outcome.headline, out.join("manifest.json").display());
    Ok(outcome.passed)
}

fn cmd_sweep(common: &Common, axis: &str, values: &str) -> Result<bool, String> {
    let (cfg, out) = load(common)?;
    let values = parse_values(values)?;
    let s = sweep(&cfg, axis, &values, &out).map_err(|e| e.to_string())?;
    for r in &s.rows {
        match (&r.statistic, &r.error) {
            (Some(x), _) => println!("{axis}={:?} {}={x:?} {}", r.value, s.statistic, if r.passed { "PASS" } else { "FAIL" }),
            (None, Some(e)) => println!("{axis}={:?} ERROR {e}", r.value),
            (None, None) => println!("{axis}={:?} FAIL", r.value),
        }
    }
    if let (Some(c), Some(m)) = (s.claimed, s.monotone) {
        println!("{:?} claimed: {}", c, if m { "holds" } else { "violated" });
    }
    println!("{}", Path::new(&out).join("sweep.csv").display());
    Ok(s.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common } => cmd_run(common),
        Command::Sweep { common, axis, values } => cmd_sweep(common, axis, values),
        Command::PrintDefaults => ExperimentConfig::default().to_toml_string().map(|s| {
            print!("{s}");
            true
        }).map_err(|e| e.to_string()),
        Command::ValidateConfig { config } => ExperimentConfig::load(config).map(|c| {
            println!("{}: valid {} configuration", config.display(), c.campaign.name());
            true
        }).map_err(|e| e.to_string()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

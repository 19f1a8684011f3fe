use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use nystrom_harness::experiments::{cv, fig1, fit, lemma, rank_ratio, rates, theorem};
use nystrom_harness::{Config, CsvTable, Result};

#[derive(Parser)]
#[command(name = "nystrom", version, about = "Column-sampling kernel ridge regression experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output CSV path; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a config value, e.g. `--set fig1.n=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Target column.
    #[arg(long)]
    target: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Relative approximation and prediction errors against the rank.
    Fig1,
    /// Optimal lambda, error and degrees of freedom against n, with fitted exponents.
    Rates,
    /// Sufficient rank over degrees of freedom along a lambda grid.
    RankRatio,
    /// Monte-Carlo check of the expected-error rank bound.
    VerifyTheorem,
    /// Monte-Carlo check of the subsampling tail bound.
    VerifyLemma,
    /// Fit a ridge model on a CSV dataset.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// Also write the fitted model here.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Cross-validate lambda on a CSV dataset.
    Cv {
        #[command(flatten)]
        data: DataArgs,
    },
}

fn load(common: &Common, data: Option<&DataArgs>) -> Result<Config> {
    let mut overrides = common.set.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(d) = data {
        if let Some(p) = &d.data {
            overrides.push(format!("data.path={}", toml::Value::String(p.display().to_string())));
        }
        if let Some(t) = &d.target {
            overrides.push(format!("data.target={}", toml::Value::String(t.clone())));
        }
    }
    let mut cfg = Config::load(common.config.as_deref(), &overrides)?;
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    Ok(cfg)
}

fn emit(table: &CsvTable, cfg: &Config) -> Result<()> {
    match &cfg.out {
        Some(path) => table.write_to(path),
        None => table.write(std::io::stdout().lock()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::Fig1 => {
            let cfg = load(common, None)?;
            emit(&fig1::run_fig1(&cfg)?, &cfg)
        }
        Command::Rates => {
            let cfg = load(common, None)?;
            emit(&rates::run_rate_check(&cfg)?.table, &cfg)
        }
        Command::RankRatio => {
            let cfg = load(common, None)?;
            emit(&rank_ratio::run_rank_ratio(&cfg)?.table, &cfg)
        }
        Command::VerifyTheorem => {
            let cfg = load(common, None)?;
            emit(&theorem::run_verify_theorem(&cfg)?.table, &cfg)
        }
        Command::VerifyLemma => {
            let cfg = load(common, None)?;
            emit(&lemma::run_verify_lemma(&cfg)?.table, &cfg)
        }
        Command::Fit { data, model } => {
            let cfg = load(common, Some(&data))?;
            let report = fit::run_fit(&cfg)?;
            if let Some(path) = model {
                report.fit.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))?;
            }
            emit(&report.table, &cfg)
        }
        Command::Cv { data } => {
            let cfg = load(common, Some(&data))?;
            emit(&cv::run_cv(&cfg)?.table, &cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

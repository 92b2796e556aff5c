//! The `ltpdpm` command line: simulate, prepare-basis, fit, diagnose,
//! predict, hotspot and score, driven by a TOML run configuration.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, configuration or missing input paths.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Module(#[from] ltpdpm::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Module(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ltpdpm", version = VERSION, about = "Low-rank Student-t process mixture model for gridded extremes")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set mcmc.n_iter=2000`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Default)]
pub struct TaskFlags {
    #[arg(long)]
    pub t0: Option<usize>,
    #[arg(long)]
    pub year: Option<i64>,
    #[arg(long)]
    pub week: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub u: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset and covariate from a known model.
    Simulate,
    /// Build the spline and EOF design matrices.
    PrepareBasis,
    /// Run the Gibbs sampler.
    Fit {
        /// Fit the Gaussian benchmark (K = 1, df pinned at 40).
        #[arg(long)]
        lgp: bool,
    },
    /// Convergence diagnostics of a sample store.
    Diagnose,
    /// Posterior predictive summaries at a target time.
    Predict(TaskFlags),
    /// Exceedance confidence region at a target time.
    Hotspot(TaskFlags),
    /// Chronological hold-out skill against the Gaussian benchmark.
    Score {
        /// Last training week.
        #[arg(long)]
        cut: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::PrepareBasis => "prepare-basis",
            Command::Fit { .. } => "fit",
            Command::Diagnose => "diagnose",
            Command::Predict(_) => "predict",
            Command::Hotspot(_) => "hotspot",
            Command::Score { .. } => "score",
        }
    }

    /// Dedicated flags as config overrides.
    fn overrides(&self) -> Vec<String> {
        let mut o = Vec::new();
        match self {
            Command::Fit { lgp: true } => o.push("model.lgp=true".to_string()),
            Command::Predict(f) | Command::Hotspot(f) => {
                let mut push = |k: &str, v: Option<String>| {
                    if let Some(v) = v {
                        o.push(format!("task.{k}={v}"));
                    }
                };
                push("t0", f.t0.map(|v| v.to_string()));
                push("year", f.year.map(|v| v.to_string()));
                push("week", f.week.map(|v| v.to_string()));
                // A threshold flag replaces whichever kind the config set.
                if f.u.is_some() || f.p.is_some() {
                    push("u", Some(String::new()));
                    push("p", Some(String::new()));
                }
                push("u", f.u.map(toml_float));
                push("p", f.p.map(toml_float));
                push("alpha", f.alpha.map(toml_float));
            }
            Command::Score { cut: Some(c) } => o.push(format!("task.cut={c}")),
            _ => {}
        }
        o
    }
}

fn toml_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(message) => {
            println!("{message}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<String, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut overrides = cli.set.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    overrides.extend(cli.command.overrides());
    let cfg = config::load(cli.config.as_deref(), &overrides)?;
    let base = match &cli.config {
        Some(p) => p.parent().map(PathBuf::from).unwrap_or_default(),
        None => PathBuf::new(),
    };
    let ctx = commands::Context::new(cfg, &base)?;
    commands::dispatch(&ctx, &cli.command)
}

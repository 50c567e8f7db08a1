use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use magclt::commands::{self, Command, Options, RunError};
use magclt::config::{parse_config, ConfigError, LoadedConfig};

/// Finite-volume experiments on random magnetic Schrödinger operators.
#[derive(Parser, Debug)]
#[command(name = "magclt", version)]
struct Cli {
    /// TOML scenario file; built-in defaults when absent.
    #[arg(long, global = true, env = "MAGCLT_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true, env = "MAGCLT_OUT")]
    out: Option<PathBuf>,
    #[arg(long, global = true, env = "MAGCLT_SEED")]
    seed: Option<u64>,
    /// Ensemble size per side length.
    #[arg(long, global = true, env = "MAGCLT_SAMPLES")]
    samples: Option<usize>,
    /// Continue from shards already present in the output directory.
    #[arg(long, global = true, env = "MAGCLT_RESUME")]
    resume: bool,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0, env = "MAGCLT_THREADS")]
    threads: usize,
    /// Stop after computing this many new samples (exit code 3 if unfinished).
    #[arg(long, global = true, env = "MAGCLT_BUDGET")]
    budget: Option<usize>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Sub {
    /// Fast invariant suite.
    Check,
    /// Trace ensembles and normalized variances.
    Ensemble,
    /// Normality of the fluctuations.
    Clt,
    /// Coupled Dirichlet and Neumann ensembles.
    BcCompare,
    /// Nested Monte Carlo estimate of the limiting variance.
    VarianceFormula,
    /// Interior trace gaps and resolvent block decay.
    Decay,
    /// Annuli decomposition residuals.
    Decompose,
    /// Volume-normalized mean traces.
    Lln,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Command {
        match s {
            Sub::Check => Command::Check,
            Sub::Ensemble => Command::Ensemble,
            Sub::Clt => Command::Clt,
            Sub::BcCompare => Command::BcCompare,
            Sub::VarianceFormula => Command::VarianceFormula,
            Sub::Decay => Command::Decay,
            Sub::Decompose => Command::Decompose,
            Sub::Lln => Command::Lln,
        }
    }
}

fn load(cli: &Cli) -> Result<LoadedConfig, RunError> {
    let mut loaded = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| ConfigError::Syntax(format!("cannot read {}: {e}", path.display())))?;
            parse_config(&text)?
        }
        None => LoadedConfig::defaults(),
    };
    if let Some(seed) = cli.seed {
        loaded.override_seed(seed);
    }
    if let Some(n) = cli.samples {
        loaded.override_samples(n)?;
    }
    Ok(loaded)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd: Command = cli.command.into();
    let result = load(&cli).and_then(|loaded| {
        if cli.threads > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
        }
        let opts = Options {
            out: commands::out_dir(cli.out.as_deref(), &loaded),
            resume: cli.resume,
            budget: cli.budget,
        };
        commands::run(cmd, &loaded, &opts).map(|stats| (opts, stats))
    });
    match result {
        Ok((opts, stats)) => {
            if cmd == Command::Check {
                for c in stats["checks"].as_array().into_iter().flatten() {
                    println!("pass {} ({})", c["name"].as_str().unwrap_or(""), c["detail"].as_str().unwrap_or(""));
                }
            }
            println!("{} finished; results in {}", cmd.name(), opts.out.join(cmd.name()).display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.summary(cmd.name()));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

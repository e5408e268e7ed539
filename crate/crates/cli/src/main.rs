use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use exit_spectrum::{render, run, CliError, Format, RunConfig};
use exit_spectrum_core::{McConfig, Scheme};

#[derive(Parser)]
#[command(name = "exit-spectrum", version, about = "Exit-time moments and Dirichlet eigenvalue bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured analysis and write a report.
    Run {
        config: PathBuf,
        /// Write the report here instead of the configured path or stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Run with a Monte Carlo cross-check.
    Mc {
        config: PathBuf,
        #[arg(long)]
        paths: usize,
        #[arg(long)]
        seed: u64,
        /// Time step for discretized schemes.
        #[arg(long, default_value_t = 1e-4)]
        dt: f64,
        /// Defaults to the natural scheme of the model.
        #[arg(long, value_parser = parse_scheme)]
        scheme: Option<Scheme>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Print bounds with the moment order and rates overridden.
    Bounds {
        config: PathBuf,
        #[arg(short = 'K')]
        k: Option<usize>,
        /// Exponential-moment rate; repeat for several.
        #[arg(long = "beta")]
        beta: Vec<f64>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown scheme {s:?}; use exact-jump, euler-maruyama or stable-increment"))
}

fn natural_scheme(cfg: &RunConfig) -> Scheme {
    match cfg.model {
        exit_spectrum::Model::Diffusion(_) => Scheme::EulerMaruyama,
        exit_spectrum::Model::Fractional(_) => Scheme::StableIncrement,
        _ => Scheme::ExactJump,
    }
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    let (mut cfg, out, format) = match cli.command {
        Command::Run { config, out, format } => {
            let cfg = RunConfig::load(&config)?;
            (cfg, out, format)
        }
        Command::Mc { config, paths, seed, dt, scheme, format } => {
            let mut cfg = RunConfig::load(&config)?;
            let scheme = scheme.unwrap_or_else(|| natural_scheme(&cfg));
            let kmax = cfg.analysis.k.min(4);
            cfg.analysis.mc = Some(McConfig::new(paths, seed, kmax, scheme, dt));
            (cfg, None, format)
        }
        Command::Bounds { config, k, beta, format } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(k) = k {
                cfg.analysis.k = k;
            }
            if !beta.is_empty() {
                cfg.analysis.betas = beta;
            }
            cfg.analysis.mc = None;
            (cfg, None, format)
        }
    };
    if let Some(f) = format {
        cfg.output.format = f;
    }
    if out.is_some() {
        cfg.output.path = out;
    }
    let report = run(&cfg)?;
    let text = render(&report, cfg.output.format)?;
    match &cfg.output.path {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    if !report.all_passed() {
        eprintln!("{} check(s) failed", report.failed.len());
    }
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error [{}]: {e}", e.module());
            ExitCode::from(2)
        }
    }
}

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use nullctl::harness::{self, Check, ExperimentConfig};
use nullctl::Error;

#[derive(Parser)]
#[command(
    name = "nullctl",
    version,
    about = "Penalized HUM null control on scenario trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file for the report or CSV; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Mesh, calculus, tree and duality property suite.
    Identities,
    /// Solve one penalized HUM problem.
    Hum,
    /// Fit observability constants on random terminal data.
    Observability,
    /// Sample Carleman ratios at the configured mesh and one refinement.
    Carleman,
    /// Spacing sweep with CSV output.
    Sweep,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidWeights { .. } | Error::RegimeRejected { .. } => 2,
        _ => 3,
    }
}

fn write_output(path: Option<&PathBuf>, text: &str) -> nullctl::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn json<T: Serialize>(value: &T) -> nullctl::Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn run(
    command: Command,
    cfg: &ExperimentConfig,
    out: Option<&PathBuf>,
) -> nullctl::Result<Vec<Check>> {
    match command {
        Command::Identities => {
            let checks = harness::run_identities(cfg)?;
            let mut text = String::new();
            for c in &checks {
                text.push_str(&c.line());
                text.push('\n');
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            text.push_str(&format!(
                "{} passed, {failed} failed\n",
                checks.len() - failed
            ));
            write_output(out, &text)?;
            Ok(checks)
        }
        Command::Hum => {
            let (summary, checks) = harness::run_hum(cfg)?;
            write_output(out, &json(&summary)?)?;
            Ok(checks)
        }
        Command::Observability => {
            let (summary, checks) = harness::run_observability(cfg)?;
            write_output(out, &json(&summary)?)?;
            Ok(checks)
        }
        Command::Carleman => {
            let (summary, checks) = harness::run_carleman(cfg)?;
            write_output(out, &json(&summary)?)?;
            Ok(checks)
        }
        Command::Sweep => {
            let rows = harness::h_sweep(cfg)?;
            match out {
                Some(p) => harness::emit_csv(&rows, p)?,
                None => harness::write_csv(&rows, std::io::stdout().lock())?,
            }
            Ok(harness::sweep_checks(&rows))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(cfg) => cfg,
            Err(e) => return report_error(&e),
        },
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Err(e) = cfg.validate() {
        return report_error(&e);
    }
    let out = cli.out.clone().or_else(|| cfg.output.clone());

    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot build thread pool: {e}");
            return ExitCode::from(3);
        }
    };
    match pool.install(|| run(cli.command, &cfg, out.as_ref())) {
        Ok(checks) => {
            let to_stderr = !matches!(cli.command, Command::Identities) || out.is_some();
            for c in &checks {
                if to_stderr {
                    eprintln!("{}", c.line());
                }
            }
            if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => report_error(&e),
    }
}

fn report_error(err: &Error) -> ExitCode {
    match err {
        Error::Config(lines) => {
            for line in lines {
                eprintln!("config error: {line}");
            }
        }
        Error::Convergence { history, .. } => {
            eprintln!("error: {err}");
            eprintln!("residual history: {history:?}");
        }
        _ => eprintln!("error: {err}"),
    }
    ExitCode::from(exit_code(err))
}

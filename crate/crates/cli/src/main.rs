//! `relhartree`: batch front-end for the solver and the verification suite.
//!
//! Exit status: 0 success, 2 invalid configuration or unmet precondition,
//! 3 solver non-convergence, 4 a verification check failed (artifacts are
//! still written), 1 I/O errors.

mod commands;
mod config;
mod describe;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{Ctx, Failure, OracleName, Outcome};
use crate::config::RunConfig;
use crate::output::Staging;

#[derive(Parser)]
#[command(name = "relhartree", version, about = "Spectral solver for pseudo-relativistic Hartree solitary waves")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; must not exist or be empty.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Size of the worker pool.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Mountain-pass solve at fixed lambda.
    Solve,
    /// Constrained minimization on {Q = 1}; lambda is an output.
    #[command(name = "minimize-on-M")]
    MinimizeOnM,
    /// Re-evaluate the identities and inequalities on a stored snapshot.
    Verify { snapshot: PathBuf },
    /// Nonexistence sweep; the optional spec `omega=a,b;lambda=c;p=zero,2.5`
    /// overrides the [sweep] axes.
    Sweep { grid_spec: Option<String> },
    /// Run one closed-form oracle.
    Oracle {
        #[arg(value_enum)]
        name: OracleName,
    },
    /// Print the resolved configuration and exit.
    Describe,
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Solve => "solve",
            Cmd::MinimizeOnM => "minimize-on-M",
            Cmd::Verify { .. } => "verify",
            Cmd::Sweep { .. } => "sweep",
            Cmd::Oracle { .. } => "oracle",
            Cmd::Describe => "describe",
        }
    }
}

fn fail(f: Failure) -> ExitCode {
    eprintln!("error: {}", f.message());
    ExitCode::from(f.exit_code() as u8)
}

fn run(cli: Cli) -> Result<Option<(Outcome, PathBuf)>, Failure> {
    let mut cfg = RunConfig::load(cli.config.as_deref()).map_err(|e| Failure::Config(e.0))?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = Some(o);
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Cmd::Sweep { grid_spec: Some(spec) } = &cli.cmd {
        cfg.sweep.apply_grid_spec(spec).map_err(|e| Failure::Config(e.0))?;
    }
    let base = cli
        .config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let res = cfg.resolve(&base).map_err(|e| Failure::Config(e.0))?;
    print!("{}", describe::describe(&cfg, &res, cli.cmd.name()));
    if let Cmd::Describe = cli.cmd {
        return Ok(None);
    }
    if matches!(cli.cmd, Cmd::Solve | Cmd::MinimizeOnM) {
        commands::require_bound_state(&res.params)?;
    }
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Config(format!("threads: {e}")))?;
    }
    let dest = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("relhartree-{}", cli.cmd.name())));
    let stage = Staging::new(&dest).map_err(Failure::Config)?;
    let ctx = Ctx { cfg, res, base };
    let outcome = match &cli.cmd {
        Cmd::Solve => commands::solve(&ctx, &stage)?,
        Cmd::MinimizeOnM => commands::minimize(&ctx, &stage)?,
        Cmd::Verify { snapshot } => commands::verify(&ctx, snapshot, &stage)?,
        Cmd::Sweep { .. } => commands::sweep(&ctx, &stage)?,
        Cmd::Oracle { name } => commands::oracle(&ctx, *name, &stage)?,
        Cmd::Describe => unreachable!(),
    };
    let dest = stage.publish()?;
    Ok(Some((outcome, dest)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some((outcome, dest))) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            println!("artifacts: {}", dest.display());
            match outcome.check_failure {
                Some(msg) => {
                    eprintln!("check failed: {msg}");
                    ExitCode::from(4)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(f) => fail(f),
    }
}

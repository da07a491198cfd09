use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use riemstab_cli::{emit, execute, load_config, run_pipeline, thread_cap, CliError, Command, Format};

#[derive(Parser)]
#[command(
    name = "riemstab",
    version,
    about = "Stability analysis of dynamical systems on Riemannian manifolds"
)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON analysis configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for output files; results go to stdout when absent
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the geodesic from `x` with initial velocity `v`
    Geodesic,
    /// Exponential map exp_x(v)
    Exp,
    /// Logarithm map log_x(y) by shooting
    Log,
    /// Riemannian distance between `x` and `y`
    Distance,
    /// Injectivity-radius estimate at `x` (default: the equilibrium)
    Injectivity,
    /// Integrate the field from `x0` over [t0, tf]
    Flow,
    /// Compare the geodesic lift with the original flow
    LiftCheck,
    /// Classify the equilibrium from sampled trajectories
    Classify,
    /// Construct or verify Lyapunov candidates
    #[command(subcommand)]
    Lyapunov(LyapunovCmd),
    /// Bounds for the perturbed system ẋ = f + h
    #[command(subcommand)]
    Perturb(PerturbCmd),
    /// Run the full analysis pipeline
    Run,
}

#[derive(Subcommand)]
enum LyapunovCmd {
    /// Build and verify the converse candidate
    Construct,
    /// Verify a user-supplied candidate
    Verify {
        /// Candidate w(x, t) as an expression; overrides `lyapunov.candidate`
        #[arg(long)]
        candidate: Option<String>,
    },
}

#[derive(Subcommand)]
enum PerturbCmd {
    /// Sample sup ‖h‖_g over the region and window
    CheckH,
    /// Ultimate bound ρ(δ) and its ensemble check
    Ultimate {
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        r1: Option<f64>,
        #[arg(long)]
        r2: Option<f64>,
    },
    /// Exponential bound k·e^(−γt)·d₀ + ζδ and its ensemble check
    ExpBound,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Geodesic => Command::Geodesic,
            Cmd::Exp => Command::Exp,
            Cmd::Log => Command::Log,
            Cmd::Distance => Command::Distance,
            Cmd::Injectivity => Command::Injectivity,
            Cmd::Flow => Command::Flow,
            Cmd::LiftCheck => Command::LiftCheck,
            Cmd::Classify => Command::Classify,
            Cmd::Lyapunov(LyapunovCmd::Construct) => Command::LyapunovConstruct,
            Cmd::Lyapunov(LyapunovCmd::Verify { candidate }) => Command::LyapunovVerify { candidate },
            Cmd::Perturb(PerturbCmd::CheckH) => Command::PerturbCheckH,
            Cmd::Perturb(PerturbCmd::Ultimate { theta, r1, r2 }) => Command::PerturbUltimate { theta, r1, r2 },
            Cmd::Perturb(PerturbCmd::ExpBound) => Command::PerturbExpBound,
            Cmd::Run => Command::Run,
        }
    }
}

fn write_file(path: PathBuf, text: &str) -> Result<(), CliError> {
    std::fs::write(&path, text).map_err(|source| CliError::Io { path, source })
}

fn run(cli: Cli) -> Result<i32, CliError> {
    thread_cap(std::env::var("RIEMSTAB_THREADS").ok().as_deref())?;
    let path = cli.common.config.ok_or_else(|| CliError::Missing("--config".into()))?;
    let mut cfg = load_config(&path)?;
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    let cmd = Command::from(cli.command);
    let format = cli.common.format;

    if let (Command::Run, Some(dir)) = (&cmd, &cli.common.out) {
        let report = run_pipeline(&cfg)?;
        for p in emit(&report, format, dir)? {
            eprintln!("wrote {}", p.display());
        }
        return Ok(report.outcome.exit_code());
    }

    let out = execute(&cmd, &cfg)?;
    let text = match (format, &out.csv) {
        (Format::Csv, Some(csv)) => csv.clone(),
        (Format::Csv, None) => {
            eprintln!("`{}` has no CSV rendering; writing JSON", cmd.name());
            riemstab_cli::report::to_json(&out.json)?
        }
        (Format::Json, _) => riemstab_cli::report::to_json(&out.json)?,
    };
    match &cli.common.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
                path: dir.clone(),
                source,
            })?;
            let ext = if format == Format::Csv && out.csv.is_some() {
                "csv"
            } else {
                "json"
            };
            let file = dir.join(format!("{}.{ext}", cmd.name()));
            write_file(file.clone(), &text)?;
            eprintln!("wrote {}", file.display());
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(text.as_bytes());
        }
    }
    Ok(out.outcome.exit_code())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use homog_cli::presets::preset;
use homog_cli::{exit, run, CliError, Command, ErrorRecord, ExperimentConfig};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CommandArg {
    SolveObstacle,
    DensityCurve,
    Effective,
    Flatness,
    Validate,
    CheckProperties,
    CheckEllipticity,
}

impl From<CommandArg> for Command {
    fn from(c: CommandArg) -> Self {
        match c {
            CommandArg::SolveObstacle => Command::SolveObstacle,
            CommandArg::DensityCurve => Command::DensityCurve,
            CommandArg::Effective => Command::Effective,
            CommandArg::Flatness => Command::Flatness,
            CommandArg::Validate => Command::Validate,
            CommandArg::CheckProperties => Command::CheckProperties,
            CommandArg::CheckEllipticity => Command::CheckEllipticity,
        }
    }
}

/// Obstacle-problem experiments for random fully nonlinear elliptic operators.
///
/// Exit codes: 0 all checks passed, 1 property violation, 2 configuration error,
/// 3 solver nonconvergence.
#[derive(Debug, Parser)]
#[command(name = "homog", version)]
struct Args {
    #[arg(value_enum)]
    command: CommandArg,
    /// JSON experiment configuration.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: constant-identity, harmonic-mean-1d, checkerboard-pucci-2d,
    /// periodic-linear-2d or properties-suite.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory for records and data files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the per-seed solves (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn load(args: &Args) -> Result<ExperimentConfig, CliError> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(CliError::Config("one of --config, --preset is required".into())),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = Command::from(args.command);
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot start {n} threads: {e}");
            return ExitCode::from(exit::CONFIG_ERROR as u8);
        }
    }
    let result = load(&args).and_then(|config| run(command, &config, &args.out));
    match result {
        Ok(outcome) => {
            let rec = &outcome.record;
            println!(
                "{} {} ({:.2} s) payload {}",
                command,
                if rec.passed { "passed" } else { "FAILED" },
                rec.wall_clock_seconds,
                &rec.payload_hash[..16]
            );
            for f in &outcome.files {
                println!("  wrote {}", f.display());
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(err) => {
            let rec = ErrorRecord::new(command, &err);
            let json = rec.to_json();
            eprintln!("{json}");
            if std::fs::create_dir_all(&args.out).is_ok() {
                let _ = std::fs::write(args.out.join(format!("{}.error.json", command.name())), &json);
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

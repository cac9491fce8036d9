use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::Parser;
use thermolab_cli::{parse_scenario, run, Emit, RunError, RunSettings};

/// Run a thermolab experiment described by a scenario file.
#[derive(Parser, Debug)]
#[command(name = "thermolab", version)]
struct Args {
    /// Scenario file (TOML, or JSON when it starts with `{`).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; defaults to `output.dir` of the scenario, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for random draws.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the summary on stdout.
    #[arg(long)]
    quiet: bool,
    /// Artifact formats.
    #[arg(long, value_enum)]
    emit: Option<Emit>,
}

fn execute(args: &Args) -> Result<(), RunError> {
    let text = std::fs::read_to_string(&args.scenario)
        .map_err(|e| RunError::Io { path: args.scenario.display().to_string(), message: e.to_string() })?;
    let config = parse_scenario(&text)?;
    let out = args
        .out
        .clone()
        .or_else(|| config.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let started = Instant::now();
    let report = run(&config, &RunSettings { out: out.clone(), seed: args.seed, emit: args.emit })?;
    if !args.quiet {
        println!("kind: {}", report.kind);
        println!("scenario: {}", report.scenario_hash);
        for a in &report.artifacts {
            println!("wrote {} ({})", out.join(&a.file).display(), a.sha256);
        }
        for d in &report.diagnostics {
            println!("note: {d}");
        }
        eprintln!("elapsed: {:.3} s", started.elapsed().as_secs_f64());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

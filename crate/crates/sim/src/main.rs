use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cbdc_sim::{render_report, run_scenario, vectors};

/// Offline CBDC simulator.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file; exits 1 if any expectation fails.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print the reference vectors as JSON lines.
    Vectors {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Compare against a JSON-lines file instead of printing.
        #[arg(long)]
        check: Option<PathBuf>,
    },
}

fn check_suite() -> Result<(), String> {
    match std::env::var("CBDC_SIM_SUITE") {
        Err(_) => Ok(()),
        Ok(v) if v.trim() == "1" => Ok(()),
        Ok(v) => Err(format!("unsupported suite {v:?}; only suite 1 (ristretto255/SHA-512) is available")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = check_suite() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match cli.command {
        Command::Run { scenario, seed, report } => {
            let text = match std::fs::read_to_string(&scenario) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {}: {e}", scenario.display());
                    return ExitCode::from(2);
                }
            };
            let result = match run_scenario(&text, seed) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {}: {e}", scenario.display());
                    return ExitCode::from(2);
                }
            };
            let rendered = render_report(&result.report);
            match report {
                Some(path) => {
                    if let Err(e) = std::fs::write(&path, rendered) {
                        eprintln!("error: {}: {e}", path.display());
                        return ExitCode::from(2);
                    }
                }
                None => print!("{rendered}"),
            }
            for a in result.report["assertions"].as_array().into_iter().flatten() {
                if a["ok"] != true {
                    eprintln!("FAIL {}: expected {} got {}", a["name"], a["expected"], a["actual"]);
                }
            }
            if result.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::Vectors { out, check } => {
            if let Some(path) = check {
                let text = match std::fs::read_to_string(&path) {
                    Ok(t) => t,
                    Err(e) => {
                        eprintln!("error: {}: {e}", path.display());
                        return ExitCode::from(2);
                    }
                };
                let bad = vectors::mismatches(&text);
                for b in &bad {
                    eprintln!("mismatch {b}");
                }
                return if bad.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) };
            }
            let text = vectors::to_jsonl(&vectors::compute());
            match out {
                Some(path) => {
                    if let Err(e) = std::fs::write(&path, text) {
                        eprintln!("error: {}: {e}", path.display());
                        return ExitCode::from(2);
                    }
                }
                None => print!("{text}"),
            }
            ExitCode::SUCCESS
        }
    }
}

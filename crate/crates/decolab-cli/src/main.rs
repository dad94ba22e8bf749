//! `decolab` — scenario runner and acceptance checker for the decoherence
//! laboratory engine.
//!
//! Exit codes: 0 when every check passes, 1 when the run completed but a
//! check failed, 2 when the scenario or engine rejected the input.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use decolab::UnitsContext;
use decolab_cli::report::{fmt_num, RunReport};
use decolab_cli::run::run_scenario;
use decolab_cli::scenario::{parse_scenario, COMMAND_SUMMARIES};

#[derive(Parser)]
#[command(
    name = "decolab",
    version,
    about = "Deterministic scenario runner for time-uncertainty decoherence models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a TOML scenario file: write its output files and print the report.
    Run {
        /// Path to the scenario file.
        scenario: PathBuf,
        /// Override the scenario's random seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for output files (created if missing; default: current).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the scenario commands and their documented parameter keys.
    ListCommands,
    /// Run the built-in acceptance checks and print the report.
    Check,
}

fn main() {
    // Die quietly on a closed pipe (`decolab list-commands | head`) instead
    // of panicking with a backtrace.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { scenario, seed, out } => run_command(&scenario, seed, out.as_deref()),
        Command::ListCommands => {
            for (name, summary) in COMMAND_SUMMARIES {
                println!("{name}\n    {summary}");
            }
            0
        }
        Command::Check => check_command(),
    };
    std::process::exit(code);
}

fn run_command(path: &Path, seed: Option<u64>, out: Option<&Path>) -> i32 {
    let started = Instant::now();
    let units = UnitsContext::default();
    let run = std::fs::read_to_string(path)
        .map_err(decolab_cli::CliError::from)
        .and_then(|text| {
            let mut scenario = parse_scenario(&text, &units)?;
            if let Some(s) = seed {
                scenario.seed = s;
            }
            run_scenario(&scenario, &units)
        });
    let output = match run {
        Ok(output) => output,
        Err(err) => {
            eprintln!("error: {err}");
            return 2;
        }
    };
    let out_dir = out.unwrap_or(Path::new("."));
    for (rel, content) in &output.files {
        let dest = out_dir.join(rel);
        if let Some(parent) = dest.parent() {
            if let Err(err) = std::fs::create_dir_all(parent) {
                eprintln!("error: creating {}: {err}", parent.display());
                return 2;
            }
        }
        if let Err(err) = std::fs::write(&dest, content) {
            eprintln!("error: writing {}: {err}", dest.display());
            return 2;
        }
        println!("wrote {}", dest.display());
    }
    let mut report = output.report;
    report.push("wall_time_s", fmt_num(started.elapsed().as_secs_f64()));
    print!("{}", report.render());
    if report.all_passed() {
        0
    } else {
        1
    }
}

fn check_command() -> i32 {
    let started = Instant::now();
    let mut report = RunReport::default();
    report.push("report", "decolab-check");
    report.push("engine.name", "decolab");
    report.push("engine.version", env!("CARGO_PKG_VERSION"));
    report.checks.extend(decolab_cli::checks::run_all_checks());
    report.push("wall_time_s", fmt_num(started.elapsed().as_secs_f64()));
    print!("{}", report.render());
    if report.all_passed() {
        0
    } else {
        1
    }
}

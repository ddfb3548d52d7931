use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use teleop_service::mission::{run_mission, Mission};
use teleop_service::server::{self, ServerConfig};

#[derive(Parser)]
#[command(name = "teleop", about = "Whole-body teleoperation simulator and mission runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct MissionArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    tree: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a mission headless and write logs and a report.
    Run {
        #[command(flatten)]
        mission: MissionArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a mission live and stream it to clients.
    Serve {
        #[command(flatten)]
        mission: MissionArgs,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Simulated seconds per wall second; 0 runs unthrottled.
        #[arg(long, default_value_t = 1.0)]
        rate: f64,
    },
    /// Run the acceptance suite.
    Verify {
        /// Directory holding the acceptance scenarios, trees and traces.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { mission, out } => {
            let report = run_mission(&mission.scenario, mission.tree.as_deref(), mission.trace.as_deref(), &out, mission.seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.completed { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Serve { mission, port, host, rate } => {
            let m = Mission::load(&mission.scenario, mission.tree.as_deref(), mission.trace.as_deref(), mission.seed)?;
            let config = ServerConfig { bind: format!("{host}:{port}"), rate, ..Default::default() };
            let handle = server::start(m, config).with_context(|| format!("binding {host}:{port}"))?;
            eprintln!("serving on {}", handle.addr);
            let report = handle.wait()?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { fixtures } => {
            let dir = fixtures.unwrap_or_else(teleop_service::acceptance::fixtures_dir);
            let results = teleop_service::acceptance::run_all(&dir);
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} passed, {failed} failed", results.len() - failed);
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

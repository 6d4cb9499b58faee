use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rrctl::{run_scenario, run_suite, PlantKind, RunReport, Scenario, ScenarioId};

#[derive(Parser)]
#[command(name = "rrctl", version, about = "Run the two-link manipulator control scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trace, plot and report.
    Run {
        #[arg(long)]
        scenario: ScenarioId,
        #[arg(long, default_value = "ideal")]
        plant: PlantKind,
        /// Scenario file to use instead of the built-in one.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "RRCTL_OUT", default_value = "rrctl-out")]
        out: PathBuf,
        /// Noise seed, overriding the scenario's.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every scenario on both plants.
    Suite {
        #[arg(long, required = true)]
        all: bool,
        #[arg(long, env = "RRCTL_OUT", default_value = "rrctl-out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the built-in scenarios.
    List,
}

fn print_report(r: &RunReport) {
    let verdict = if r.passed { "PASS" } else { "FAIL" };
    let conv = r.evaluation.convergence_time.map_or("-".to_string(), |t| format!("{t:.3} s"));
    println!("{verdict} {} [{}] {}  converged {conv}", r.scenario, r.plant, r.figure);
    if let Some(e) = &r.error {
        println!("    error: {e}");
    }
    for c in &r.evaluation.criteria {
        let mark = match (c.passed, c.gating) {
            (true, _) => "ok",
            (false, true) => "FAILED",
            (false, false) => "missed (report only)",
        };
        let measured = c.measured.map_or("-".to_string(), |m| {
            if m != 0.0 && m.abs() < 1e-3 { format!("{m:.3e}") } else { format!("{m:.4}") }
        });
        println!("    {:<20} {mark:<22} measured {measured}  limit {}  {}", c.name, c.threshold, c.detail);
    }
}

fn main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    let passed = match cli.command {
        Command::List => {
            for scn in Scenario::all_builtin()? {
                let kind = scn.id().required_controller().unwrap_or("none");
                println!(
                    "{:<20} {:<16} {} / {}  {}",
                    scn.id(),
                    kind,
                    scn.file.figure.ideal,
                    scn.file.figure.truth,
                    scn.file.description
                );
            }
            true
        }
        Command::Run { scenario, plant, config, out, seed } => {
            let scn = match config {
                Some(path) => Scenario::from_path(&path)?,
                None => Scenario::builtin(scenario)?,
            };
            if scn.id() != scenario {
                bail!("config file describes {} but --scenario is {scenario}", scn.id());
            }
            let report = run_scenario(&scn, plant, seed, &out);
            print_report(&report);
            report.passed
        }
        Command::Suite { all: _, out, seed } => {
            let scenarios = Scenario::all_builtin()?;
            let suite = run_suite(&scenarios, &PlantKind::BOTH, seed, &out)
                .with_context(|| format!("writing suite report to {}", out.display()))?;
            for r in &suite.runs {
                print_report(r);
            }
            let failed = suite.runs.iter().filter(|r| !r.passed).count();
            println!("{} runs, {failed} failed", suite.runs.len());
            suite.passed
        }
    };
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

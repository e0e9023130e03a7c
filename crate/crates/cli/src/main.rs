use std::process::ExitCode;

use clap::{Parser, Subcommand};
use emotest_cli::commands::{
    cmd_compare, cmd_perturb, cmd_run, cmd_simulate, CompareArgs, FixtureArgs, PerturbArgs, RunArgs, SimulateArgs,
};
use emotest_cli::fixture::write_fixture;

/// Correctness, fairness and robustness tests for speech emotion models.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the test suite against a model and write reports.
    Run(RunArgs),
    /// Simulate fairness thresholds for random models.
    SimulateThresholds(SimulateArgs),
    /// Apply one perturbation to audio files.
    Perturb(PerturbArgs),
    /// Compare two reports built with the same registry and thresholds.
    Compare(CompareArgs),
    /// Write the synthetic mini-dataset.
    Fixture(FixtureArgs),
}

const GATE_EXIT: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Run(a) => cmd_run(a).map(|o| {
            println!("overall pass fraction: {}", o.report.aggregate.overall.map_or("n/a".into(), |v| format!("{v:.4}")));
            println!("wrote {} and {}", o.structured.display(), o.human.display());
            if o.gate_failed {
                eprintln!("overall pass fraction is below the gate");
                ExitCode::from(GATE_EXIT)
            } else {
                ExitCode::SUCCESS
            }
        }),
        Cmd::SimulateThresholds(a) => cmd_simulate(a).map(|t| {
            println!("wrote {} entries to {}", t.entries.len(), a.out.display());
            ExitCode::SUCCESS
        }),
        Cmd::Perturb(a) => cmd_perturb(a).map(|(n, fp)| {
            println!("wrote {n} files to {} (fingerprint {fp})", a.out.display());
            ExitCode::SUCCESS
        }),
        Cmd::Compare(a) => cmd_compare(a).map(|s| {
            print!("{s}");
            ExitCode::SUCCESS
        }),
        Cmd::Fixture(a) => write_fixture(&a.out, a.seed).map(|()| {
            println!("wrote fixture to {}", a.out.display());
            ExitCode::SUCCESS
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}

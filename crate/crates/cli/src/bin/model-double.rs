use std::io::{stdin, stdout, BufWriter};
use std::process::ExitCode;

use clap::Parser;
use emotest::Task;
use emotest_cli::double::{serve, Behaviour};

/// Scripted model double speaking the emotest subprocess protocol.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Task to answer; defaults to $EMOTEST_TASK.
    #[arg(long)]
    task: Option<Task>,
    /// Emit this value for every input instead of decoding audio.
    #[arg(long, conflicts_with = "constant_class")]
    constant: Option<f64>,
    /// Emit this class for every input.
    #[arg(long)]
    constant_class: Option<String>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let task = match args.task.or_else(|| std::env::var(emotest::adapters::TASK_ENV).ok()?.parse().ok()) {
        Some(t) => t,
        None => {
            eprintln!("model-double: no task given (--task or ${})", emotest::adapters::TASK_ENV);
            return ExitCode::from(2);
        }
    };
    let behaviour = match (args.constant, args.constant_class) {
        (Some(v), _) => Behaviour::Constant(v),
        (_, Some(c)) => Behaviour::ConstantClass(c),
        _ => Behaviour::Decode,
    };
    match serve(stdin().lock(), BufWriter::new(stdout().lock()), task, &behaviour) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("model-double: {e:#}");
            ExitCode::FAILURE
        }
    }
}

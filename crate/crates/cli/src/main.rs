mod args;
mod commands;
mod exit;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use exit::{CliError, CliResult};

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let name = cli.command.name();
    match &cli.command {
        Command::Synth(a) => {
            commands::record_config(name, a, Some(&a.out))?;
            commands::synth(a)
        }
        Command::Validate(a) => {
            commands::record_config(name, a, a.out.as_deref())?;
            commands::validate(a)
        }
        Command::TrainCodebook(a) => {
            commands::record_config(name, a, Some(&a.out))?;
            commands::train_codebook_cmd(a)
        }
        Command::TrainPca(a) => {
            commands::record_config(name, a, Some(&a.out))?;
            commands::train_pca(a)
        }
        Command::BuildIndex(a) => {
            commands::record_config(name, a, Some(&a.out))?;
            commands::build_index_cmd(a)
        }
        Command::Query(a) => {
            commands::record_config(name, a, a.out.as_deref())?;
            commands::query(a)
        }
        Command::Evaluate(a) => {
            commands::record_config(name, a, Some(&a.out))?;
            commands::evaluate(a)
        }
        Command::Benchmark(a) => {
            commands::record_config(name, a, Some(&a.out))?;
            commands::benchmark(a)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

mod commands;
mod output;
mod settings;

use std::process::ExitCode;

use clap::Parser;

use output::CliError;
use settings::{Cli, Command, Settings};

fn run(cli: Cli) -> Result<(), CliError> {
    let settings = Settings::resolve(cli.flags)?;
    if let Some(n) = settings.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(output::internal)?;
    }
    match cli.command {
        Command::Audit => commands::audit(&settings),
        Command::Manipulate { mode } => commands::manipulate(&settings, mode),
        Command::Eval => commands::eval(&settings),
        Command::Baseline { action } => commands::baseline(&settings, action),
        Command::Synth => commands::synth(&settings),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

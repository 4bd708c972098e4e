mod args;
mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command, SUBCOMMANDS};
use error::CliError;

fn parse() -> Result<Cli, clap::Error> {
    let argv = match config::expand(std::env::args_os().collect(), SUBCOMMANDS) {
        Ok(v) => v,
        Err(e) => return Err(Cli::command().error(clap::error::ErrorKind::InvalidValue, e)),
    };
    let cmd = Cli::command()
        .args_override_self(true)
        .mut_subcommands(|s| s.args_override_self(true));
    let matches = cmd.try_get_matches_from(argv)?;
    Cli::from_arg_matches(&matches)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let seed = cli.seed;
    match &cli.command {
        Command::Synth(a) => commands::synth(a, seed),
        Command::Train(a) => commands::train(a, seed),
        Command::Conformal(a) => commands::conformal(a, seed),
        Command::Correct(a) => commands::correct_cmd(a, seed),
        Command::CoverageDist(a) => commands::coverage_dist(a),
        Command::Netfeat(a) => commands::netfeat(a),
        Command::Wsc(a) => commands::wsc(a, seed),
        Command::GapTest(a) => commands::gap_test(a, seed),
    }
}

fn main() -> ExitCode {
    let cli = match parse() {
        Ok(cli) => cli,
        // help and version exit 0, parse failures 2
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

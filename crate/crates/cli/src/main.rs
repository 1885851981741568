mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Extract(a) => commands::cmd_extract(a),
        Command::Evaluate(a) => commands::cmd_evaluate(a),
        Command::Phantom(a) => commands::cmd_phantom(a),
    };
    ExitCode::from(code)
}

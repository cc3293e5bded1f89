//! Command-line front end: argument types, config resolution and the subcommands.

pub mod args;
pub mod commands;
pub mod config;

use args::{Cli, Command};
use meltstream_core::Result;

pub fn run(cli: &Cli) -> Result<()> {
    let data = cli.data.as_deref();
    match &cli.command {
        Command::Synth(a) => commands::synth(a, data).map(drop),
        Command::Augment(a) => commands::augment(a, data).map(drop),
        Command::Train(a) => commands::train(a, data).map(drop),
        Command::Flow(a) => commands::flow(a),
        Command::Eval(a) => commands::eval(a).map(drop),
        Command::Report(a) => commands::report(a, data).map(drop),
    }
}

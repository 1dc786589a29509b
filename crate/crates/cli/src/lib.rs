//! `taskgrasp` command-line tool.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod heatmap;
pub mod llm;

use std::io::Write;

pub use args::{Cli, Command};
pub use error::{exit, CliError};

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Grasp(a) => commands::grasp(a, out).map(drop),
        Command::Query(a) => commands::query(a, out),
        Command::Synth(a) => commands::synth(a, out),
        Command::Plan(a) => commands::plan(a, out).map(drop),
        Command::Trajectory(a) => commands::trajectory(a, out),
        Command::Bench(a) => commands::bench(a, out),
    }
}

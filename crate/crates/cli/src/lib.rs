//! Command-line front end: `generate`, `attack`, `compare` and `noise-demo`.

pub mod args;
pub mod commands;
pub mod config;

use anyhow::Result;

use args::{Cli, Command};
use commands::Outcome;

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Attack(a) => commands::attack(a),
        Command::Compare(a) => commands::compare(a),
        Command::NoiseDemo(a) => commands::noise_demo(a),
    }
}

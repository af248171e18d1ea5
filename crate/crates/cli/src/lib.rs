//! Subcommands of the `ucps` binary.

pub mod args;
mod commands;
pub mod serve;

pub use args::{Cli, Command};

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Render(a) => commands::render(&a),
        Command::Init(a) => commands::init(&a),
        Command::Reconstruct(a) => commands::reconstruct(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Serve(a) => tokio::runtime::Runtime::new()?.block_on(serve::run(a)),
    }
}

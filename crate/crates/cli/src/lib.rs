//! Library surface of the command-line front end; the binary in `main.rs`
//! parses arguments and dispatches here. Integration tests drive the same
//! command functions.

pub mod args;
pub mod commands;
pub mod config;
pub mod manifest;

use anyhow::Result;

pub fn run(cli: args::Cli) -> Result<()> {
    match cli.command {
        args::Command::Vocab(opts) => commands::cmd_vocab(opts),
        args::Command::LexiconTrain(opts) => commands::cmd_lexicon_train(opts),
        args::Command::LexiconMerge(opts) => commands::cmd_lexicon_merge(opts),
        args::Command::Train(opts) => commands::cmd_train(opts),
        args::Command::Translate(opts) => commands::cmd_translate(opts),
        args::Command::Evaluate(opts) => commands::cmd_evaluate(opts),
    }
}

use clap::{Parser, Subcommand};
use convqa_cli::commands::{
    cmd_compare, cmd_eval, cmd_synth, cmd_train, cmd_validate, CompareArgs, EvalArgs, SynthArgs,
    TrainArgs, ValidateArgs,
};

/// Conversational question answering with scheduled sampling over answer
/// history: synthesize corpora, train regimes, and compare gold-history
/// and predicted-history evaluation.
#[derive(Parser)]
#[command(name = "convqa", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic conversational corpus.
    Synth(SynthArgs),
    /// Train a regime from a config file (or rerun a manifest).
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus in sm or mp mode.
    Eval(EvalArgs),
    /// Compare evaluation reports cell by cell.
    Compare(CompareArgs),
    /// Parse a corpus file and report what it holds.
    Validate(ValidateArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Validate(args) => cmd_validate(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

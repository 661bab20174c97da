use clap::{Parser, Subcommand};

use pcadv_cli::commands::{
    run_attack, run_gen_data, run_report, run_saliency, run_train, AttackArgs, GenDataArgs,
    ReportArgs, SaliencyArgs, TrainArgs,
};

/// Region-based adversarial attacks on point-cloud classifiers.
#[derive(Parser)]
#[command(name = "pcadv", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic shape dataset and its manifest.
    GenData(GenDataArgs),
    /// Train the victim classifier on a dataset manifest.
    Train(TrainArgs),
    /// Compute per-region Shapley saliency maps.
    Saliency(SaliencyArgs),
    /// Attack a manifest split and emit an evaluation report.
    Attack(AttackArgs),
    /// Merge attack runs into a comparison table.
    Report(ReportArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(args) => run_gen_data(args).map(|_| ()),
        Command::Train(args) => run_train(args).map(|_| ()),
        Command::Saliency(args) => run_saliency(args),
        Command::Attack(args) => run_attack(args).map(|_| ()),
        Command::Report(args) => run_report(args).map(|_| ()),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use peekaboo_cli::commands::{self, BuildMasksArgs, ConfigArgs, EvalArgs, ExportGoldenArgs, GenImcArgs};
use peekaboo_cli::exit_code;

/// Bounding-box layout control for text-to-video attention.
#[derive(Debug, Parser)]
#[command(name = "peekaboo", version, about)]
struct Cli {
    /// Worker threads for per-trajectory work (defaults to all cores).
    #[arg(long, global = true, env = "PKB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the interactive-motion prompt/trajectory dataset.
    GenImc(GenImcArgs),
    /// Rasterize a trajectory and write its attention masks.
    BuildMasks(BuildMasksArgs),
    /// Run the surrogate denoising loop over a dataset.
    Run(ConfigArgs),
    /// Score detections against ground-truth trajectories.
    Eval(EvalArgs),
    /// Repeat a run with each mask family disabled in turn.
    Ablate(ConfigArgs),
    /// Write random mask bundles for cross-implementation checks.
    ExportGolden(ExportGoldenArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(peekaboo_cli::EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(peekaboo_cli::EXIT_INTERNAL);
        }
    }
    let result = match &cli.command {
        Command::GenImc(a) => commands::gen_imc(a).map(drop),
        Command::BuildMasks(a) => commands::build_masks(a).map(drop),
        Command::Run(a) => commands::run(a).map(drop),
        Command::Eval(a) => commands::eval(a).map(drop),
        Command::Ablate(a) => commands::ablate(a).map(drop),
        Command::ExportGolden(a) => commands::export_golden(a).map(drop),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

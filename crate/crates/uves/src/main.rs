use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use uves::pipeline::{self, SimMode};

#[derive(Parser)]
#[command(name = "uves", version, about = "Unit-vector extremum seeking: gain synthesis, certificate verification, closed-loop simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    Average,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the vertex LMIs and write the gain with its certificate.
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check a synthesis report or a bare gain file.
    Verify {
        /// Synthesis report or gain file (JSON).
        input: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the closed loop and summarize convergence.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Full)]
        mode: ModeArg,
        /// Overrides the Hessian sampling seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Multiplies the dither base frequency.
        #[arg(long)]
        omega_scale: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the worked design study end to end and write the
    /// acceptance matrix.
    ReproducePaper {
        /// Bundle directory; defaults to ./study_bundle.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> uves::Result<i32> {
    match cli.command {
        Command::Synthesize { config, out } => pipeline::cmd_synthesize(&config, out.as_deref()),
        Command::Verify { input, config, out } => {
            pipeline::cmd_verify(&input, &config, out.as_deref())
        }
        Command::Simulate { config, mode, seed, omega_scale, out } => pipeline::cmd_simulate(
            &config,
            match mode {
                ModeArg::Full => SimMode::Full,
                ModeArg::Average => SimMode::Average,
            },
            seed,
            omega_scale,
            out.as_deref(),
        ),
        Command::ReproducePaper { out } => pipeline::cmd_reproduce_paper(out.as_deref()),
    }
}

fn main() {
    // Usage mistakes are config errors in the exit-code contract; exit
    // code 2 is reserved for infeasibility.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => match err.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => err.exit(),
            _ => {
                let _ = err.print();
                std::process::exit(pipeline::EXIT_CONFIG);
            }
        },
    };
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            pipeline::exit_code_for(&err)
        }
    };
    std::process::exit(code);
}

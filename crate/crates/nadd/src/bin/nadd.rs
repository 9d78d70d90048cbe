use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nadd::harness::config::{ExperimentConfig, EXPERIMENTS};
use nadd::harness::{self, plot};
use nadd::Error;

#[derive(Parser)]
#[command(name = "nadd", about = "Ring-corrected diffusion purification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a TOML config and persist its outputs.
    Run { config: PathBuf },
    /// Parse and validate a config, printing every violated invariant.
    Validate { config: PathBuf },
    /// Emit a matplotlib script into a finished run directory.
    Plot { run_dir: PathBuf },
    /// List the registered experiments.
    ListExperiments,
    /// Print the ready-to-run default config for an experiment.
    DefaultConfig { experiment: String },
}

// Exit codes: 0 ok, 1 bad config, 2 execution error, 3 assertion failed.
const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_ASSERT: u8 = 3;

fn config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::ConfigParse(_) | Error::ConfigInvalid { .. } | Error::UnknownExperiment(_)
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => match harness::run_experiment(&config) {
            Ok(rec) => {
                println!("run dir:     {}", rec.run_dir.display());
                println!("config hash: {}", rec.config_hash);
                println!("input hash:  {}", rec.input_hash);
                println!("summary:     {}", rec.summary_path.display());
                println!("duration:    {:.2?}", rec.duration);
                match rec.assertions_pass {
                    Some(true) => {
                        println!("assertions:  PASS");
                        ExitCode::SUCCESS
                    }
                    Some(false) => {
                        println!("assertions:  FAIL");
                        ExitCode::from(EXIT_ASSERT)
                    }
                    None => ExitCode::SUCCESS,
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(if config_error(&e) {
                    EXIT_CONFIG
                } else {
                    EXIT_RUNTIME
                })
            }
        },
        Command::Validate { config } => match ExperimentConfig::load(&config) {
            Ok(cfg) => {
                let diags = cfg.diagnostics();
                if diags.is_empty() {
                    println!("ok: {} ({})", config.display(), cfg.experiment);
                    ExitCode::SUCCESS
                } else {
                    for d in &diags {
                        eprintln!("invalid: {d}");
                    }
                    ExitCode::from(EXIT_CONFIG)
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::Plot { run_dir } => match plot::emit_plot_script(&run_dir) {
            Ok(path) => {
                println!("wrote {}", path.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_RUNTIME)
            }
        },
        Command::ListExperiments => {
            for name in EXPERIMENTS {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        Command::DefaultConfig { experiment } => match ExperimentConfig::default_for(&experiment) {
            Ok(cfg) => {
                print!("{}", cfg.to_toml());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
    }
}

//! `d3rec` command line entry point.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use d3rec_cli::commands::{self, Overrides};
use d3rec_cli::config::load_config;
use d3rec_cli::engine::Engine;
use d3rec_cli::service::{self, AppState};
use d3rec_cli::{one_line, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Train,
    Eval,
    Sweep,
    Synth,
    GenToy,
    InjectNoise,
    Recommend,
    Serve,
}

/// Category-guided diffusion recommender.
#[derive(Debug, Parser)]
#[command(name = "d3rec", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    tau: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    w: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// User id for `recommend`.
    #[arg(long)]
    user: Option<String>,
    #[arg(long)]
    port: Option<u16>,
}

fn run(args: Args) -> Result<(), CliError> {
    let flags = Overrides { seed: args.seed, out: args.out, tau: args.tau, w: args.w, k: args.k, port: args.port };
    let cfg = flags.apply(load_config(&args.config)?)?;
    cfg.check_paths()?;
    let summary = match args.command {
        Command::GenToy => commands::gen_toy(&cfg)?,
        Command::InjectNoise => commands::inject(&cfg)?,
        Command::Synth => commands::synth(&cfg)?,
        Command::Train => commands::train(&cfg)?,
        Command::Eval => commands::eval(&cfg)?,
        Command::Sweep => commands::sweep(&cfg)?,
        Command::Recommend => {
            let user = args.user.ok_or_else(|| CliError::Config("recommend needs --user".into()))?;
            commands::recommend_user(&cfg, &user)?
        }
        Command::Serve => {
            let engine = commands::load_source(&cfg, true).and_then(|ds| Engine::load(&cfg.checkpoint_dir(), &ds));
            let engine = match engine {
                Ok(e) => Some(e),
                Err(e) => {
                    log::warn!("serving without a model: {}", one_line(&e.to_string()));
                    None
                }
            };
            return service::serve(AppState::new(engine), cfg.serve.port, cfg.serve.allowed_origin.as_deref());
        }
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Data(e.to_string()))?;
    // A closed pipe (`| head`) is not a failure of the command.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if e.use_stderr() => {
            eprintln!("error: config: {}", one_line(&e.to_string()));
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            ExitCode::from(e.exit_code())
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use skewlab_cli::{replay, run, CliError, Command, RunConfig, Target, EXIT_CHECK, EXIT_CONFIG, EXIT_OK};

#[derive(Parser)]
#[command(name = "skewlab", version, about = "Diffusion limits of slow-fast skew-product flows")]
struct Cli {
    /// Run configuration (TOML); defaults are used when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set system.eps=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Output directory (overrides `output_dir`).
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; defaults to the machine's parallelism.
    #[arg(short, long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Sigma,
    #[value(name = "F", alias = "f")]
    F,
    Ldp,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate one skew-product trajectory.
    Simulate,
    /// Estimate Sigma, the averaged drift F, or the large-deviation tail.
    Estimate {
        #[arg(value_enum)]
        target: TargetArg,
    },
    /// Run the eps ladder against the limiting SDE.
    Ladder {
        /// Exit with status 4 if any acceptance check fails.
        #[arg(long)]
        check: bool,
    },
    /// Re-run a recorded run and compare its outputs byte for byte.
    Replay {
        manifest: PathBuf,
    },
    /// Print the effective configuration.
    Config,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    match &cli.config {
        Some(p) => RunConfig::load(p, &cli.overrides),
        None => RunConfig::from_overrides(&cli.overrides),
    }
}

fn main_inner(cli: Cli) -> Result<i32, CliError> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size worker pool: {e}")))?;
    }
    let command = match &cli.command {
        Cmd::Replay { manifest } => {
            let out = cli
                .out
                .clone()
                .unwrap_or_else(|| manifest.parent().unwrap_or(&PathBuf::from(".")).join("replay"));
            let (outcome, mismatches) = replay(manifest, &out)?;
            if mismatches.is_empty() {
                println!("replay of {} files in {}: identical", outcome.manifest.outputs.len(), out.display());
                return Ok(EXIT_OK);
            }
            eprintln!("replay differs in: {}", mismatches.join(", "));
            return Ok(EXIT_CHECK);
        }
        Cmd::Config => {
            print!("{}", load_config(&cli)?.to_toml()?);
            return Ok(EXIT_OK);
        }
        Cmd::Simulate => Command::Simulate,
        Cmd::Estimate { target } => Command::Estimate(match target {
            TargetArg::Sigma => Target::Sigma,
            TargetArg::F => Target::F,
            TargetArg::Ldp => Target::Ldp,
        }),
        Cmd::Ladder { check } => Command::Ladder { check: *check },
    };
    let cfg = load_config(&cli)?;
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let outcome = run(&cfg, &command, &out)?;
    print!("{}", outcome.report);
    println!("outputs written to {}", out.display());
    let check = matches!(command, Command::Ladder { check: true });
    if check && outcome.checks_passed == Some(false) {
        return Ok(EXIT_CHECK);
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match main_inner(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

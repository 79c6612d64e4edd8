use std::path::PathBuf;

use clap::{Parser, Subcommand};

use swapflow_cli::{cmd_allreduce_bench, cmd_rewrite, cmd_run, cmd_train, CliError, Ctx};

/// Deterministic simulator for memory-swapped graph execution and
/// topology-aware collectives.
#[derive(Parser)]
#[command(name = "swapflow", version, about)]
struct Cli {
    /// Emit errors as JSON on stderr.
    #[arg(long, global = true)]
    json_errors: bool,
    /// Directory output artifacts are written into.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan tensor swaps for a scenario and write the rewritten graph.
    Rewrite {
        scenario: PathBuf,
        /// Device budget in bytes (overrides the scenario's lms block).
        #[arg(long)]
        capacity: Option<u64>,
        /// Minimum producer-to-consumer distance for swap candidates.
        #[arg(long)]
        threshold: Option<usize>,
        /// Steps ahead of the consumer to anchor swap-ins.
        #[arg(long)]
        prefetch: Option<usize>,
    },
    /// Execute a scenario and write the trace CSV and summary JSON.
    Run {
        scenario: PathBuf,
        /// Two device-config files to compare link speeds with: FAST SLOW.
        #[arg(long, num_args = 2, value_names = ["FAST", "SLOW"])]
        compare: Option<Vec<PathBuf>>,
    },
    /// Model ring vs hierarchical all-reduce across buffer sizes.
    #[command(name = "allreduce-bench")]
    AllreduceBench {
        scenario: PathBuf,
        /// Buffer sizes in elements, comma separated.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<u64>>,
    },
    /// Train the toy model data-parallel across rank counts.
    Train { scenario: PathBuf },
}

fn seed_override() -> Result<Option<u64>, CliError> {
    match std::env::var("SWAPFLOW_SEED") {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Usage(format!("SWAPFLOW_SEED: {e}"))),
        Ok(text) => text
            .parse::<u64>()
            .map(Some)
            .map_err(|e| CliError::Usage(format!("SWAPFLOW_SEED `{text}`: {e}"))),
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let ctx = Ctx { out_dir: cli.out_dir.clone(), seed_override: seed_override()? };
    match &cli.command {
        Command::Rewrite { scenario, capacity, threshold, prefetch } => {
            cmd_rewrite(scenario, *capacity, *threshold, *prefetch, &ctx)
        }
        Command::Run { scenario, compare } => {
            let pair = compare.as_ref().map(|v| (v[0].as_path(), v[1].as_path()));
            cmd_run(scenario, pair, &ctx)
        }
        Command::AllreduceBench { scenario, sizes } => {
            cmd_allreduce_bench(scenario, sizes.clone(), &ctx)
        }
        Command::Train { scenario } => cmd_train(scenario, &ctx),
    }
}

fn main() {
    // Usage errors exit 1; code 2 is reserved for capacity failures.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            e.print().expect("clap errors print");
            std::process::exit(code);
        }
    };
    if let Err(error) = dispatch(&cli) {
        if cli.json_errors {
            let payload =
                serde_json::json!({ "error": error.to_string(), "code": error.exit_code() });
            eprintln!("{payload}");
        } else {
            eprintln!("error: {error}");
        }
        std::process::exit(error.exit_code());
    }
}

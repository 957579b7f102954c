use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand, ValueEnum};
use triage_cli::commands::{self, Context};
use triage_cli::config::PipelineConfig;
use triage_core::gateway::stub::{parse_keyword_rules, Responder, StubConfig, StubServer};
use triage_core::{CleaningMethod, Engine, Execution};

#[derive(Parser)]
#[command(name = "issue-triage", version, about = "Classify GitHub issue reports as bug, feature or question")]
struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "triage.toml", env = "TRIAGE_CONFIG")]
    config: PathBuf,

    /// Override gateway.base_url from the configuration.
    #[arg(long, global = true)]
    base_url: Option<String>,

    /// Classifier used by `evaluate`.
    #[arg(long, global = true, value_enum, default_value_t = EngineArg::Finetuned)]
    engine: EngineArg,

    /// Disable data parallelism.
    #[arg(long, global = true)]
    sequential: bool,

    /// More log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Finetuned,
    Baseline,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Method1,
    Method2,
}

#[derive(Clone, Copy, ValueEnum)]
enum ResponderArg {
    Keywords,
    Memorized,
    Baseline,
}

#[derive(Subcommand)]
enum Command {
    /// Remove noise from issue titles and bodies, per repository.
    Clean {
        /// Use this method for every repository instead of the configured ones.
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    /// Build chat-format JSONL training files from the cleaned train split.
    Prepare,
    /// Upload training files, run fine-tune jobs and record the model ids.
    Finetune,
    /// Classify the cleaned test split and write predictions and metric tables.
    Evaluate,
    /// Recompute metric tables from saved predictions.
    Report {
        /// Directory holding predictions_<owner>_<name>.csv files.
        #[arg(long)]
        predictions_dir: Option<PathBuf>,
    },
    /// Run the offline stand-in for the fine-tuning service until interrupted.
    Stub {
        #[arg(long, default_value = "127.0.0.1:8089")]
        listen: String,
        #[arg(long, value_enum, default_value_t = ResponderArg::Memorized)]
        responder: ResponderArg,
        /// keyword=label mapping file for the keywords responder.
        #[arg(long, required_if_eq("responder", "keywords"))]
        mapping: Option<PathBuf>,
        /// Job polls before a fine-tune reports success.
        #[arg(long, default_value_t = 2)]
        polls: u32,
        /// Reject requests that do not present this bearer token.
        #[arg(long)]
        api_key: Option<String>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::Stub { listen, responder, mapping, polls, api_key } = cli.command {
        let responder = match responder {
            ResponderArg::Memorized => Responder::Memorized,
            ResponderArg::Baseline => Responder::Baseline { alpha: 1.0 },
            ResponderArg::Keywords => {
                let path = mapping.expect("clap requires --mapping");
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                Responder::Keywords(parse_keyword_rules(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?)
            }
        };
        let stub = StubServer::bind(
            &listen,
            StubConfig { responder, polls_to_complete: polls, required_api_key: api_key, ..StubConfig::default() },
        )?;
        println!("stub listening on {}", stub.base_url());
        stub.join();
        return Ok(());
    }

    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(url) = cli.base_url {
        config.gateway.base_url = url;
    }
    let ctx = Context { config, exec: if cli.sequential { Execution::Sequential } else { Execution::default() } };
    match cli.command {
        Command::Clean { method } => commands::clean(
            &ctx,
            method.map(|m| match m {
                MethodArg::Method1 => CleaningMethod::Method1,
                MethodArg::Method2 => CleaningMethod::Method2,
            }),
        ),
        Command::Prepare => commands::prepare(&ctx),
        Command::Finetune => commands::finetune(&ctx),
        Command::Evaluate => commands::evaluate(
            &ctx,
            match cli.engine {
                EngineArg::Finetuned => Engine::FineTuned,
                EngineArg::Baseline => Engine::Baseline,
            },
        ),
        Command::Report { predictions_dir } => commands::report(&ctx, predictions_dir.as_deref()),
        Command::Stub { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(triage_cli::exit_code(&e))
        }
    }
}

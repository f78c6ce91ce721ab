use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Args, CommandFactory, Parser, Subcommand};

use hiero_lora::evaluation::Metric;
use hiero_lora::run::{self, parse_override, AblationMode, RunConfig};
use hiero_lora::Result;

#[derive(Parser)]
#[command(name = "hiero-lora", version, about = "Hierarchical label-routed LoRA adapters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config sources shared by every config-driven command; flags win over the
/// file, the file over built-in defaults.
#[derive(Args)]
struct ConfigArgs {
    /// JSON run config with a `schema_version` field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides one config field, e.g. `--set train.max_steps=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut o = self
            .overrides
            .iter()
            .map(|s| parse_override(s))
            .collect::<Result<Vec<_>>>()?;
        if let Some(seed) = self.seed {
            o.push(("seed".into(), seed.to_string()));
        }
        RunConfig::resolve(self.config.as_deref(), &o)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic bilingual corpus.
    GenData(ConfigArgs),
    /// Train the level-1, level-2 and level-3 adapters.
    Train(ConfigArgs),
    /// Predict labels top-down with a trained adapter bank.
    Predict {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `bank.json` written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSONL input; label fields are optional.
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Score predictions against gold labels.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value = "all", value_parser = PossibleValuesParser::new(["icm", "f1", "all"]))]
        metric: String,
        /// Report directory; defaults to the directory of `--pred`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the joint-vs-separate, rank or lambda ablation.
    Ablate {
        #[arg(long, value_parser = PossibleValuesParser::new(AblationMode::NAMES))]
        mode: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn dispatch(cmd: Command) -> Result<String> {
    match cmd {
        Command::GenData(c) => run::cmd_gen_data(&c.resolve()?, c.out.as_deref()),
        Command::Train(c) => run::cmd_train(&c.resolve()?, c.out.as_deref()),
        Command::Predict { cfg, checkpoint, input } => {
            run::cmd_predict(&cfg.resolve()?, &checkpoint, &input, cfg.out.as_deref())
        }
        Command::Evaluate {
            pred,
            gold,
            metric,
            out,
        } => run::cmd_evaluate(&pred, &gold, metric.parse::<Metric>()?, out.as_deref()),
        Command::Ablate { mode, cfg } => run::cmd_ablate(mode.parse()?, &cfg.resolve()?, cfg.out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            let mut cmd = Cli::command();
            let sub = std::env::args().nth(1).unwrap_or_default();
            let usage = match cmd.find_subcommand_mut(&sub) {
                Some(sc) => sc
                    .render_usage()
                    .to_string()
                    .replacen("Usage: ", "Usage: hiero-lora ", 1),
                None => cmd.render_usage().to_string(),
            };
            eprintln!("\n{usage}");
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    let result = run::configure_threads().and_then(|_| dispatch(cli.command));
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(run::exit_code(&e) as u8)
        }
    }
}

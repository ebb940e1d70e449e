use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use distconf::config::ExperimentConfig;
use distconf::pipeline::{self, EvalInputs, Manifest, Partner, PartnerMode};
use distconf::Execution;

/// Distance-based confidence scores for neural-network classifiers.
#[derive(Parser)]
#[command(name = "distconf", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (`key = value` lines). Defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.alpha=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Run single-threaded. Outputs are identical either way.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/test(/novel) CSVs.
    GenData,
    /// Train a model on the train split.
    Train {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Build the exact embedding index of the train split.
    BuildIndex {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Build a Hart-condensed embedding index.
    Condense {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Write per-row predictions and confidence scores.
    Score {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        /// CSV to score; defaults to the test split.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Error-prediction AUC of each confidence score.
    EvalError(EvalArgs),
    /// Novelty-detection AUC of each confidence score.
    EvalNovelty(EvalArgs),
    /// Ensemble accuracy sweep described by a manifest.
    Ensemble {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    /// Second model for hybrid or pair scoring.
    #[arg(long)]
    partner: Option<PathBuf>,
    #[arg(long, requires = "partner")]
    partner_index: Option<PathBuf>,
    /// hybrid | pair | pair-hybrid
    #[arg(long, default_value = "hybrid", requires = "partner")]
    partner_mode: String,
}

impl EvalArgs {
    fn inputs(self) -> distconf::Result<EvalInputs> {
        let partner = match self.partner {
            Some(model) => Some(Partner {
                model,
                index: self.partner_index,
                mode: self.partner_mode.parse::<PartnerMode>()?,
            }),
            None => None,
        };
        Ok(EvalInputs {
            model: self.model,
            index: self.index,
            partner,
        })
    }
}

fn load_config(common: &Common) -> distconf::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for kv in &common.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| distconf::Error::Config {
            key: kv.clone(),
            message: "override must be KEY=VALUE".into(),
        })?;
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> distconf::Result<Vec<PathBuf>> {
    let cfg = load_config(&cli.common)?;
    let exec = if cli.common.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::GenData => pipeline::cmd_gen_data(&cfg),
        Command::Train { model } => pipeline::cmd_train(&cfg, model.as_deref(), exec),
        Command::BuildIndex { model, index } => {
            pipeline::cmd_build_index(&cfg, model.as_deref(), index.as_deref(), exec)
        }
        Command::Condense { model, index } => {
            pipeline::cmd_condense(&cfg, model.as_deref(), index.as_deref(), exec)
        }
        Command::Score {
            model,
            index,
            input,
            output,
        } => pipeline::cmd_score(
            &cfg,
            model.as_deref(),
            index.as_deref(),
            input.as_deref(),
            output.as_deref(),
            exec,
        ),
        Command::EvalError(args) => pipeline::cmd_eval_error(&cfg, &args.inputs()?, exec),
        Command::EvalNovelty(args) => pipeline::cmd_eval_novelty(&cfg, &args.inputs()?, exec),
        Command::Ensemble { manifest } => {
            pipeline::cmd_ensemble(&cfg, &Manifest::load(&manifest)?, exec)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(written) => {
            for p in written {
                println!("{}", display(&p));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("distconf: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

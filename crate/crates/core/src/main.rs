use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use lbc_core::harness::{self, ExperimentConfig};
use lbc_core::spuriousness::ScoreVariant;

#[derive(Parser)]
#[command(name = "lbc", version, about = "Spurious-correlation mitigation by learning beyond classes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML). Without it the synthetic default is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::synthetic_default(0),
        };
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark directory.
    Synth {
        /// Synthetic spec (TOML); defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a dataset and write its attribute vocabulary.
    Ingest(Common),
    /// Train the ERM model only.
    TrainErm(Common),
    /// Run ERM (or load --checkpoint) followed by LBC.
    TrainLbc {
        #[command(flatten)]
        common: Common,
        /// ERM checkpoint to start from instead of training one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        variant: Option<ScoreVariant>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Spuriousness scores of a checkpoint on the training split.
    Scores {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = ScoreVariant::default())]
        variant: ScoreVariant,
    },
    /// Spuriousness embeddings and cluster assignments.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Print the summary of a finished run.
    Report {
        /// Run directory containing report.json.
        dir: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth { spec, seed, out } => {
            let mut spec = match spec {
                Some(p) => harness::load_synth_spec(&p)?,
                None => Default::default(),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let splits = harness::cmd_synth(&spec, &out)?;
            println!(
                "wrote {} train / {} val / {} test samples to {}",
                splits.train.len(),
                splits.val.len(),
                splits.test.len(),
                out.display()
            );
        }
        Command::Ingest(common) => {
            let cfg = common.resolve()?;
            let summary = harness::cmd_ingest(&cfg, &cfg.out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::TrainErm(common) => {
            let report = harness::cmd_train_erm(&common.resolve()?)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::TrainLbc { common, checkpoint, k, variant } => {
            let mut cfg = common.resolve()?;
            if let Some(k) = k {
                cfg.lbc.k = k;
            }
            if let Some(v) = variant {
                cfg.lbc.variant = v;
            }
            cfg.validate()?;
            let report = harness::cmd_train(&cfg, checkpoint.as_deref())
                .with_context(|| format!("run in {}", cfg.out.display()))?;
            print!("{}", harness::format_report(&report));
        }
        Command::Eval { common, checkpoint } => {
            let eval = harness::cmd_eval(&common.resolve()?, &checkpoint)?;
            println!("{}", serde_json::to_string_pretty(&eval)?);
        }
        Command::Scores { common, checkpoint, variant } => {
            let cfg = common.resolve()?;
            harness::cmd_scores(&cfg, &checkpoint, variant)?;
            println!("wrote {}", cfg.out.join("scores.csv").display());
        }
        Command::Embed { common, checkpoint, k } => {
            let path = harness::cmd_embed(&common.resolve()?, &checkpoint, k)?;
            println!("wrote {}", path.display());
        }
        Command::Report { dir } => {
            print!("{}", harness::format_report(&harness::load_report(&dir)?));
        }
    }
    Ok(())
}

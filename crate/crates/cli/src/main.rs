use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use lsiq::experiments::{self, Checkpoint, ExperimentConfig};

#[derive(Parser)]
#[command(name = "lsiq", version, about = "Tabular least-squares inverse Q-learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON). Defaults to the point-mass toy.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Learn from observations only (actions hidden from the learner).
    #[arg(long)]
    lfo: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.lfo |= self.lfo;
        config.validate()?;
        Ok(config)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the soft-optimal expert and save its policy.
    Expert(Common),
    /// Roll out the expert and write demonstrations as JSONL.
    Collect(Common),
    /// Run the imitation loop; writes metrics.csv and checkpoint.json.
    Train(Common),
    /// Score a saved checkpoint with greedy rollouts.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of evaluation episodes; defaults to the checkpoint's config.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Run the property-verification suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Expert(args) => {
            let config = args.load()?;
            let mdp = config.environment.build()?;
            let expert = experiments::train_expert(&mdp, config.expert_beta, 1e-10)?;
            let path = args.out_dir()?.join("expert.json");
            fs::write(&path, serde_json::to_string(&expert)?)?;
            println!(
                "expert saved to {} (failure probability {:.3e})",
                path.display(),
                experiments::failure_probability(&mdp, &expert)
            );
        }
        Command::Collect(args) => {
            let config = args.load()?;
            let mdp = config.environment.build()?;
            let expert = experiments::train_expert(&mdp, config.expert_beta, 1e-10)?;
            let demos = experiments::collect_demonstrations(
                &mdp,
                &expert,
                config.n_expert_trajectories,
                config.horizon(),
                config.lfo,
                config.seed,
            )?;
            let path = args.out_dir()?.join("demos.jsonl");
            demos.write_jsonl(BufWriter::new(File::create(&path)?))?;
            println!("{} transitions written to {}", demos.records.len(), path.display());
        }
        Command::Train(args) => {
            let config = args.load()?;
            let outcome = experiments::train(&config)?;
            let out = args.out_dir()?;
            experiments::write_metrics_csv(&outcome.metrics, BufWriter::new(File::create(out.join("metrics.csv"))?))?;
            outcome.checkpoint(&config).save(out.join("checkpoint.json"))?;
            match outcome.metrics.last() {
                Some(last) => println!(
                    "step {}: success_rate {:.3}, discounted_return {:.4}",
                    last.step, last.success_rate, last.discounted_return
                ),
                None => println!("no evaluations recorded"),
            }
        }
        Command::Eval {
            checkpoint,
            seed,
            episodes,
        } => {
            let ckpt = Checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let config = &ckpt.config;
            let mdp = config.environment.build()?;
            let result = experiments::evaluate(
                &mdp,
                &ckpt.policy,
                episodes.unwrap_or(config.eval_episodes),
                config.horizon(),
                seed.unwrap_or(config.seed),
            )?;
            println!("{}", serde_json::to_string(&result)?);
        }
        Command::Verify { seed } => {
            let report = experiments::verify(seed)?;
            print!("{report}");
            if !report.all_passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

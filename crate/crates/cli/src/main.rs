use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use meee::env::EnvName;
use meee::runner::{self, Overrides, Variant};

#[derive(Parser)]
#[command(name = "meee", version, about = "Model-ensemble exploration and exploitation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train according to a config file; flags override its keys.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        env: Option<EnvName>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a saved policy with its deterministic action.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: EnvName,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(
    config: PathBuf,
    seed: Option<u64>,
    variant: Option<Variant>,
    env: Option<EnvName>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut overrides = Overrides::new();
    if let Some(seed) = seed {
        let seed = i64::try_from(seed).context("--seed must fit in a signed 64-bit integer")?;
        overrides.insert("seed".into(), toml::Value::Integer(seed));
    }
    if let Some(v) = variant {
        overrides.insert("variant".into(), v.as_str().into());
    }
    if let Some(e) = env {
        overrides.insert("env_name".into(), e.as_str().into());
    }
    if let Some(dir) = out {
        overrides.insert("out_dir".into(), dir.to_string_lossy().into_owned().into());
    }
    let cfg = runner::load_config_with(&config, &overrides)?;
    let outcome = runner::run_experiment::<f64>(&cfg)?;
    match outcome.rows.last() {
        Some(last) => println!(
            "{} on {}: {} env steps, final return {:.4} ± {:.4}",
            cfg.variant, cfg.env_name, outcome.total_env_steps, last.eval_return_mean, last.eval_return_std
        ),
        None => println!("{} on {}: {} env steps, no evaluations", cfg.variant, cfg.env_name, outcome.total_env_steps),
    }
    println!("outputs written to {}", cfg.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            variant,
            env,
            out,
        } => run(config, seed, variant, env, out),
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
        } => runner::evaluate_checkpoint(&checkpoint, env, episodes, seed)
            .map(|(mean, std)| println!("return {mean:.6} ± {std:.6} over {episodes} episodes"))
            .map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dbc_core::envs::GoalBand;
use dbc_core::guidance::Method;
use dbc_core::harness::{self, summary_line, ExperimentConfig};
use dbc_core::Result;

#[derive(Parser)]
#[command(name = "dbc", version, about = "Diffusion-guided behavioral cloning experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; unset keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the scripted expert and write demos.csv.
    GenDemos,
    /// Train the diffusion model on demos.csv.
    TrainDm,
    /// Train the guided policy against dm.ckpt.
    TrainPolicy,
    /// Train a comparison method.
    TrainBaseline {
        #[arg(long)]
        method: Method,
    },
    /// Evaluate a trained checkpoint on one goal band.
    Eval {
        #[arg(long, default_value = "eval")]
        band: GoalBand,
        #[arg(long, default_value = "dbc")]
        method: Method,
        /// Evaluate this file instead of `<method>.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Guidance-weight sweep over paired seeds.
    Sweep,
    /// Dump the denoising field of dm.ckpt.
    Field,
    /// Train BC on demos plus an equal number of diffusion samples.
    Augment,
    /// Write trajectory-fraction subsets of demos.csv.
    Fraction,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| dbc_core::Error::config(format!("override `{kv}` is not key=value")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn wrote(path: &Path) {
    println!("wrote {}", path.display());
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let out = &cli.common.out;
    match cli.command {
        Command::GenDemos => wrote(&harness::gen_demos(&cfg, out)?),
        Command::TrainDm => wrote(&harness::train_dm(&cfg, out)?),
        Command::TrainPolicy => wrote(&harness::train_policy_stage(&cfg, out)?),
        Command::TrainBaseline { method } => wrote(&harness::train_baseline(&cfg, out, method)?),
        Command::Eval {
            band,
            method,
            checkpoint,
        } => {
            let report = harness::eval_stage(&cfg, out, method, band, checkpoint.as_deref())?;
            println!("{}", summary_line(&report));
        }
        Command::Sweep => {
            let rows = harness::sweep(&cfg, out)?;
            print!("{}", harness::sweep_csv(&rows));
        }
        Command::Field => wrote(&harness::field_stage(&cfg, out)?),
        Command::Augment => {
            let (data, path) = harness::augment(&cfg, out)?;
            println!("augmented dataset: {} pairs", data.len());
            wrote(&path);
        }
        Command::Fraction => {
            for p in harness::fractions(out)? {
                wrote(&p);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

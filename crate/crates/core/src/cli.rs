//! `peghole` command line.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::agents::{Policy, RandomPolicy, SacAgent, ScriptedController};
use crate::error::{Error, Result};
use crate::experiment::{self, EvalRow, EvalSet, ExperimentConfig};
use crate::procgen::export::{export_meshes, ModuleMetadata};
use crate::vecenv::{generate_module, module_seed, quantile};

#[derive(Debug, Parser)]
#[command(name = "peghole", version, about = "Procedurally generated peg-in-hole assembly experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SetArg {
    Train,
    Test,
}

impl From<SetArg> for EvalSet {
    fn from(s: SetArg) -> Self {
        match s {
            SetArg::Train => EvalSet::Train,
            SetArg::Test => EvalSet::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write `count` module directories (peg.obj, plate.obj, module.json).
    Generate {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Radial clearance in meters.
        #[arg(long)]
        clearance: Option<f64>,
        /// Experiment config whose generator ranges are used.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run episodes with a fixed policy and write their records as JSONL.
    Rollout {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `scripted`, `random` or a checkpoint path.
        #[arg(long)]
        policy: String,
        #[arg(long, default_value_t = 640)]
        episodes: usize,
        #[arg(long, value_enum, default_value_t = SetArg::Test)]
        set: SetArg,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the module clearance, meters.
        #[arg(long)]
        clearance: Option<f64>,
        /// Write one JSONL trace per episode.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train SAC; writes metrics, checkpoints and a final train/test evaluation.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate metrics and evaluation files into CSV tables.
    Report {
        #[arg(long, num_args = 1..)]
        metrics: Vec<PathBuf>,
        #[arg(long, num_args = 1..)]
        eval: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Histogram bin width, seconds.
        #[arg(long, default_value_t = 0.5)]
        bin_width: f64,
    },
    /// Print the effective default configuration.
    Config {
        #[arg(long)]
        easy: bool,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn apply_clearance(config: &mut ExperimentConfig, clearance: Option<f64>) -> Result<()> {
    if let Some(c) = clearance {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidConfig(format!("clearance must be positive, got {c}")));
        }
        config.env.generator.clearance = c;
    }
    Ok(())
}

/// Output directory: `--out`, else the env override, else the config value.
fn output_dir(config: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| config.resolved_output_dir())
}

fn summarize(rows: &[EvalRow]) -> String {
    let successes = rows.iter().filter(|r| r.record.success).count();
    let mut times: Vec<f64> = rows.iter().filter(|r| r.record.success).map(|r| r.record.sim_time).collect();
    times.sort_by(f64::total_cmp);
    let median = if times.is_empty() { "n/a".to_string() } else { format!("{:.2} s", quantile(&times, 0.5)) };
    format!(
        "episodes {} success {:.2}% median completion {median}",
        rows.len(),
        100.0 * successes as f64 / rows.len().max(1) as f64
    )
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { count, seed, out, clearance, config } => {
            if count == 0 {
                return Err(Error::Usage("--count must be at least 1".into()));
            }
            let mut config = load_config(config.as_deref())?;
            apply_clearance(&mut config, clearance)?;
            config.env.generator.validate()?;
            let out = out.unwrap_or_else(|| config.resolved_output_dir().join("modules"));
            for i in 0..count {
                let module = generate_module(&config.env.generator, module_seed(seed, i as u64))?;
                let dir = out.join(format!("module_{i:05}"));
                export_meshes(&module, &dir)?;
                log::debug!("{}: {}", dir.display(), ModuleMetadata::from_module(&module).digest());
            }
            println!("wrote {count} modules to {}", out.display());
        }
        Command::Rollout { config, policy, episodes, set, seed, clearance, trace, out } => {
            let mut config = load_config(config.as_deref())?;
            apply_clearance(&mut config, clearance)?;
            if let Some(s) = seed {
                config.seed = s;
            }
            let out = output_dir(&config, out);
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let policy: Box<dyn Policy> = match policy.as_str() {
                "scripted" => Box::new(ScriptedController::default()),
                "random" => Box::new(RandomPolicy),
                path => {
                    let path = Path::new(path);
                    if !path.exists() {
                        return Err(Error::Checkpoint(format!("no checkpoint at {}", path.display())));
                    }
                    Box::new(SacAgent::load(path)?.0.policy(true))
                }
            };
            let trace_dir = out.join("traces");
            let rows = experiment::rollout(&config, policy.as_ref(), set.into(), episodes, trace.then_some(trace_dir.as_path()))?;
            let path = out.join(format!("rollout_{}_{}.jsonl", policy.name(), EvalSet::from(set).name()));
            experiment::write_jsonl(&path, &rows)?;
            println!("{}: {}", policy.name(), summarize(&rows));
            println!("wrote {}", path.display());
        }
        Command::Train { config, seed, resume, out } => {
            let mut config = load_config(config.as_deref())?;
            if let Some(s) = seed {
                config.seed = s;
            }
            if let Some(o) = out {
                config.output_dir = o;
            }
            let outcome = experiment::train(&config, resume, None)?;
            let (train, test): (Vec<EvalRow>, Vec<EvalRow>) =
                outcome.eval.into_iter().partition(|r| r.set == EvalSet::Train.name());
            println!("trained to step {}", outcome.global_step);
            println!("train set: {}", summarize(&train));
            println!("test set: {}", summarize(&test));
        }
        Command::Report { metrics, eval, out, bin_width } => {
            if !(bin_width > 0.0) {
                return Err(Error::Usage("--bin-width must be positive".into()));
            }
            for path in experiment::report(&metrics, &eval, &out, bin_width)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Config { easy } => {
            let config = if easy { ExperimentConfig::desk_easy() } else { ExperimentConfig::default() };
            print!("{}", config.to_json());
        }
    }
    Ok(())
}

/// Runs the CLI and maps errors to `error[category]: message` with exit code 1.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            1
        }
    }
}

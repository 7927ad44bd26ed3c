//! Training, evaluation and reporting built on the worker set and SAC.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agents::replay::ReplayBuffer;
use crate::agents::{LossSummary, Policy, RandomPolicy, SacAgent, SacConfig};
use crate::error::{Error, Result};
use crate::procgen::GenConfig;
use crate::vecenv::{
    build_worker_set_range, quantile, run_episodes, splitmix64, EnvConfig, EpisodeRecord, WorkerSet,
};

/// Overrides `output_dir` of every command when set.
pub const OUT_DIR_ENV: &str = "PEGHOLE_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub sac: SacConfig,
    pub workers: usize,
    pub total_steps: u64,
    /// Fraction of `total_steps` over which the spawn ranges widen.
    pub curriculum_fraction: f64,
    pub seed: u64,
    /// Modules per evaluation set; the train set is drawn from the training modules.
    pub eval_modules: usize,
    pub eval_attempts: usize,
    /// Env steps between metrics rows.
    pub metrics_interval: u64,
    /// Env steps between checkpoints.
    pub checkpoint_interval: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            sac: SacConfig::default(),
            workers: 64,
            total_steps: 200_000,
            curriculum_fraction: 0.5,
            seed: 0,
            eval_modules: 64,
            eval_attempts: 10,
            metrics_interval: 6_400,
            checkpoint_interval: 25_600,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    /// Circular pegs with 3 mm clearance; the learner smoke-run setting.
    pub fn desk_easy() -> Self {
        Self {
            env: EnvConfig {
                generator: GenConfig::easy(),
                ..EnvConfig::default()
            },
            output_dir: PathBuf::from("runs/desk_easy"),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.sac.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.workers == 0 || self.eval_modules == 0 || self.eval_attempts == 0 {
            return bad("workers, eval_modules and eval_attempts must be positive");
        }
        if !(self.curriculum_fraction > 0.0 && self.curriculum_fraction <= 1.0) {
            return bad("curriculum_fraction must lie in (0, 1]");
        }
        if self.metrics_interval == 0 || self.checkpoint_interval == 0 {
            return bad("metrics_interval and checkpoint_interval must be positive");
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Output directory after the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn curriculum_progress(&self, step: u64) -> f64 {
        (step as f64 / (self.curriculum_fraction * self.total_steps as f64)).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub median_completion_time: Option<f64>,
    pub curriculum_progress: f64,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub entropy: Option<f64>,
    pub updates: u64,
    pub wall_clock: f64,
    pub seed: u64,
}

impl MetricsRow {
    fn from_window(
        step: u64,
        records: &[EpisodeRecord],
        losses: &[LossSummary],
        progress: f64,
        updates: u64,
        wall_clock: f64,
        seed: u64,
    ) -> Self {
        let n = records.len();
        let mut times: Vec<f64> = records.iter().filter(|r| r.success).map(|r| r.sim_time).collect();
        times.sort_by(f64::total_cmp);
        let mean = |f: fn(&LossSummary) -> f64| {
            (!losses.is_empty()).then(|| losses.iter().map(f).sum::<f64>() / losses.len() as f64)
        };
        Self {
            step,
            episodes: n,
            success_rate: if n == 0 { 0.0 } else { times.len() as f64 / n as f64 },
            mean_return: if n == 0 { 0.0 } else { records.iter().map(|r| r.episode_return).sum::<f64>() / n as f64 },
            median_completion_time: (!times.is_empty()).then(|| quantile(&times, 0.5)),
            curriculum_progress: progress,
            critic_loss: mean(|l| l.critic_loss),
            actor_loss: mean(|l| l.actor_loss),
            entropy: mean(|l| l.entropy),
            updates,
            wall_clock,
            seed,
        }
    }
}

/// One evaluated episode, as written to evaluation JSONL files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub policy: String,
    pub set: String,
    pub seed: u64,
    #[serde(flatten)]
    pub record: EpisodeRecord,
}

fn open_append(path: &Path) -> Result<BufWriter<File>> {
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(file))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(row).map_err(|e| Error::json(path, e))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Parses every non-empty line; errors carry the 1-based line number.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

/// Module index ranges of the two evaluation sets.
pub fn eval_set_range(config: &ExperimentConfig, set: EvalSet) -> (u64, usize) {
    match set {
        EvalSet::Train => (0, config.eval_modules.min(config.workers)),
        EvalSet::Test => (config.workers as u64, config.eval_modules),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSet {
    Train,
    Test,
}

impl EvalSet {
    pub fn name(self) -> &'static str {
        match self {
            EvalSet::Train => "train",
            EvalSet::Test => "test",
        }
    }
}

/// Runs `attempts` full-difficulty episodes on each module of `set`.
pub fn evaluate<P: Policy + ?Sized>(
    config: &ExperimentConfig,
    policy: &P,
    set: EvalSet,
    attempts: usize,
) -> Result<Vec<EvalRow>> {
    let (first, n) = eval_set_range(config, set);
    let mut workers = build_worker_set_range(&config.env, config.seed, first, n, policy.stack_len(), 1.0)?;
    // Evaluation episodes draw from streams distinct from training.
    workers.reseed_streams(splitmix64(config.seed ^ 0x6576_616c));
    let records = run_episodes(&mut workers, policy, attempts)?;
    Ok(records
        .into_iter()
        .map(|record| EvalRow {
            policy: policy.name(),
            set: set.name().into(),
            seed: config.seed,
            record,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub global_step: u64,
    pub rows: Vec<MetricsRow>,
    pub eval: Vec<EvalRow>,
    pub checkpoint: PathBuf,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const CONFIG_FILE: &str = "config.json";

/// Keeps only metrics rows at or before `step`, so a resumed run neither
/// repeats nor skips steps.
fn truncate_metrics(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let rows: Vec<MetricsRow> = read_jsonl(path)?;
    let kept: Vec<_> = rows.into_iter().filter(|r| r.step <= step).collect();
    write_jsonl(path, &kept)
}

/// Collect/update loop with curriculum, metrics, checkpoints and a final
/// train/test evaluation. `stop_after` ends the run early at that step
/// (after checkpointing) to emulate an interruption.
pub fn train(config: &ExperimentConfig, resume: bool, stop_after: Option<u64>) -> Result<TrainOutcome> {
    config.validate()?;
    let out = config.resolved_output_dir();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    std::fs::write(out.join(CONFIG_FILE), config.to_json()).map_err(|e| Error::io(out.join(CONFIG_FILE), e))?;
    let checkpoint_path = out.join(CHECKPOINT_FILE);
    let metrics_path = out.join(METRICS_FILE);

    let (mut agent, mut global_step) = if resume {
        let (agent, step) = SacAgent::load(&checkpoint_path)?;
        if agent.config != config.sac {
            return Err(Error::Checkpoint("checkpoint config differs from the experiment config".into()));
        }
        truncate_metrics(&metrics_path, step)?;
        log::info!("resuming from step {step}");
        (agent, step)
    } else {
        if metrics_path.exists() {
            std::fs::remove_file(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        }
        (SacAgent::new(config.sac.clone(), splitmix64(config.seed ^ 0x7361_6300))?, 0)
    };

    let mut workers: WorkerSet = build_worker_set_range(
        &config.env,
        config.seed,
        0,
        config.workers,
        config.sac.stack_len,
        config.curriculum_progress(global_step),
    )?;
    if global_step > 0 {
        workers.reseed_streams(global_step);
        workers.reset_all()?;
    }
    let mut buffer = ReplayBuffer::new(config.sac.obs_dim(), config.sac.buffer_capacity, config.sac.warmup);
    let mut metrics = open_append(&metrics_path)?;
    let started = Instant::now();
    let mut window: Vec<EpisodeRecord> = Vec::new();
    let mut losses: Vec<LossSummary> = Vec::new();
    let mut rows = Vec::new();
    let mut next_metrics = (global_step / config.metrics_interval + 1) * config.metrics_interval;
    let mut next_checkpoint = (global_step / config.checkpoint_interval + 1) * config.checkpoint_interval;

    while global_step < config.total_steps {
        workers.progress = config.curriculum_progress(global_step);
        // Before the first update the buffer is seeded with uniform actions.
        let (batch, transitions) = if agent.updates == 0 {
            workers.step_policy(&RandomPolicy)?
        } else {
            workers.step_policy(&agent.policy(false))?
        };
        global_step += transitions.len() as u64;
        for t in &transitions {
            buffer.push(t)?;
        }
        window.extend(batch.episodes);
        if buffer.is_warm() {
            for _ in 0..config.sac.train_ratio {
                losses.push(agent.update(&buffer)?);
            }
        }
        if global_step >= next_metrics || global_step >= config.total_steps {
            let row = MetricsRow::from_window(
                global_step,
                &window,
                &losses,
                workers.progress,
                agent.updates,
                started.elapsed().as_secs_f64(),
                config.seed,
            );
            log::info!(
                "step {} episodes {} success {:.3} return {:.3} entropy {:?}",
                row.step,
                row.episodes,
                row.success_rate,
                row.mean_return,
                row.entropy
            );
            let line = serde_json::to_string(&row).map_err(|e| Error::json(&metrics_path, e))?;
            writeln!(metrics, "{line}").map_err(|e| Error::io(&metrics_path, e))?;
            metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
            rows.push(row);
            window.clear();
            losses.clear();
            next_metrics += config.metrics_interval;
        }
        if global_step >= next_checkpoint || global_step >= config.total_steps {
            agent.save(&checkpoint_path, global_step)?;
            next_checkpoint += config.checkpoint_interval;
        }
        if stop_after.is_some_and(|s| global_step >= s) {
            agent.save(&checkpoint_path, global_step)?;
            return Ok(TrainOutcome { global_step, rows, eval: Vec::new(), checkpoint: checkpoint_path });
        }
    }

    let policy = agent.policy(true);
    let mut eval = evaluate(config, &policy, EvalSet::Train, config.eval_attempts)?;
    eval.extend(evaluate(config, &policy, EvalSet::Test, config.eval_attempts)?);
    write_jsonl(&out.join(EVAL_FILE), &eval)?;
    Ok(TrainOutcome { global_step, rows, eval, checkpoint: checkpoint_path })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuccessTableRow {
    pub policy: String,
    pub set: String,
    pub seeds: usize,
    pub episodes: usize,
    pub success_mean: f64,
    pub success_std: f64,
    pub median_completion_time: Option<f64>,
}

/// Success-rate table grouped by (policy, set), aggregated across seeds.
pub fn success_table(rows: &[EvalRow]) -> Vec<SuccessTableRow> {
    let mut groups: BTreeMap<(String, String), BTreeMap<u64, Vec<&EpisodeRecord>>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.policy.clone(), r.set.clone()))
            .or_default()
            .entry(r.seed)
            .or_default()
            .push(&r.record);
    }
    let mut table: Vec<SuccessTableRow> = groups
        .into_iter()
        .map(|((policy, set), seeds)| {
            let rates: Vec<f64> = seeds
                .values()
                .map(|eps| eps.iter().filter(|e| e.success).count() as f64 / eps.len() as f64)
                .collect();
            let mut times: Vec<f64> =
                seeds.values().flatten().filter(|e| e.success).map(|e| e.sim_time).collect();
            times.sort_by(f64::total_cmp);
            let (success_mean, success_std) = mean_std(&rates);
            SuccessTableRow {
                policy,
                set,
                seeds: rates.len(),
                episodes: seeds.values().map(Vec::len).sum(),
                success_mean,
                success_std,
                median_completion_time: (!times.is_empty()).then(|| quantile(&times, 0.5)),
            }
        })
        .collect();
    // Train rows before test rows within a policy.
    table.sort_by(|a, b| (&a.policy, a.set != "train").cmp(&(&b.policy, b.set != "train")));
    table
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub policy: String,
    pub set: String,
    pub bin_start: f64,
    pub bin_end: f64,
    pub count: usize,
}

/// Completion-time histogram of successful episodes, one bin per `width` seconds.
pub fn completion_histogram(rows: &[EvalRow], width: f64) -> Vec<HistogramBin> {
    let mut counts: BTreeMap<(String, String, i64), usize> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.record.success) {
        let bin = (r.record.sim_time / width).floor() as i64;
        *counts.entry((r.policy.clone(), r.set.clone(), bin)).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|((policy, set, bin), count)| HistogramBin {
            policy,
            set,
            bin_start: bin as f64 * width,
            bin_end: (bin + 1) as f64 * width,
            count,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub step: u64,
    pub seeds: usize,
    pub success_mean: f64,
    pub success_std: f64,
    pub return_mean: f64,
    pub return_std: f64,
}

/// Learning curve across metrics files (one per seed), aligned by step.
pub fn learning_curve(files: &[Vec<MetricsRow>]) -> Vec<CurveRow> {
    let mut by_step: BTreeMap<u64, Vec<&MetricsRow>> = BTreeMap::new();
    for rows in files {
        for r in rows {
            by_step.entry(r.step).or_default().push(r);
        }
    }
    by_step
        .into_iter()
        .map(|(step, rows)| {
            let (sm, ss) = mean_std(&rows.iter().map(|r| r.success_rate).collect::<Vec<_>>());
            let (rm, rs) = mean_std(&rows.iter().map(|r| r.mean_return).collect::<Vec<_>>());
            CurveRow { step, seeds: rows.len(), success_mean: sm, success_std: ss, return_mean: rm, return_std: rs }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let value = serde_json::to_value(row).map_err(|e| Error::json(path, e))?;
        let cells: Vec<String> = header
            .iter()
            .map(|h| match &value[*h] {
                serde_json::Value::Null => String::new(),
                serde_json::Value::String(s) => s.clone(),
                v => v.to_string(),
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes `success_table.csv`, `completion_histogram.csv` and, when metrics
/// are given, `learning_curve.csv` into `out`.
pub fn report(metrics: &[PathBuf], evals: &[PathBuf], out: &Path, bin_width: f64) -> Result<Vec<PathBuf>> {
    if metrics.is_empty() && evals.is_empty() {
        return Err(Error::Usage("report needs at least one --metrics or --eval file".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    if !evals.is_empty() {
        let mut rows: Vec<EvalRow> = Vec::new();
        for p in evals {
            rows.extend(read_jsonl::<EvalRow>(p)?);
        }
        let table = success_table(&rows);
        let path = out.join("success_table.csv");
        write_csv(
            &path,
            &table,
            &["policy", "set", "seeds", "episodes", "success_mean", "success_std", "median_completion_time"],
        )?;
        written.push(path);
        let path = out.join("completion_histogram.csv");
        write_csv(&path, &completion_histogram(&rows, bin_width), &["policy", "set", "bin_start", "bin_end", "count"])?;
        written.push(path);
    }
    if !metrics.is_empty() {
        let files = metrics.iter().map(|p| read_jsonl::<MetricsRow>(p)).collect::<Result<Vec<_>>>()?;
        let path = out.join("learning_curve.csv");
        write_csv(
            &path,
            &learning_curve(&files),
            &["step", "seeds", "success_mean", "success_std", "return_mean", "return_std"],
        )?;
        written.push(path);
    }
    Ok(written)
}

/// Runs exactly `episodes` full-difficulty episodes spread over the modules of
/// `set`, attempt-major, optionally writing one trace file per episode.
pub fn rollout<P: Policy + ?Sized>(
    config: &ExperimentConfig,
    policy: &P,
    set: EvalSet,
    episodes: usize,
    trace_dir: Option<&Path>,
) -> Result<Vec<EvalRow>> {
    if episodes == 0 {
        return Err(Error::Usage("--episodes must be positive".into()));
    }
    let (first, n) = eval_set_range(config, set);
    let n = n.min(episodes);
    let attempts = episodes.div_ceil(n);
    let mut workers = build_worker_set_range(&config.env, config.seed, first, n, policy.stack_len(), 1.0)?;
    workers.reseed_streams(splitmix64(config.seed ^ 0x726f_6c6c));
    workers.enable_traces(trace_dir.is_some());
    let mut records = run_episodes(&mut workers, policy, attempts)?;
    records.sort_by_key(|r| (r.attempt, r.worker));
    records.truncate(episodes);
    if let Some(dir) = trace_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for r in &records {
            let worker = &workers.workers[r.worker];
            if let Some((_, rows)) = worker.finished_traces.iter().find(|(a, _)| *a == r.attempt) {
                let path = dir.join(format!("module{:05}_episode{:03}.jsonl", r.module_index, r.attempt));
                crate::env::write_trace(&path, rows)?;
            }
        }
    }
    Ok(records
        .into_iter()
        .map(|record| EvalRow { policy: policy.name(), set: set.name().into(), seed: config.seed, record })
        .collect())
}

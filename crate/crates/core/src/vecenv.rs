//! Lock-step execution of many env workers, one module per worker.
//!
//! Worker `i` is a pure function of `(master_seed, i)`: its module seed, env
//! stream and policy stream are all derived from that pair, so results do
//! not depend on how many threads step the batch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{ObservationStack, Policy};
use crate::env::{Action, EpisodeConfig, Observation, PegInHoleEnv, Status, TraceRow, ACTION_DIM};
use crate::error::{Error, Result};
use crate::physics::PhysicsConfig;
use crate::procgen::{build_module, sample_module_params, AssemblyModule, GenConfig};

/// Added to a module seed whose generation fails.
pub const RESEED_OFFSET: u64 = 1 << 63;
/// Further attempts after the first reseed step by one.
pub const MAX_RESEEDS: u64 = 64;

const STREAM_ENV: u64 = 0x656e_7600;
const STREAM_POLICY: u64 = 0x706f_6c00;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of module `index` under `master_seed`.
pub fn module_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master_seed) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

fn stream_seed(master_seed: u64, index: u64, stream: u64) -> u64 {
    splitmix64(module_seed(master_seed, index) ^ stream)
}

/// Builds the module for `seed`; on failure tries `seed + 2^63`, then
/// `seed + 2^63 + 1`, ... Returns the seed actually used.
pub fn generate_module(config: &GenConfig, seed: u64) -> Result<AssemblyModule> {
    let mut last = match build_module(&sample_module_params(config, seed)) {
        Ok(m) => return Ok(m),
        Err(e) => e,
    };
    for k in 0..MAX_RESEEDS {
        let candidate = seed.wrapping_add(RESEED_OFFSET).wrapping_add(k);
        match build_module(&sample_module_params(config, candidate)) {
            Ok(m) => {
                log::info!("module seed {seed} failed ({last}); reseeded to {candidate}");
                return Ok(m);
            }
            Err(e) => last = e,
        }
    }
    Err(last)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub generator: GenConfig,
    pub episode: EpisodeConfig,
    pub physics: PhysicsConfig,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.episode.validate()?;
        self.physics.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub worker: usize,
    pub module_index: u64,
    pub module_seed: u64,
    /// Per-worker episode counter, from 0.
    pub attempt: usize,
    pub status: Status,
    pub success: bool,
    pub steps: usize,
    /// Simulated time to termination, `steps × control period`.
    pub sim_time: f64,
    pub episode_return: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct Worker {
    pub index: usize,
    pub module_index: u64,
    pub env: PegInHoleEnv,
    pub stack: ObservationStack,
    rng: ChaCha8Rng,
    episode_return: f64,
    diverged: bool,
    attempt: usize,
    /// Traces of finished episodes, keyed by attempt, while tracing is on.
    pub finished_traces: Vec<(usize, Vec<TraceRow>)>,
}

#[derive(Debug, Clone)]
pub struct WorkerSet {
    pub workers: Vec<Worker>,
    pub master_seed: u64,
    pub global_step: u64,
    /// Curriculum progress used by resets.
    pub progress: f64,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStep {
    /// Next observation per worker; after an auto-reset, the fresh episode's first one.
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub statuses: Vec<Status>,
    pub reset_mask: Vec<bool>,
    /// Final observation of episodes that ended this tick.
    pub terminal_observations: Vec<Option<Observation>>,
    pub episodes: Vec<EpisodeRecord>,
}

/// One worker-step of experience with stacked observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// Success or below-surface: no bootstrapping past this step.
    pub terminal: bool,
    /// Any episode end, including timeouts.
    pub done: bool,
}

struct WorkerOutcome {
    observation: Observation,
    reward: f64,
    status: Status,
    reset: bool,
    terminal_observation: Option<Observation>,
    record: Option<EpisodeRecord>,
    transition: Option<Transition>,
}

impl Worker {
    fn step(
        &mut self,
        action: &Action,
        progress: f64,
        keep_transition: bool,
    ) -> Result<WorkerOutcome> {
        let result = self.env.step(action)?;
        self.episode_return += result.reward;
        self.diverged |= result.diverged;
        let transition = keep_transition.then(|| Transition {
            obs: self.stack.as_slice().to_vec(),
            action: *action,
            reward: result.reward,
            next_obs: self.stack.peek_push(&result.observation),
            terminal: result.status.is_terminal(),
            done: result.status.is_done(),
        });
        if !result.status.is_done() {
            self.stack.push(&result.observation);
            return Ok(WorkerOutcome {
                observation: result.observation,
                reward: result.reward,
                status: result.status,
                reset: false,
                terminal_observation: None,
                record: None,
                transition,
            });
        }
        let record = EpisodeRecord {
            worker: self.index,
            module_index: self.module_index,
            module_seed: self.env.module().params.seed,
            attempt: self.attempt,
            status: result.status,
            success: result.status == Status::Success,
            steps: result.step,
            sim_time: result.step as f64 * self.env.physics().control_period(),
            episode_return: self.episode_return,
            diverged: self.diverged,
        };
        if let Some(rows) = self.env.trace() {
            self.finished_traces.push((self.attempt, rows.to_vec()));
        }
        self.attempt += 1;
        let first = self.env.reset(progress)?;
        self.stack.reset(&first);
        self.episode_return = 0.0;
        self.diverged = false;
        Ok(WorkerOutcome {
            observation: first,
            reward: result.reward,
            status: result.status,
            reset: true,
            terminal_observation: Some(result.observation),
            record: Some(record),
            transition,
        })
    }
}

/// Workers for module indices `first_index .. first_index + n_workers`.
pub fn build_worker_set_range(
    config: &EnvConfig,
    master_seed: u64,
    first_index: u64,
    n_workers: usize,
    stack_len: usize,
    progress: f64,
) -> Result<WorkerSet> {
    if n_workers == 0 {
        return Err(Error::Usage("a worker set needs at least one worker".into()));
    }
    config.validate()?;
    let build = |i: usize| -> Result<Worker> {
        let module_index = first_index + i as u64;
        let module = generate_module(&config.generator, module_seed(master_seed, module_index))?;
        let mut env = PegInHoleEnv::new(
            module,
            config.episode,
            config.physics,
            stream_seed(master_seed, module_index, STREAM_ENV),
        )?;
        let first = env.reset(progress)?;
        Ok(Worker {
            index: i,
            module_index,
            env,
            stack: ObservationStack::new(stack_len, &first),
            rng: ChaCha8Rng::seed_from_u64(stream_seed(master_seed, module_index, STREAM_POLICY)),
            episode_return: 0.0,
            diverged: false,
            attempt: 0,
            finished_traces: Vec::new(),
        })
    };
    let workers = (0..n_workers)
        .into_par_iter()
        .map(build)
        .collect::<Result<Vec<_>>>()?;
    Ok(WorkerSet {
        workers,
        master_seed,
        global_step: 0,
        progress,
        parallel: true,
    })
}

pub fn build_worker_set(config: &EnvConfig, master_seed: u64, n_workers: usize) -> Result<WorkerSet> {
    build_worker_set_range(config, master_seed, 0, n_workers, 1, 0.0)
}

impl WorkerSet {
    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.workers.iter().map(|w| *w.env.observation()).collect()
    }

    /// Re-derives every worker's env and policy streams from `salt`, keeping
    /// the modules. Used when resuming so episodes do not replay from the start.
    pub fn reseed_streams(&mut self, salt: u64) {
        for w in &mut self.workers {
            let base = splitmix64(salt ^ w.module_index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            w.env.reseed(stream_seed(self.master_seed, w.module_index, STREAM_ENV) ^ base);
            w.rng = ChaCha8Rng::seed_from_u64(stream_seed(self.master_seed, w.module_index, STREAM_POLICY) ^ base);
        }
    }

    pub fn enable_traces(&mut self, on: bool) {
        for w in &mut self.workers {
            w.env.enable_trace(on);
        }
    }

    /// Resets every worker and its observation history.
    pub fn reset_all(&mut self) -> Result<()> {
        let progress = self.progress;
        let reset = |w: &mut Worker| -> Result<()> {
            let first = w.env.reset(progress)?;
            w.stack.reset(&first);
            w.episode_return = 0.0;
            w.diverged = false;
            Ok(())
        };
        if self.parallel {
            self.workers.par_iter_mut().try_for_each(reset)
        } else {
            self.workers.iter_mut().try_for_each(reset)
        }
    }

    fn run<F>(&mut self, f: F) -> Result<Vec<WorkerOutcome>>
    where
        F: Fn(&mut Worker) -> Result<WorkerOutcome> + Sync + Send,
    {
        let out = if self.parallel {
            self.workers.par_iter_mut().map(f).collect::<Result<Vec<_>>>()
        } else {
            self.workers.iter_mut().map(f).collect::<Result<Vec<_>>>()
        }?;
        self.global_step += self.workers.len() as u64;
        Ok(out)
    }

    pub fn batch_step(&mut self, actions: &[Action]) -> Result<BatchStep> {
        if actions.len() != self.workers.len() {
            return Err(Error::Usage(format!(
                "expected {} action rows of {ACTION_DIM}, got {}",
                self.workers.len(),
                actions.len()
            )));
        }
        let progress = self.progress;
        let outcomes = self.run(|w| w.step(&actions[w.index], progress, false))?;
        Ok(collect_batch(outcomes).0)
    }

    /// Every worker acts with `policy` on its stacked observation and steps once.
    pub fn step_policy<P: Policy + ?Sized>(
        &mut self,
        policy: &P,
    ) -> Result<(BatchStep, Vec<Transition>)> {
        let progress = self.progress;
        let outcomes = self.run(|w| {
            let action = policy.act(w.stack.as_slice(), &mut w.rng);
            w.step(&action, progress, true)
        })?;
        Ok(collect_batch(outcomes))
    }
}

fn collect_batch(outcomes: Vec<WorkerOutcome>) -> (BatchStep, Vec<Transition>) {
    let n = outcomes.len();
    let mut batch = BatchStep {
        observations: Vec::with_capacity(n),
        rewards: Vec::with_capacity(n),
        statuses: Vec::with_capacity(n),
        reset_mask: Vec::with_capacity(n),
        terminal_observations: Vec::with_capacity(n),
        episodes: Vec::new(),
    };
    let mut transitions = Vec::new();
    for o in outcomes {
        batch.observations.push(o.observation);
        batch.rewards.push(o.reward);
        batch.statuses.push(o.status);
        batch.reset_mask.push(o.reset);
        batch.terminal_observations.push(o.terminal_observation);
        batch.episodes.extend(o.record);
        transitions.extend(o.transition);
    }
    (batch, transitions)
}

/// Runs `n_steps` lock-step ticks, returning `n_steps × N` transitions and
/// the episodes that ended along the way.
pub fn collect_rollouts<P: Policy + ?Sized>(
    set: &mut WorkerSet,
    policy: &P,
    n_steps: usize,
) -> Result<(Vec<Transition>, Vec<EpisodeRecord>)> {
    let mut transitions = Vec::with_capacity(n_steps * set.len());
    let mut records = Vec::new();
    for _ in 0..n_steps {
        let (batch, t) = set.step_policy(policy)?;
        transitions.extend(t);
        records.extend(batch.episodes);
    }
    Ok((transitions, records))
}

/// Runs until every worker has finished `episodes_per_worker` episodes; extra
/// episodes are discarded so exactly `N × episodes_per_worker` are returned.
pub fn run_episodes<P: Policy + ?Sized>(
    set: &mut WorkerSet,
    policy: &P,
    episodes_per_worker: usize,
) -> Result<Vec<EpisodeRecord>> {
    let mut done = vec![0usize; set.len()];
    let mut records = Vec::with_capacity(set.len() * episodes_per_worker);
    while done.iter().any(|&d| d < episodes_per_worker) {
        let (batch, _) = set.step_policy(policy)?;
        for r in batch.episodes {
            if done[r.worker] < episodes_per_worker {
                done[r.worker] += 1;
                records.push(r);
            }
        }
    }
    records.sort_by_key(|r| r.worker);
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleResult {
    pub module_index: u64,
    pub module_seed: u64,
    pub successes: usize,
    pub attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub episodes: usize,
    pub success_rate: f64,
    pub modules: Vec<ModuleResult>,
    /// Quartiles (25, 50, 75) of sim time over successful episodes, seconds.
    pub completion_time_quartiles: Option<[f64; 3]>,
    pub records: Vec<EpisodeRecord>,
}

/// Linear-interpolated quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let x = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (i, f) = (x.floor() as usize, x.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - f) + sorted[i + 1] * f
    } else {
        sorted[i]
    }
}

pub fn summarize(policy: String, records: Vec<EpisodeRecord>) -> EvalReport {
    let mut modules: Vec<ModuleResult> = Vec::new();
    for r in &records {
        match modules.iter_mut().find(|m| m.module_index == r.module_index) {
            Some(m) => {
                m.attempts += 1;
                m.successes += r.success as usize;
            }
            None => modules.push(ModuleResult {
                module_index: r.module_index,
                module_seed: r.module_seed,
                successes: r.success as usize,
                attempts: 1,
            }),
        }
    }
    modules.sort_by_key(|m| m.module_index);
    let mut times: Vec<f64> = records.iter().filter(|r| r.success).map(|r| r.sim_time).collect();
    times.sort_by(f64::total_cmp);
    let successes = records.iter().filter(|r| r.success).count();
    EvalReport {
        policy,
        episodes: records.len(),
        success_rate: if records.is_empty() { 0.0 } else { successes as f64 / records.len() as f64 },
        modules,
        completion_time_quartiles: (!times.is_empty())
            .then(|| [quantile(&times, 0.25), quantile(&times, 0.5), quantile(&times, 0.75)]),
        records,
    }
}

/// Runs `attempts` episodes on each of the modules `first_index .. first_index + n_modules`.
pub fn evaluate_policy<P: Policy + ?Sized>(
    config: &EnvConfig,
    master_seed: u64,
    first_index: u64,
    n_modules: usize,
    attempts: usize,
    policy: &P,
    progress: f64,
) -> Result<EvalReport> {
    let mut set =
        build_worker_set_range(config, master_seed, first_index, n_modules, policy.stack_len(), progress)?;
    let records = run_episodes(&mut set, policy, attempts)?;
    Ok(summarize(policy.name(), records))
}

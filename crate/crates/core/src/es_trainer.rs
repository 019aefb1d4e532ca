//! Evolution-strategies training of the proposal policy over whole-episode
//! returns.
//!
//! Each iteration draws noise seeds, sends one task per (seed, sign, episode)
//! to a [`RolloutBackend`], and steps along
//! `g = 1/(n·σ) · Σ_i w_i · sign_i · ε(seed_i)`, where `w_i` is the raw or
//! rank-shaped return of perturbation `i`. Everything that varies between
//! iterations is derived from `(seed, iteration)`, so a run can be resumed from
//! any checkpoint and reproduces the uninterrupted trajectory.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::logs::{append_records, truncate_records, LogError, MetricsRecord};
use crate::policy::{noise_vector, PolicyError, PolicyParams};
use crate::rollout::{run_episode, Agent, EpisodeSummary, RolloutContext};
use crate::rollout_workers::{ResultMessage, RolloutBackend, TaskMessage, WorkerError};
use crate::sas_planner::{PlannerError, DEFAULT_K};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("worker pool failure: {0}")]
    WorkerPool(#[from] WorkerError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Perturbations per iteration (both signs count when antithetic).
    pub population: usize,
    pub sigma: f64,
    pub learning_rate: f64,
    /// Action set size used inside rollouts.
    pub k: usize,
    pub episodes_per_perturbation: usize,
    /// Root of every noise seed.
    pub seed: u64,
    pub iterations: usize,
    pub gamma: f64,
    pub antithetic: bool,
    pub rank_shaping: bool,
    /// Episode cap; 0 plays scenarios to the end.
    pub max_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            population: 32,
            sigma: 0.05,
            learning_rate: 0.01,
            k: DEFAULT_K,
            episodes_per_perturbation: 1,
            seed: 0,
            iterations: 50,
            gamma: 1.0,
            antithetic: true,
            rank_shaping: true,
            max_steps: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.population == 0 {
            return bad("population must be positive");
        }
        if self.antithetic && self.population % 2 != 0 {
            return bad("population must be even with antithetic sampling");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.episodes_per_perturbation == 0 {
            return bad("episodes per perturbation must be positive");
        }
        if self.k == 0 {
            return bad("K must be positive");
        }
        Ok(())
    }

    /// Distinct noise seeds per iteration.
    pub fn directions(&self) -> usize {
        if self.antithetic {
            self.population / 2
        } else {
            self.population
        }
    }

    pub fn tasks_per_iteration(&self) -> usize {
        self.population * self.episodes_per_perturbation
    }
}

/// One finished rollout, as the gradient estimate sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub task_id: u64,
    pub seed: u64,
    pub sign: i8,
    pub total_return: f64,
    pub steps_survived: u64,
    pub mean_risk: f64,
    pub scenario_id: String,
}

impl RolloutResult {
    pub fn from_messages(task: &TaskMessage, result: &ResultMessage) -> Self {
        RolloutResult {
            task_id: task.task_id,
            seed: task.seed,
            sign: task.sign,
            total_return: result.total_return,
            steps_survived: result.steps_survived,
            mean_risk: result.mean_risk,
            scenario_id: task.scenario_id.clone(),
        }
    }
}

/// Noise seeds of one iteration; a pure function of `(root, iteration)`.
pub fn iteration_seeds(root: u64, iteration: usize, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(iteration as u64);
    (0..count).map(|_| rng.next_u64()).collect()
}

/// Tasks of one iteration. Direction `j` evaluates its episodes on scenarios
/// `(iteration·D + j)·E + e` modulo the scenario count, both signs of an
/// antithetic pair sharing them.
pub fn build_tasks(cfg: &TrainConfig, iteration: usize, version: u64, scenario_ids: &[String]) -> Vec<TaskMessage> {
    let dirs = cfg.directions();
    let eps = cfg.episodes_per_perturbation;
    let seeds = iteration_seeds(cfg.seed, iteration, dirs);
    let signs: &[i8] = if cfg.antithetic { &[1, -1] } else { &[1] };
    let base = (iteration * cfg.tasks_per_iteration()) as u64;
    let mut tasks = Vec::with_capacity(cfg.tasks_per_iteration());
    for (j, &seed) in seeds.iter().enumerate() {
        for &sign in signs {
            for e in 0..eps {
                let scenario = &scenario_ids[((iteration * dirs + j) * eps + e) % scenario_ids.len().max(1)];
                tasks.push(TaskMessage {
                    task_id: base + tasks.len() as u64,
                    params_version: version,
                    seed,
                    sign,
                    sigma: cfg.sigma,
                    scenario_id: scenario.clone(),
                    k: cfg.k as u32,
                    max_steps: cfg.max_steps as u32,
                });
            }
        }
    }
    tasks
}

/// Centered ranks in `[-0.5, 0.5]`; tied values share their average rank.
pub fn centered_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks.iter().map(|r| r / (n - 1) as f64 - 0.5).collect()
}

/// Per-seed coefficients `Σ sign·w` in first-appearance order, where each
/// perturbation's return is the mean over its episodes. Also returns the
/// number of perturbations.
fn seed_coefficients(results: &[RolloutResult], rank_shaping: bool) -> (Vec<(u64, f64)>, usize) {
    let mut sorted: Vec<&RolloutResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.task_id);
    let mut groups: Vec<((u64, i8), f64, usize)> = Vec::new();
    let mut at: HashMap<(u64, i8), usize> = HashMap::new();
    for r in sorted {
        let key = (r.seed, r.sign);
        let g = *at.entry(key).or_insert_with(|| {
            groups.push((key, 0.0, 0));
            groups.len() - 1
        });
        groups[g].1 += r.total_return;
        groups[g].2 += 1;
    }
    let returns: Vec<f64> = groups.iter().map(|(_, sum, count)| sum / *count as f64).collect();
    let weights = if rank_shaping { centered_ranks(&returns) } else { returns };
    let mut coefs: Vec<(u64, f64)> = Vec::new();
    let mut seed_at: HashMap<u64, usize> = HashMap::new();
    for (((seed, sign), _, _), w) in groups.iter().zip(weights) {
        let c = *seed_at.entry(*seed).or_insert_with(|| {
            coefs.push((*seed, 0.0));
            coefs.len() - 1
        });
        coefs[c].1 += *sign as f64 * w;
    }
    (coefs, groups.len())
}

/// Gradient estimate with `ε(seed)` supplied by `noise(seed, dim)`.
pub fn estimate_gradient_with(
    results: &[RolloutResult],
    cfg: &TrainConfig,
    dim: usize,
    noise: impl Fn(u64, usize) -> Vec<f64>,
) -> Vec<f64> {
    let mut g = vec![0.0; dim];
    let (coefs, n) = seed_coefficients(results, cfg.rank_shaping);
    if n == 0 {
        return g;
    }
    for (seed, c) in coefs {
        // mirrored pairs with equal weights cancel exactly; skip their noise
        if c == 0.0 {
            continue;
        }
        let eps = noise(seed, dim);
        for (gi, e) in g.iter_mut().zip(&eps) {
            *gi += c * e;
        }
    }
    let scale = 1.0 / (n as f64 * cfg.sigma);
    for gi in &mut g {
        *gi *= scale;
    }
    g
}

/// Gradient estimate with the policy's Gaussian noise stream. Independent of
/// the order `results` arrive in.
pub fn estimate_gradient(results: &[RolloutResult], cfg: &TrainConfig, dim: usize) -> Vec<f64> {
    estimate_gradient_with(results, cfg, dim, noise_vector)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub max_return: f64,
    pub grad_norm: f64,
    pub mean_steps: f64,
    pub results: usize,
    pub wall_time_s: f64,
}

impl IterationStats {
    pub fn to_record(&self) -> MetricsRecord {
        MetricsRecord {
            iteration: self.iteration,
            mean_return: self.mean_return,
            std_return: self.std_return,
            max_return: self.max_return,
            grad_norm: self.grad_norm,
            mean_steps: self.mean_steps,
            wall_time_s: self.wall_time_s,
        }
    }
}

/// One ES iteration on a flat parameter vector: broadcast, dispatch, estimate,
/// step. `theta` is updated in place.
pub fn run_iteration(
    theta: &mut [f64],
    cfg: &TrainConfig,
    backend: &mut dyn RolloutBackend,
    iteration: usize,
    scenario_ids: &[String],
) -> Result<IterationStats, TrainError> {
    run_iteration_with(theta, cfg, backend, iteration, scenario_ids, noise_vector)
}

/// [`run_iteration`] with a custom noise function. The backend must perturb
/// with the same noise.
pub fn run_iteration_with(
    theta: &mut [f64],
    cfg: &TrainConfig,
    backend: &mut dyn RolloutBackend,
    iteration: usize,
    scenario_ids: &[String],
    noise: impl Fn(u64, usize) -> Vec<f64>,
) -> Result<IterationStats, TrainError> {
    cfg.validate()?;
    if scenario_ids.is_empty() {
        return Err(TrainError::Config("no training scenarios".into()));
    }
    let start = Instant::now();
    let version = iteration as u64;
    backend.broadcast(theta, version)?;
    let tasks = build_tasks(cfg, iteration, version, scenario_ids);
    let messages = backend.execute(&tasks)?;
    let by_id: HashMap<u64, &TaskMessage> = tasks.iter().map(|t| (t.task_id, t)).collect();
    let results: Vec<RolloutResult> = messages
        .iter()
        .filter_map(|m| by_id.get(&m.task_id).map(|t| RolloutResult::from_messages(t, m)))
        .collect();
    if results.is_empty() {
        return Err(TrainError::WorkerPool(WorkerError::BelowQuorum {
            results: Vec::new(),
            missing: tasks.iter().map(|t| t.task_id).collect(),
            required: tasks.len(),
        }));
    }
    let g = estimate_gradient_with(&results, cfg, theta.len(), noise);
    for (t, gi) in theta.iter_mut().zip(&g) {
        *t += cfg.learning_rate * gi;
    }
    let returns: Vec<f64> = results.iter().map(|r| r.total_return).collect();
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok(IterationStats {
        iteration,
        mean_return: mean,
        std_return: var.sqrt(),
        max_return: returns.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        grad_norm: g.iter().map(|x| x * x).sum::<f64>().sqrt(),
        mean_steps: results.iter().map(|r| r.steps_survived as f64).sum::<f64>() / n,
        results: results.len(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// A training run on disk: parameters, iteration counter, metrics log and
/// checkpoints `ckpt_NNNNN.bin` holding the parameters after that many
/// iterations.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub params: PolicyParams,
    /// Iterations completed so far.
    pub iteration: usize,
    pub scenario_ids: Vec<String>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint_every: usize,
}

pub const METRICS_FILE: &str = "metrics.tsv";

pub fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("ckpt_{iteration:05}.bin"))
}

/// Newest checkpoint in `dir` and its iteration count.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<(usize, PathBuf)>, std::io::Error> {
    if !dir.exists() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(it) = name.strip_prefix("ckpt_").and_then(|s| s.strip_suffix(".bin")).and_then(|s| s.parse().ok()) {
            if best.as_ref().is_none_or(|(b, _)| it > *b) {
                best = Some((it, path));
            }
        }
    }
    Ok(best)
}

impl Trainer {
    /// Fresh run from `init`.
    pub fn new(cfg: TrainConfig, init: PolicyParams, scenario_ids: Vec<String>) -> Result<Self, TrainError> {
        cfg.validate()?;
        if scenario_ids.is_empty() {
            return Err(TrainError::Config("no training scenarios".into()));
        }
        Ok(Trainer { cfg, params: init, iteration: 0, scenario_ids, out_dir: None, checkpoint_every: 0 })
    }

    /// Writes metrics and checkpoints under `dir`, every `every` iterations
    /// (0 only at the end of [`Trainer::train`]).
    pub fn with_output(mut self, dir: &Path, every: usize) -> Result<Self, TrainError> {
        std::fs::create_dir_all(dir)?;
        self.out_dir = Some(dir.to_path_buf());
        self.checkpoint_every = every;
        Ok(self)
    }

    /// Continues from the newest checkpoint in the output directory, if any.
    /// Metrics beyond that checkpoint are dropped so the log matches.
    pub fn resume(mut self) -> Result<Self, TrainError> {
        let Some(dir) = self.out_dir.clone() else {
            return Ok(self);
        };
        if let Some((it, path)) = latest_checkpoint(&dir)? {
            self.params = PolicyParams::from_bytes_for(&std::fs::read(&path)?, self.params.layers())?;
            self.iteration = it;
            truncate_records::<MetricsRecord>(&dir.join(METRICS_FILE), it)?;
        } else {
            truncate_records::<MetricsRecord>(&dir.join(METRICS_FILE), 0)?;
        }
        Ok(self)
    }

    pub fn step(&mut self, backend: &mut dyn RolloutBackend) -> Result<IterationStats, TrainError> {
        let mut theta = self.params.as_slice().to_vec();
        let stats = run_iteration(&mut theta, &self.cfg, backend, self.iteration, &self.scenario_ids)?;
        self.params.as_mut_slice().copy_from_slice(&theta);
        self.iteration += 1;
        if let Some(dir) = &self.out_dir {
            append_records(&dir.join(METRICS_FILE), &[stats.to_record()])?;
            if self.checkpoint_every > 0 && self.iteration % self.checkpoint_every == 0 {
                self.params.save(&checkpoint_path(dir, self.iteration))?;
            }
        }
        Ok(stats)
    }

    /// Runs until `cfg.iterations` are done, calling `on_iter` after each.
    pub fn train(
        &mut self,
        backend: &mut dyn RolloutBackend,
        mut on_iter: impl FnMut(&IterationStats),
    ) -> Result<Vec<IterationStats>, TrainError> {
        let mut all = Vec::new();
        while self.iteration < self.cfg.iterations {
            let s = self.step(backend)?;
            on_iter(&s);
            all.push(s);
        }
        if let Some(dir) = &self.out_dir {
            let last = checkpoint_path(dir, self.iteration);
            if !last.exists() {
                self.params.save(&last)?;
            }
        }
        Ok(all)
    }
}

/// Outcome of greedy SAS (or do-nothing) over a scenario set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `None` for the do-nothing baseline.
    pub k: Option<usize>,
    pub episodes: Vec<EpisodeSummary>,
    pub mean_return: f64,
    pub mean_survival: f64,
    /// Share of planner steps that fell back to do-nothing.
    pub fallback_rate: f64,
}

impl EvalReport {
    pub fn from_episodes(k: Option<usize>, episodes: Vec<EpisodeSummary>) -> Self {
        let n = episodes.len().max(1) as f64;
        let steps: usize = episodes.iter().map(|e| e.steps_taken).sum();
        let fallbacks: usize = episodes.iter().map(|e| e.fallbacks).sum();
        EvalReport {
            k,
            mean_return: episodes.iter().map(|e| e.total_return).sum::<f64>() / n,
            mean_survival: episodes.iter().map(|e| e.steps_survived as f64).sum::<f64>() / n,
            fallback_rate: if steps > 0 { fallbacks as f64 / steps as f64 } else { 0.0 },
            episodes,
        }
    }
}

fn map_scenarios<T: Send>(
    ctx: &RolloutContext,
    scenarios: &[usize],
    f: impl Fn(usize) -> Result<T, PlannerError> + Sync + Send,
) -> Result<Vec<T>, PlannerError> {
    if let Some(&bad) = scenarios.iter().find(|&&s| s >= ctx.scenarios.len()) {
        return Err(PlannerError::BadIndex(bad));
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        scenarios.par_iter().map(|&s| f(s)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    scenarios.iter().map(|&s| f(s)).collect()
}

/// Plays the unperturbed policy with action set size `k` on each scenario.
pub fn evaluate(
    ctx: &RolloutContext,
    params: &PolicyParams,
    k: usize,
    scenarios: &[usize],
    gamma: f64,
    max_steps: usize,
) -> Result<EvalReport, PlannerError> {
    let episodes = map_scenarios(ctx, scenarios, |s| run_episode(ctx, s, Agent::Sas { params, k }, max_steps, gamma, None))?;
    Ok(EvalReport::from_episodes(Some(k), episodes))
}

pub fn evaluate_do_nothing(
    ctx: &RolloutContext,
    scenarios: &[usize],
    gamma: f64,
    max_steps: usize,
) -> Result<EvalReport, PlannerError> {
    let episodes = map_scenarios(ctx, scenarios, |s| run_episode(ctx, s, Agent::DoNothing, max_steps, gamma, None))?;
    Ok(EvalReport::from_episodes(None, episodes))
}

/// One report per action set size.
pub fn sweep_k(
    ctx: &RolloutContext,
    params: &PolicyParams,
    ks: &[usize],
    scenarios: &[usize],
    gamma: f64,
    max_steps: usize,
) -> Result<Vec<EvalReport>, PlannerError> {
    ks.iter().map(|&k| evaluate(ctx, params, k, scenarios, gamma, max_steps)).collect()
}

/// Test objective `r(θ) = -‖θ - θ*‖²` behind the backend interface.
pub struct QuadraticBackend {
    pub target: Vec<f64>,
    theta: Vec<f64>,
    version: Option<u64>,
    noise: Arc<dyn Fn(u64, usize) -> Vec<f64> + Send + Sync>,
}

impl QuadraticBackend {
    pub fn new(target: Vec<f64>) -> Self {
        Self::with_noise(target, Arc::new(noise_vector))
    }

    pub fn with_noise(target: Vec<f64>, noise: Arc<dyn Fn(u64, usize) -> Vec<f64> + Send + Sync>) -> Self {
        QuadraticBackend { theta: vec![0.0; target.len()], target, version: None, noise }
    }

    pub fn objective(&self, theta: &[f64]) -> f64 {
        -theta.iter().zip(&self.target).map(|(t, s)| (t - s).powi(2)).sum::<f64>()
    }
}

impl RolloutBackend for QuadraticBackend {
    fn broadcast(&mut self, theta: &[f64], version: u64) -> Result<usize, WorkerError> {
        self.theta = theta.to_vec();
        self.version = Some(version);
        Ok(1)
    }

    fn execute(&mut self, tasks: &[TaskMessage]) -> Result<Vec<ResultMessage>, WorkerError> {
        tasks
            .iter()
            .map(|t| {
                if Some(t.params_version) != self.version {
                    return Err(WorkerError::VersionMismatch { want: t.params_version, have: self.version });
                }
                let eps = (self.noise)(t.seed, self.theta.len());
                let point: Vec<f64> = self.theta.iter().zip(&eps).map(|(x, e)| x + t.sign as f64 * t.sigma * e).collect();
                Ok(ResultMessage {
                    task_id: t.task_id,
                    total_return: self.objective(&point),
                    steps_survived: 0,
                    mean_risk: 0.0,
                    worker_id: 0,
                    wall_time_s: 0.0,
                })
            })
            .collect()
    }
}

/// Backend whose every rollout returns the same value.
pub struct ConstantBackend(pub f64);

impl RolloutBackend for ConstantBackend {
    fn broadcast(&mut self, _theta: &[f64], _version: u64) -> Result<usize, WorkerError> {
        Ok(1)
    }

    fn execute(&mut self, tasks: &[TaskMessage]) -> Result<Vec<ResultMessage>, WorkerError> {
        Ok(tasks
            .iter()
            .map(|t| ResultMessage {
                task_id: t.task_id,
                total_return: self.0,
                steps_survived: 0,
                mean_risk: 0.0,
                worker_id: 0,
                wall_time_s: 0.0,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests;

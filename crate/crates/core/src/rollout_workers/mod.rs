//! Parallel execution of perturbed rollouts.
//!
//! Tasks carry a noise seed, never a noise vector; whoever runs a task rebuilds
//! the perturbation locally, so a result only depends on the task and the
//! broadcast parameters. Three interchangeable backends run them: an
//! in-process executor (rayon or sequential), a pool of worker threads and a
//! pool of worker processes, the last two speaking the framed protocol of
//! [`wire`].

use std::borrow::Cow;
use std::io;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::env::Scenario;
use crate::grid::{parse_grid, to_grid_text};
use crate::policy::{NoiseSample, PolicyParams};
use crate::rollout::{run_episode, Agent, RolloutContext};

mod pool;
pub mod wire;
mod worker;

pub use pool::{PoolConfig, WorkerPool};
pub use wire::{FromWorker, ResultMessage, TaskMessage, ToWorker, WireError, WorkerSetup};
pub use worker::{serve, serve_stdio, FaultPlan};

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("worker io: {0}")]
    Io(#[from] io::Error),
    #[error("worker setup failed: {0}")]
    Setup(String),
    #[error("broadcast acknowledged by {acks} workers, {required} required")]
    PartialBroadcast { acks: usize, required: usize },
    #[error("timed out with {} tasks unresolved", missing.len())]
    Timeout { results: Vec<ResultMessage>, missing: Vec<u64> },
    #[error("only {} of {} results arrived, quorum is {required}", results.len(), results.len() + missing.len())]
    BelowQuorum { results: Vec<ResultMessage>, missing: Vec<u64>, required: usize },
    #[error("task {task_id} failed: {message}")]
    TaskFailed { task_id: u64, message: String },
    #[error("task wants parameters version {want}, executor holds {have:?}")]
    VersionMismatch { want: u64, have: Option<u64> },
}

/// Something that can hold the current parameters and run tasks against them.
pub trait RolloutBackend {
    /// Installs `theta` as parameters `version`. Returns how many executors
    /// acknowledged.
    fn broadcast(&mut self, theta: &[f64], version: u64) -> Result<usize, WorkerError>;

    /// Runs every task and returns their results in task order. Backends may
    /// return fewer results when their quorum rules allow it.
    fn execute(&mut self, tasks: &[TaskMessage]) -> Result<Vec<ResultMessage>, WorkerError>;
}

impl WorkerSetup {
    pub fn from_context(ctx: &RolloutContext, gamma: f64) -> Self {
        WorkerSetup {
            grid_text: to_grid_text(&ctx.spec),
            scenarios: ctx.scenarios.iter().map(|s| (s.id.clone(), s.chronics_csv(), s.attacks_csv())).collect(),
            include_redispatch: ctx.include_redispatch,
            hidden: ctx.hidden.iter().map(|&h| h as u32).collect(),
            gamma,
            env: ctx.env_config.clone(),
        }
    }

    pub fn to_context(&self) -> Result<RolloutContext, WorkerError> {
        let spec = parse_grid(&self.grid_text).map_err(|e| WorkerError::Setup(e.to_string()))?;
        let scenarios = self
            .scenarios
            .iter()
            .map(|(id, chronics, attacks)| Scenario::parse(id, chronics, attacks))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| WorkerError::Setup(e.to_string()))?;
        RolloutContext::new(
            spec,
            scenarios,
            self.env.clone(),
            self.include_redispatch,
            self.hidden.iter().map(|&h| h as usize).collect(),
        )
        .map_err(|e| WorkerError::Setup(e.to_string()))
    }
}

/// Runs one task: perturbs `base` by the task's noise and plays the episode.
pub fn run_task(
    ctx: &RolloutContext,
    base: &PolicyParams,
    task: &TaskMessage,
    gamma: f64,
    worker_id: u32,
) -> Result<ResultMessage, String> {
    let start = Instant::now();
    let scenario = ctx.scenario_index(&task.scenario_id).ok_or_else(|| format!("unknown scenario {}", task.scenario_id))?;
    let params = match task.sign {
        0 => Cow::Borrowed(base),
        s => Cow::Owned(base.perturb(NoiseSample { seed: task.seed, sign: s.signum() }, task.sigma)),
    };
    let agent = Agent::Sas { params: &params, k: task.k as usize };
    let summary = run_episode(ctx, scenario, agent, task.max_steps as usize, gamma, None).map_err(|e| e.to_string())?;
    Ok(ResultMessage {
        task_id: task.task_id,
        total_return: summary.total_return,
        steps_survived: summary.steps_survived as u64,
        mean_risk: summary.mean_risk,
        worker_id,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Runs tasks in the calling process.
pub struct LocalExecutor {
    ctx: Arc<RolloutContext>,
    gamma: f64,
    params: Option<(u64, PolicyParams)>,
    #[cfg(feature = "parallel")]
    threads: Option<rayon::ThreadPool>,
}

impl LocalExecutor {
    /// Tasks (and the planner's candidate forecasts) run on the global rayon
    /// pool when the `parallel` feature is on.
    pub fn new(ctx: Arc<RolloutContext>, gamma: f64) -> Self {
        LocalExecutor {
            ctx,
            gamma,
            params: None,
            #[cfg(feature = "parallel")]
            threads: None,
        }
    }

    /// Everything runs on the calling thread, one task after the other.
    pub fn sequential(ctx: Arc<RolloutContext>, gamma: f64) -> Self {
        Self::with_threads(ctx, gamma, 1)
    }

    /// Runs on a private pool of `threads` threads (0 picks the core count).
    /// Without the `parallel` feature this is always sequential.
    pub fn with_threads(ctx: Arc<RolloutContext>, gamma: f64, threads: usize) -> Self {
        #[cfg(not(feature = "parallel"))]
        let _ = threads;
        LocalExecutor {
            ctx,
            gamma,
            params: None,
            #[cfg(feature = "parallel")]
            threads: Some(rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("rollout thread pool")),
        }
    }

    pub fn context(&self) -> &Arc<RolloutContext> {
        &self.ctx
    }

    fn run_all(&self, params: &PolicyParams, tasks: &[TaskMessage]) -> Vec<Result<ResultMessage, String>> {
        let one = |t: &TaskMessage| run_task(&self.ctx, params, t, self.gamma, 0);
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            match &self.threads {
                Some(pool) => pool.install(|| tasks.iter().map(one).collect()),
                None => tasks.par_iter().map(one).collect(),
            }
        }
        #[cfg(not(feature = "parallel"))]
        tasks.iter().map(one).collect()
    }
}

impl RolloutBackend for LocalExecutor {
    fn broadcast(&mut self, theta: &[f64], version: u64) -> Result<usize, WorkerError> {
        let params = PolicyParams::from_flat(self.ctx.policy_layers(), theta.to_vec())
            .map_err(|e| WorkerError::Setup(e.to_string()))?;
        self.params = Some((version, params));
        Ok(1)
    }

    fn execute(&mut self, tasks: &[TaskMessage]) -> Result<Vec<ResultMessage>, WorkerError> {
        let Some((version, params)) = &self.params else {
            return Err(WorkerError::VersionMismatch { want: tasks.first().map_or(0, |t| t.params_version), have: None });
        };
        if let Some(t) = tasks.iter().find(|t| t.params_version != *version) {
            return Err(WorkerError::VersionMismatch { want: t.params_version, have: Some(*version) });
        }
        self.run_all(params, tasks)
            .into_iter()
            .zip(tasks)
            .map(|(r, t)| r.map_err(|message| WorkerError::TaskFailed { task_id: t.task_id, message }))
            .collect()
    }
}

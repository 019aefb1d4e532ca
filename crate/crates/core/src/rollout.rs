//! Full-episode rollouts of an agent against one scenario.

use std::sync::Arc;

use crate::action::Action;
use crate::action_space::{build_catalogue, ActionCatalogue, DEFAULT_RAMP_FRACTIONS};
use crate::env::{EnvConfig, EnvError, Environment, Observation, Scenario};
use crate::grid::GridSpec;
use crate::logs::ReplayRecord;
use crate::policy::{layer_sizes, PolicyParams};
use crate::sas_planner::{select_action, PlannerError};

/// Everything a rollout needs besides the policy: grid, scenarios, catalogue
/// and environment rules. Shared read-only by all workers.
#[derive(Debug, Clone)]
pub struct RolloutContext {
    pub spec: Arc<GridSpec>,
    pub scenarios: Vec<Arc<Scenario>>,
    pub catalogue: Arc<ActionCatalogue>,
    pub env_config: EnvConfig,
    pub include_redispatch: bool,
    pub hidden: Vec<usize>,
}

impl RolloutContext {
    pub fn new(
        spec: GridSpec,
        scenarios: Vec<Scenario>,
        env_config: EnvConfig,
        include_redispatch: bool,
        hidden: Vec<usize>,
    ) -> Result<Self, EnvError> {
        for s in &scenarios {
            s.validate(&spec)?;
        }
        let catalogue = build_catalogue(&spec, include_redispatch, &DEFAULT_RAMP_FRACTIONS);
        Ok(RolloutContext {
            spec: Arc::new(spec),
            scenarios: scenarios.into_iter().map(Arc::new).collect(),
            catalogue: Arc::new(catalogue),
            env_config,
            include_redispatch,
            hidden,
        })
    }

    /// Layer sizes of the policy network for this grid and catalogue.
    pub fn policy_layers(&self) -> Vec<usize> {
        layer_sizes(Observation::dim(&self.spec), &self.hidden, self.catalogue.len())
    }

    pub fn scenario_index(&self, id: &str) -> Option<usize> {
        self.scenarios.iter().position(|s| s.id == id)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Agent<'a> {
    Sas { params: &'a PolicyParams, k: usize },
    DoNothing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub scenario_id: String,
    /// Discounted sum of rewards.
    pub total_return: f64,
    /// Steps taken without collapsing the grid.
    pub steps_survived: usize,
    pub steps_taken: usize,
    pub collapsed: bool,
    pub mean_risk: f64,
    pub fallbacks: usize,
    pub scenario_len: usize,
}

/// Plays one episode. `max_steps = 0` runs to the end of the scenario.
pub fn run_episode(
    ctx: &RolloutContext,
    scenario: usize,
    agent: Agent<'_>,
    max_steps: usize,
    gamma: f64,
    mut replay: Option<&mut Vec<ReplayRecord>>,
) -> Result<EpisodeSummary, PlannerError> {
    let sc = ctx.scenarios[scenario].clone();
    let scenario_id = sc.id.clone();
    let scenario_len = sc.len();
    let (mut env, _) = Environment::reset(ctx.spec.clone(), sc, ctx.env_config.clone())?;
    let cap = if max_steps == 0 { usize::MAX } else { max_steps };
    let mut total_return = 0.0;
    let mut discount = 1.0;
    let mut steps_taken = 0;
    let mut risk_sum = 0.0;
    let mut risk_n = 0usize;
    let mut fallbacks = 0;
    let mut collapsed = false;
    while !env.is_done() && steps_taken < cap {
        let (action, index, k, survivors, fallback, predicted) = match agent {
            Agent::Sas { params, k } => {
                let sel = select_action(&env, params, &ctx.catalogue, k)?;
                (sel.action, sel.index, sel.k, sel.survivors, sel.fallback, sel.predicted_risk)
            }
            Agent::DoNothing => (Action::DoNothing, 0, 0, 0, false, None),
        };
        let t = env.time_step();
        let out = env.step(&action)?;
        steps_taken += 1;
        total_return += discount * out.reward;
        discount *= gamma;
        if let Some(r) = out.info.risk {
            risk_sum += r;
            risk_n += 1;
        }
        fallbacks += fallback as usize;
        collapsed = out.reason.is_failure();
        if let Some(log) = replay.as_deref_mut() {
            log.push(ReplayRecord {
                scenario: scenario_id.clone(),
                step: t,
                action_index: index,
                action: action.to_string(),
                k,
                survivors,
                fallback,
                predicted_risk: predicted,
                realized_risk: out.info.risk,
                reward: out.reward,
                reason: out.reason.as_str().to_string(),
            });
        }
    }
    Ok(EpisodeSummary {
        scenario_id,
        total_return,
        steps_survived: steps_taken - collapsed as usize,
        steps_taken,
        collapsed,
        mean_risk: if risk_n > 0 { risk_sum / risk_n as f64 } else { 0.0 },
        fallbacks,
        scenario_len,
    })
}

//! Per-step action selection: take the policy's K most probable actions,
//! forecast each with `simulate`, drop the ones that break a rule or collapse
//! the grid, and keep the survivor with the lowest predicted risk.

use thiserror::Error;

use crate::action::Action;
use crate::action_space::ActionCatalogue;
use crate::env::{EnvError, Environment, Violation};
use crate::policy::{top_k, PolicyError, PolicyParams};

/// Candidates proposed per step unless configured otherwise.
pub const DEFAULT_K: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("action index {0} outside the catalogue")]
    BadIndex(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEvaluation {
    pub index: usize,
    /// Passed the rule checks and the forecast did not collapse the grid.
    pub legal: bool,
    /// Forecast max loading ratio; present iff `legal`.
    pub risk: Option<f64>,
    /// The forecast ended the episode.
    pub done: bool,
    pub violations: Vec<Violation>,
}

impl CandidateEvaluation {
    pub fn survives(&self) -> bool {
        self.legal && self.risk.is_some()
    }
}

/// Evaluations gathered before the simulation budget ran out.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{error} after {} candidates", evaluated.len())]
pub struct PartialEvaluation {
    pub evaluated: Vec<CandidateEvaluation>,
    pub error: EnvError,
}

fn evaluate_one(env: &Environment, cat: &ActionCatalogue, index: usize) -> Result<CandidateEvaluation, EnvError> {
    let action = cat
        .action_at(index)
        .map_err(|e| EnvError::InvalidScenario(e.to_string()))?;
    let sim = env.simulate(action)?;
    let done = sim.prediction.as_ref().is_some_and(|p| p.done);
    let risk = if sim.legal { sim.risk() } else { None };
    Ok(CandidateEvaluation {
        index,
        legal: sim.legal && risk.is_some(),
        risk,
        done,
        violations: sim.violations,
    })
}

/// One forecast per candidate, results in candidate order. The environment is
/// only read. Without a simulation budget the forecasts run in parallel.
pub fn evaluate_candidates(
    env: &Environment,
    cat: &ActionCatalogue,
    indices: &[usize],
) -> Result<Vec<CandidateEvaluation>, PartialEvaluation> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= cat.len()) {
        return Err(PartialEvaluation {
            evaluated: Vec::new(),
            error: EnvError::InvalidScenario(format!("action index {bad} outside the catalogue")),
        });
    }
    #[cfg(feature = "parallel")]
    if env.config().simulation_budget.is_none() && indices.len() > 1 {
        use rayon::prelude::*;
        let all: Result<Vec<_>, EnvError> = indices.par_iter().map(|&i| evaluate_one(env, cat, i)).collect();
        return all.map_err(|error| PartialEvaluation { evaluated: Vec::new(), error });
    }
    let mut evaluated = Vec::with_capacity(indices.len());
    for &i in indices {
        match evaluate_one(env, cat, i) {
            Ok(e) => evaluated.push(e),
            Err(error) => return Err(PartialEvaluation { evaluated, error }),
        }
    }
    Ok(evaluated)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub action: Action,
    pub index: usize,
    pub k: usize,
    /// Proposed indices in descending probability.
    pub candidates: Vec<usize>,
    pub survivors: usize,
    pub predicted_risk: Option<f64>,
    /// No candidate survived (or none could be evaluated): do-nothing chosen.
    pub fallback: bool,
    /// The simulation budget cut the evaluation short.
    pub budget_exhausted: bool,
}

/// Index of the lowest-risk survivor. `evals` must be in descending-probability
/// order, so the first minimum wins ties by probability, then index.
pub fn argmin_risk(evals: &[CandidateEvaluation]) -> Option<&CandidateEvaluation> {
    let mut best: Option<&CandidateEvaluation> = None;
    for e in evals.iter().filter(|e| e.survives()) {
        if best.is_none_or(|b| e.risk.unwrap() < b.risk.unwrap()) {
            best = Some(e);
        }
    }
    best
}

/// Chooses the next action for `env` from the policy's top-`k` proposals.
///
/// Falls back to do-nothing when every proposal is filtered out. `k` is
/// clipped to the catalogue size.
pub fn select_action(
    env: &Environment,
    params: &PolicyParams,
    cat: &ActionCatalogue,
    k: usize,
) -> Result<Selection, PlannerError> {
    if env.is_done() {
        return Err(EnvError::EpisodeFinished.into());
    }
    let probs = params.forward(env.observation().as_slice())?;
    if probs.len() != cat.len() {
        return Err(PolicyError::DimensionMismatch { expected: cat.len(), got: probs.len() }.into());
    }
    let k = k.clamp(1, cat.len());
    let candidates = top_k(&probs, k);
    let (evals, budget_exhausted) = match evaluate_candidates(env, cat, &candidates) {
        Ok(e) => (e, false),
        Err(PartialEvaluation { evaluated, error: EnvError::SimulationBudgetExhausted }) => (evaluated, true),
        Err(PartialEvaluation { error, .. }) => return Err(error.into()),
    };
    let survivors = evals.iter().filter(|e| e.survives()).count();
    let (index, predicted_risk, fallback) = match argmin_risk(&evals) {
        Some(best) => (best.index, best.risk, false),
        None => (0, None, true),
    };
    let action = if fallback {
        Action::DoNothing
    } else {
        cat.action_at(index).map_err(|_| PlannerError::BadIndex(index))?.clone()
    };
    Ok(Selection {
        action,
        index,
        k,
        candidates,
        survivors,
        predicted_risk,
        fallback,
        budget_exhausted,
    })
}

#[cfg(test)]
mod tests;

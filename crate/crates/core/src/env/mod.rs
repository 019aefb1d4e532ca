//! Episode dynamics: stepping, overload protection, attacks, termination,
//! rewards and the one-step `simulate` forecast.

mod dispatch;
mod observation;
pub mod scenario;

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use thiserror::Error;

pub use observation::Observation;
pub use scenario::{read_scenario_set, Attack, Scenario, STEPS_PER_DAY};

use crate::action::Action;
use crate::grid::{apply_topology_action, isolated_injections, CooldownRules, GridSpec, TopologyState};
use crate::powerflow::{compute_risk, solve_dc, InjectionVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("infeasible dispatch: demand {demand_mw:.1} MW exceeds capacity {capacity_mw:.1} MW")]
    InfeasibleDispatch { demand_mw: f64, capacity_mw: f64 },
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("simulation budget exhausted for this step")]
    SimulationBudgetExhausted,
    #[error("scenario io: {0}")]
    Io(String),
}

/// Per-step reward: `survival_bonus - cost`, zero on a collapse step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub survival_bonus: f64,
    /// Cost of any bus reconfiguration or effective line switch.
    pub topology_cost: f64,
    /// Redispatch cost per unit of `|delta| / p_max`.
    pub redispatch_cost: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            survival_bonus: 1.0,
            topology_cost: 0.01,
            redispatch_cost: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub reward: RewardConfig,
    pub cooldowns: CooldownRules,
    /// Consecutive overloaded steps that trip a line.
    pub overload_steps: u8,
    /// Simulate calls allowed per step; `None` is unlimited.
    pub simulation_budget: Option<u32>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            reward: RewardConfig::default(),
            cooldowns: CooldownRules::default(),
            overload_steps: 3,
            simulation_budget: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Termination {
    None,
    /// A generator or load lost every line connection.
    Islanding,
    /// Some island cannot generate enough to serve its demand.
    UnservedLoad,
    EndOfScenario,
}

impl Termination {
    /// Collapse as opposed to a clean end of the episode.
    pub fn is_failure(self) -> bool {
        matches!(self, Termination::Islanding | Termination::UnservedLoad)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Termination::None => "none",
            Termination::Islanding => "islanding",
            Termination::UnservedLoad => "unserved-load",
            Termination::EndOfScenario => "end-of-scenario",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    UnknownElement(String),
    SubstationCooldown { substation: usize, remaining: u32 },
    LineCooldown { line: usize, remaining: u32 },
    GeneratorLimit { generator: usize },
    RampLimit { generator: usize },
    NotDispatchable { generator: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Legality {
    pub legal: bool,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// Max loading ratio after the step; `None` when the grid collapsed before
    /// a flow could be computed.
    pub risk: Option<f64>,
    pub overloaded_lines: usize,
    pub action_cost: f64,
    /// The requested action was illegal and replaced by do-nothing.
    pub illegal_action: bool,
    pub violations: Vec<Violation>,
    /// Lines tripped by overload protection during this step.
    pub tripped_lines: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub reason: Termination,
    pub info: StepInfo,
}

/// Result of a one-step forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// Passes the rule checks and does not collapse the grid in the forecast.
    pub legal: bool,
    pub violations: Vec<Violation>,
    /// Absent when the rule checks already failed.
    pub prediction: Option<StepOutcome>,
}

impl Simulation {
    pub fn risk(&self) -> Option<f64> {
        self.prediction.as_ref().and_then(|p| p.info.risk)
    }

    pub fn predicted_failure(&self) -> bool {
        self.prediction.as_ref().is_some_and(|p| p.reason.is_failure())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct EnvState {
    t: usize,
    topo: TopologyState,
    gen_mw: Vec<f64>,
    offsets: Vec<f64>,
    load_mw: Vec<f64>,
    rho: Vec<f64>,
    reason: Termination,
}

/// One running episode. Cheap to clone; `simulate` works on a private copy.
#[derive(Debug)]
pub struct Environment {
    spec: Arc<GridSpec>,
    scenario: Arc<Scenario>,
    config: EnvConfig,
    load_peak: Vec<f64>,
    state: EnvState,
    budget_left: AtomicU32,
}

impl Clone for Environment {
    fn clone(&self) -> Self {
        Environment {
            spec: self.spec.clone(),
            scenario: self.scenario.clone(),
            config: self.config.clone(),
            load_peak: self.load_peak.clone(),
            state: self.state.clone(),
            budget_left: AtomicU32::new(self.budget_left.load(Ordering::Relaxed)),
        }
    }
}

impl Environment {
    /// Starts an episode: every element on bus 1, every line in service,
    /// counters at zero, generation balanced against step-0 demand.
    pub fn reset(spec: Arc<GridSpec>, scenario: Arc<Scenario>, config: EnvConfig) -> Result<(Self, Observation), EnvError> {
        scenario.validate(&spec)?;
        let renew = scenario.renewable_by_gen(&spec, 0);
        let demand: f64 = scenario.load_mw[0].iter().sum();
        let capacity: f64 = spec
            .generators
            .iter()
            .map(|g| if g.renewable { renew[g.id].clamp(0.0, g.p_max) } else { g.p_max })
            .sum();
        if demand > capacity + 1e-9 {
            return Err(EnvError::InfeasibleDispatch { demand_mw: demand, capacity_mw: capacity });
        }
        let load_peak = (0..spec.n_loads())
            .map(|d| scenario.load_mw.iter().map(|row| row[d]).fold(0.0, f64::max))
            .collect();

        let mut topo = TopologyState::reference(&spec);
        for a in scenario.attacks.iter().filter(|a| a.step == 0) {
            topo.disconnect_line(&spec, a.line);
            topo.line_cooldown[a.line] = topo.line_cooldown[a.line].max(a.duration);
        }
        let state = EnvState {
            t: 0,
            topo,
            gen_mw: vec![0.0; spec.n_generators()],
            offsets: vec![0.0; spec.n_generators()],
            load_mw: scenario.load_mw[0].clone(),
            rho: vec![0.0; spec.n_lines()],
            reason: Termination::None,
        };
        let budget = config.simulation_budget.unwrap_or(u32::MAX);
        let mut env = Environment {
            spec,
            scenario,
            config,
            load_peak,
            state,
            budget_left: AtomicU32::new(budget),
        };
        let mut state = env.state.clone();
        let (reason, _, _) = env.settle(&mut state, &renew, false);
        state.reason = reason;
        env.state = state;
        let obs = env.observation();
        Ok((env, obs))
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn spec_arc(&self) -> &Arc<GridSpec> {
        &self.spec
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn time_step(&self) -> usize {
        self.state.t
    }

    pub fn topology(&self) -> &TopologyState {
        &self.state.topo
    }

    pub fn rho(&self) -> &[f64] {
        &self.state.rho
    }

    pub fn generation_mw(&self) -> &[f64] {
        &self.state.gen_mw
    }

    pub fn load_mw(&self) -> &[f64] {
        &self.state.load_mw
    }

    pub fn is_done(&self) -> bool {
        self.state.reason != Termination::None
    }

    pub fn termination(&self) -> Termination {
        self.state.reason
    }

    pub fn current_risk(&self) -> f64 {
        self.state.rho.iter().copied().fold(0.0, f64::max)
    }

    pub fn observation(&self) -> Observation {
        self.observe(&self.state)
    }

    /// Replaces the switching state, e.g. to explore arbitrary topologies in
    /// tests and benchmarks. Flows are recomputed against the current step's
    /// chronics; the state is left as found if the topology collapses the grid.
    pub fn with_topology(&self, topo: TopologyState) -> Option<Environment> {
        topo.validate(&self.spec).ok()?;
        let mut env = self.clone();
        env.state.topo = topo;
        let renew = self.scenario.renewable_by_gen(&self.spec, self.state.t);
        let mut state = env.state.clone();
        let (reason, _, _) = env.settle(&mut state, &renew, false);
        if reason.is_failure() {
            return None;
        }
        env.state = state;
        Some(env)
    }

    /// Rule checks that need no power flow: cooldowns, generator limits and
    /// ramps, element existence. Islanding is only caught by simulation.
    pub fn is_legal(&self, action: &Action) -> Legality {
        let spec = &self.spec;
        let topo = &self.state.topo;
        let mut v = Vec::new();
        match *action {
            Action::DoNothing => {}
            Action::SwitchBus { substation, mask } => {
                if substation >= spec.n_substations() {
                    v.push(Violation::UnknownElement(format!("substation {substation}")));
                } else if mask >> spec.slots_of(substation).len() != 0 {
                    v.push(Violation::UnknownElement(format!("bus mask {mask:#b}")));
                } else if topo.substation_cooldown[substation] > 0 {
                    v.push(Violation::SubstationCooldown {
                        substation,
                        remaining: topo.substation_cooldown[substation],
                    });
                }
            }
            Action::SetLineStatus { line, connect } => {
                if line >= spec.n_lines() {
                    v.push(Violation::UnknownElement(format!("line {line}")));
                } else if topo.line_connected[line] != connect && topo.line_cooldown[line] > 0 {
                    v.push(Violation::LineCooldown { line, remaining: topo.line_cooldown[line] });
                }
            }
            Action::Redispatch { generator, delta_mw } => match spec.generators.get(generator) {
                None => v.push(Violation::UnknownElement(format!("generator {generator}"))),
                Some(g) if g.renewable => v.push(Violation::NotDispatchable { generator }),
                Some(g) => {
                    if delta_mw.abs() > g.ramp + 1e-9 || !delta_mw.is_finite() {
                        v.push(Violation::RampLimit { generator });
                    }
                    let target = self.state.gen_mw[generator] + delta_mw;
                    if !(target >= g.p_min - 1e-9 && target <= g.p_max + 1e-9) {
                        v.push(Violation::GeneratorLimit { generator });
                    }
                }
            },
        }
        Legality { legal: v.is_empty(), violations: v }
    }

    /// Advances the episode by one step.
    pub fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        if self.is_done() {
            return Err(EnvError::EpisodeFinished);
        }
        let next_t = self.state.t + 1;
        let attacks: Vec<Attack> = self.scenario.attacks.iter().filter(|a| a.step == next_t).copied().collect();
        let loads = self.scenario.load_mw[next_t].clone();
        let renew = self.scenario.renewable_by_gen(&self.spec, next_t);
        let mut state = self.state.clone();
        let outcome = self.transition(&mut state, action, &attacks, loads, &renew);
        self.state = state;
        self.budget_left
            .store(self.config.simulation_budget.unwrap_or(u32::MAX), Ordering::Relaxed);
        Ok(outcome)
    }

    /// Forecasts the outcome of `action` one step ahead without touching the
    /// episode. Demands and renewable availability are carried forward from
    /// the current step and scheduled attacks are not visible.
    pub fn simulate(&self, action: &Action) -> Result<Simulation, EnvError> {
        if self.is_done() {
            return Err(EnvError::EpisodeFinished);
        }
        if self.config.simulation_budget.is_some() {
            self.budget_left
                .fetch_update(Ordering::AcqRel, Ordering::Acquire, |b| b.checked_sub(1))
                .map_err(|_| EnvError::SimulationBudgetExhausted)?;
        }
        let legality = self.is_legal(action);
        if !legality.legal {
            return Ok(Simulation {
                legal: false,
                violations: legality.violations,
                prediction: None,
            });
        }
        let renew = self.scenario.renewable_by_gen(&self.spec, self.state.t);
        let mut state = self.state.clone();
        let loads = state.load_mw.clone();
        let outcome = self.transition(&mut state, action, &[], loads, &renew);
        Ok(Simulation {
            legal: !outcome.reason.is_failure(),
            violations: Vec::new(),
            prediction: Some(outcome),
        })
    }

    fn transition(
        &self,
        state: &mut EnvState,
        requested: &Action,
        attacks: &[Attack],
        loads: Vec<f64>,
        renewable_mw: &[f64],
    ) -> StepOutcome {
        let spec = &*self.spec;
        let legality = self.is_legal(requested);
        let action = if legality.legal { requested } else { &Action::DoNothing };

        state.topo.tick_cooldowns();
        let mut cost = 0.0;
        match *action {
            Action::DoNothing => {}
            Action::SwitchBus { .. } | Action::SetLineStatus { .. } => {
                if let Ok(next) = apply_topology_action(spec, &state.topo, action, &self.config.cooldowns) {
                    if next.bus_of != state.topo.bus_of || next.line_connected != state.topo.line_connected {
                        cost = self.config.reward.topology_cost;
                    } else if matches!(action, Action::SwitchBus { .. }) {
                        cost = self.config.reward.topology_cost;
                    }
                    state.topo = next;
                }
            }
            Action::Redispatch { generator, delta_mw } => {
                let p_max = spec.generators[generator].p_max;
                state.offsets[generator] = (state.offsets[generator] + delta_mw).clamp(-p_max, p_max);
                if p_max > 0.0 {
                    cost = self.config.reward.redispatch_cost * delta_mw.abs() / p_max;
                }
            }
        }

        state.t += 1;
        for a in attacks {
            if state.topo.line_connected[a.line] {
                state.topo.disconnect_line(spec, a.line);
            }
            state.topo.line_cooldown[a.line] = state.topo.line_cooldown[a.line].max(a.duration);
        }
        state.load_mw = loads;

        let (reason, risk, tripped) = self.settle(state, renewable_mw, true);
        let reason = if reason == Termination::None && state.t + 1 >= self.scenario.len() {
            Termination::EndOfScenario
        } else {
            reason
        };
        state.reason = reason;
        let reward = if reason.is_failure() {
            0.0
        } else {
            self.config.reward.survival_bonus - cost
        };
        StepOutcome {
            observation: self.observe(state),
            reward,
            done: reason != Termination::None,
            reason,
            info: StepInfo {
                risk,
                overloaded_lines: state.rho.iter().filter(|&&r| r > 1.0).count(),
                action_cost: cost,
                illegal_action: !legality.legal,
                violations: legality.violations,
                tripped_lines: tripped,
            },
        }
    }

    /// Balances generation, solves flows and runs overload protection until
    /// no further line trips. Counters advance once per step: a line's new
    /// count is its count at the start of the step plus one if it is
    /// overloaded in the latest flow solution, zero otherwise. Without
    /// `protect` the flows are solved once and counters are left untouched.
    fn settle(&self, state: &mut EnvState, renewable_mw: &[f64], protect: bool) -> (Termination, Option<f64>, Vec<usize>) {
        let spec = &*self.spec;
        let start_counter = state.topo.overload_counter.clone();
        let mut tripped = Vec::new();
        loop {
            if !isolated_injections(spec, &state.topo).is_empty() {
                state.rho.iter_mut().for_each(|r| *r = 0.0);
                return (Termination::Islanding, None, tripped);
            }
            let gen = match dispatch::balance(spec, &state.topo, &state.load_mw, renewable_mw, &state.offsets) {
                Ok(g) => g,
                Err(_) => {
                    state.rho.iter_mut().for_each(|r| *r = 0.0);
                    return (Termination::UnservedLoad, None, tripped);
                }
            };
            state.gen_mw = gen;
            let inj = InjectionVector::from_dispatch(spec, &state.topo, &state.gen_mw, &state.load_mw);
            let pf = match solve_dc(spec, &state.topo, &inj) {
                Ok(pf) if pf.converged => pf,
                _ => return (Termination::UnservedLoad, None, tripped),
            };
            let mut new_trip = false;
            for l in 0..spec.n_lines() {
                if !protect || !state.topo.line_connected[l] {
                    continue;
                }
                let count = if pf.rho[l] > 1.0 { start_counter[l] + 1 } else { 0 };
                if count >= self.config.overload_steps {
                    state.topo.disconnect_line(spec, l);
                    state.topo.line_cooldown[l] = self.config.cooldowns.line_recovery;
                    tripped.push(l);
                    new_trip = true;
                } else {
                    state.topo.overload_counter[l] = count;
                }
            }
            state.rho = pf.rho.clone();
            if !new_trip {
                return (Termination::None, compute_risk(&pf).ok(), tripped);
            }
        }
    }

    fn observe(&self, state: &EnvState) -> Observation {
        observation::build(observation::ObservationInputs {
            spec: &self.spec,
            rules: &self.config.cooldowns,
            topo: &state.topo,
            rho: &state.rho,
            gen_mw: &state.gen_mw,
            load_mw: &state.load_mw,
            load_peak: &self.load_peak,
            step: state.t,
            episode_len: self.scenario.len(),
        })
    }
}

#[cfg(test)]
mod tests;

//! Search-with-action-set grid control.
//!
//! A desk-scale transmission grid simulator (DC power flow, overload
//! protection, attacks, one-step simulation), a feedforward policy that
//! proposes top-K candidate actions, a planner that filters candidates by
//! simulation and picks the least risky survivor, and an evolution-strategies
//! trainer that optimises the policy through the planner as a black box.

pub mod action;
pub mod action_space;
pub mod env;
pub mod es_trainer;
pub mod grid;
pub mod logs;
pub mod policy;
pub mod powerflow;
pub mod rollout;
pub mod rollout_workers;
pub mod sas_planner;
pub mod scenario_gen;

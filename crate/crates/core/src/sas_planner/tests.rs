use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::action_space::build_catalogue;
use crate::env::{Attack, EnvConfig, Observation, Scenario};
use crate::grid::{presets, GridSpec};
use crate::policy::layer_sizes;

fn setup() -> (Environment, ActionCatalogue) {
    let spec = Arc::new(presets::case5());
    let mut sc = Scenario::flat(&spec, 80, 1.0, 0.4);
    sc.attacks = vec![Attack { step: 3, line: 2, duration: 8 }, Attack { step: 9, line: 4, duration: 5 }];
    let cat = build_catalogue(&spec, false, &[]);
    let (env, _) = Environment::reset(spec, Arc::new(sc), EnvConfig::default()).unwrap();
    (env, cat)
}

fn small_policy(spec: &GridSpec, cat: &ActionCatalogue, seed: u64) -> PolicyParams {
    PolicyParams::init(layer_sizes(Observation::dim(spec), &[16, 8], cat.len()), seed)
}

/// Policy that ignores the input and ranks actions by the given output biases.
fn biased_policy(spec: &GridSpec, cat: &ActionCatalogue, favourites: &[usize]) -> PolicyParams {
    let mut p = PolicyParams::zeros(layer_sizes(Observation::dim(spec), &[4], cat.len()));
    let len = p.len();
    for (rank, &i) in favourites.iter().enumerate() {
        p.as_mut_slice()[len - cat.len() + i] = 10.0 - rank as f64;
    }
    p
}

/// Walks a random number of steps with random catalogue actions.
fn random_state(env: &Environment, cat: &ActionCatalogue, rng: &mut ChaCha8Rng) -> Environment {
    let mut env = env.clone();
    for _ in 0..rng.random_range(0..40) {
        let a = cat.action_at(rng.random_range(0..cat.len())).unwrap();
        let mut next = env.clone();
        if next.step(a).is_ok() && !next.is_done() {
            env = next;
        }
    }
    env
}

/// Exhaustive oracle: forecast every catalogue action, keep the ones that pass
/// the rules without collapsing, order by (risk, -probability, index).
fn brute_force(env: &Environment, cat: &ActionCatalogue, probs: &[f64]) -> usize {
    let mut best: Vec<(f64, f64, usize)> = Vec::new();
    for (i, a) in cat.actions().iter().enumerate() {
        let sim = env.simulate(a).unwrap();
        if !sim.legal {
            continue;
        }
        let p = sim.prediction.unwrap();
        if p.reason.is_failure() {
            continue;
        }
        best.push((p.info.risk.unwrap(), -probs[i], i));
    }
    best.sort_by(|a, b| a.partial_cmp(b).unwrap());
    best.first().map(|b| b.2).unwrap_or(0)
}

#[test]
fn empty_candidate_list() {
    let (env, cat) = setup();
    assert!(evaluate_candidates(&env, &cat, &[]).unwrap().is_empty());
}

#[test]
fn do_nothing_on_healthy_grid_is_finite() {
    let (env, cat) = setup();
    let e = evaluate_candidates(&env, &cat, &[0]).unwrap();
    assert_eq!(e.len(), 1);
    assert!(e[0].legal && e[0].risk.unwrap().is_finite() && !e[0].done);
}

#[test]
fn cooldown_violations_are_flagged_individually() {
    let (env, cat) = setup();
    let mut topo = env.topology().clone();
    topo.substation_cooldown[1] = 2;
    let env = env.with_topology(topo).unwrap();
    let blocked = cat.index_of(&Action::SwitchBus { substation: 1, mask: 0b10 }).unwrap();
    let fine = cat.index_of(&Action::SetLineStatus { line: 3, connect: false }).unwrap();
    let e = evaluate_candidates(&env, &cat, &[blocked, 0, fine]).unwrap();
    assert_eq!(e.iter().map(|c| c.index).collect::<Vec<_>>(), vec![blocked, 0, fine]);
    assert!(!e[0].legal && e[0].risk.is_none());
    assert_eq!(e[0].violations, vec![Violation::SubstationCooldown { substation: 1, remaining: 2 }]);
    assert!(e[1].legal && e[2].legal);
}

#[test]
fn budget_exhaustion_returns_partial_results() {
    let spec = Arc::new(presets::case5());
    let cat = build_catalogue(&spec, false, &[]);
    let cfg = EnvConfig { simulation_budget: Some(2), ..EnvConfig::default() };
    let (env, _) = Environment::reset(spec, Arc::new(Scenario::flat(&presets::case5(), 5, 1.0, 0.4)), cfg).unwrap();
    let err = evaluate_candidates(&env, &cat, &[0, 1, 2, 3]).unwrap_err();
    assert_eq!(err.error, EnvError::SimulationBudgetExhausted);
    assert_eq!(err.evaluated.len(), 2);
}

#[test]
fn all_candidates_collapsing_falls_back_to_do_nothing() {
    let (env, cat) = setup();
    let spec = env.spec().clone();
    let hub = spec.slots_of(0);
    let isolating: Vec<usize> = (0..3)
        .map(|d| {
            let bit = hub.iter().position(|&s| s == spec.load_slot(d)).unwrap();
            cat.index_of(&Action::SwitchBus { substation: 0, mask: 1 << bit }).unwrap()
        })
        .collect();
    let p = biased_policy(&spec, &cat, &isolating);
    let sel = select_action(&env, &p, &cat, 3).unwrap();
    assert_eq!(sel.candidates, isolating);
    assert!(sel.fallback);
    assert_eq!(sel.survivors, 0);
    assert_eq!(sel.action, Action::DoNothing);
    let sel = select_action(&env, &p, &cat, 4).unwrap();
    assert!(!sel.fallback);
}

#[test]
fn k_one_takes_the_most_probable_action() {
    let (env, cat) = setup();
    let spec = env.spec().clone();
    let target = cat.index_of(&Action::SetLineStatus { line: 5, connect: false }).unwrap();
    let p = biased_policy(&spec, &cat, &[target]);
    let sel = select_action(&env, &p, &cat, 1).unwrap();
    assert_eq!(sel.index, target);
    assert_eq!(sel.k, 1);
}

#[test]
fn full_catalogue_matches_exhaustive_search() {
    let (env, cat) = setup();
    let spec = env.spec().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..40 {
        let state = random_state(&env, &cat, &mut rng);
        let p = small_policy(&spec, &cat, trial);
        let probs = p.forward(state.observation().as_slice()).unwrap();
        let sel = select_action(&state, &p, &cat, cat.len()).unwrap();
        assert_eq!(sel.index, brute_force(&state, &cat, &probs), "trial {trial}");
    }
}

#[test]
fn rejects_mismatched_policy() {
    let (env, cat) = setup();
    let p = PolicyParams::zeros(vec![3, 2]);
    assert!(matches!(select_action(&env, &p, &cat, 5), Err(PlannerError::Policy(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn selection_properties(seed in any::<u64>(), k in 1usize..40, extra in 1usize..60) {
        let (env, cat) = setup();
        let spec = env.spec().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = random_state(&env, &cat, &mut rng);
        let p = small_policy(&spec, &cat, seed);
        let before = state.observation();

        let sel = select_action(&state, &p, &cat, k).unwrap();
        prop_assert_eq!(&state.observation(), &before);
        prop_assert_eq!(&select_action(&state, &p, &cat, k).unwrap(), &sel);

        let evals = evaluate_candidates(&state, &cat, &sel.candidates).unwrap();
        if let Some(r) = sel.predicted_risk {
            for e in evals.iter().filter(|e| e.survives()) {
                prop_assert!(r <= e.risk.unwrap());
            }
        }

        let wider = select_action(&state, &p, &cat, k + extra).unwrap();
        let narrow_survivors: Vec<usize> = evals.iter().filter(|e| e.survives()).map(|e| e.index).collect();
        let wide_evals = evaluate_candidates(&state, &cat, &wider.candidates).unwrap();
        for i in narrow_survivors {
            prop_assert!(wide_evals.iter().any(|e| e.index == i && e.survives()));
        }
        if let (Some(a), Some(b)) = (sel.predicted_risk, wider.predicted_risk) {
            prop_assert!(b <= a);
        }
    }
}

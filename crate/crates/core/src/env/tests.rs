use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::grid::{presets, GenSpec, GridSpec, LineSpec, LoadSpec, Substation};

fn case5_env(scenario: Scenario) -> Environment {
    let spec = Arc::new(presets::case5());
    Environment::reset(spec, Arc::new(scenario), EnvConfig::default()).unwrap().0
}

fn flat5(len: usize) -> Scenario {
    Scenario::flat(&presets::case5(), len, 1.0, 0.5)
}

/// Generator on A, load on B, nothing on C. With 90 MW served the direct
/// line A-B carries 0.6 pu against a 0.5 pu limit (rho = 1.2) and the detour
/// lines carry 0.3 pu against 1.0.
fn overload_triangle() -> Arc<GridSpec> {
    let sub = |id| Substation { id, name: format!("n{id}") };
    let line = |id, from, to, thermal_limit| LineSpec { id, from, to, reactance: 1.0, thermal_limit };
    Arc::new(
        GridSpec::new(
            "tri",
            vec![sub(0), sub(1), sub(2)],
            vec![line(0, 0, 1, 0.5), line(1, 0, 2, 1.0), line(2, 2, 1, 1.0)],
            vec![GenSpec { id: 0, substation: 0, p_min: 0.0, p_max: 500.0, ramp: 50.0, renewable: false }],
            vec![LoadSpec { id: 0, substation: 1, nominal_mw: 90.0 }],
        )
        .unwrap(),
    )
}

fn demand_series(values: &[f64]) -> Scenario {
    Scenario {
        id: "scripted".into(),
        load_mw: values.iter().map(|&v| vec![v]).collect(),
        renewable_ids: vec![],
        renewable_mw: vec![vec![]; values.len()],
        attacks: vec![],
    }
}

#[test]
fn reset_is_quiescent() {
    let spec = Arc::new(presets::case5());
    let (env, obs) = Environment::reset(spec.clone(), Arc::new(flat5(10)), EnvConfig::default()).unwrap();
    assert_eq!(obs.len(), Observation::dim(&spec));
    assert!(env.rho().iter().all(|&r| r < 1.0 && r > 0.0 || r == 0.0));
    assert!(env.current_risk() < 1.0);
    assert!(env.topology().line_cooldown.iter().all(|&c| c == 0));
    assert!(env.topology().substation_cooldown.iter().all(|&c| c == 0));
    assert!(!env.is_done());
    assert!(obs.features.iter().all(|v| v.is_finite()));
}

#[test]
fn reset_rejects_infeasible_demand() {
    let spec = Arc::new(presets::case5());
    let heavy = Scenario::flat(&spec, 5, 10.0, 1.0);
    let err = Environment::reset(spec, Arc::new(heavy), EnvConfig::default()).unwrap_err();
    assert!(matches!(err, EnvError::InfeasibleDispatch { .. }));
}

#[test]
fn reset_is_deterministic() {
    let spec = Arc::new(presets::case5());
    let sc = Arc::new(flat5(10));
    let (_, a) = Environment::reset(spec.clone(), sc.clone(), EnvConfig::default()).unwrap();
    let (_, b) = Environment::reset(spec, sc, EnvConfig::default()).unwrap();
    let bits = |o: &Observation| o.features.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn do_nothing_on_healthy_grid_earns_full_bonus() {
    let mut env = case5_env(flat5(10));
    let out = env.step(&Action::DoNothing).unwrap();
    assert_eq!(out.reward, 1.0);
    assert!(!out.done);
    assert_eq!(out.reason, Termination::None);
    assert_eq!(out.info.action_cost, 0.0);
}

#[test]
fn sustained_overload_trips_on_third_step_and_locks_for_twelve() {
    let spec = overload_triangle();
    let sc = Arc::new(demand_series(&[90.0; 40]));
    let (mut env, _) = Environment::reset(spec, sc, EnvConfig::default()).unwrap();
    assert!((env.rho()[0] - 1.2).abs() < 1e-12);
    assert_eq!(env.topology().overload_counter[0], 0);

    let o1 = env.step(&Action::DoNothing).unwrap();
    assert_eq!(env.topology().overload_counter[0], 1);
    assert!(o1.info.tripped_lines.is_empty());
    env.step(&Action::DoNothing).unwrap();
    assert_eq!(env.topology().overload_counter[0], 2);
    let o3 = env.step(&Action::DoNothing).unwrap();
    assert_eq!(o3.info.tripped_lines, vec![0]);
    assert!(!env.topology().line_connected[0]);
    assert_eq!(env.topology().line_cooldown[0], 12);
    assert!(!o3.done);
    assert!((env.rho()[1] - 0.9).abs() < 1e-12);

    let reconnect = Action::SetLineStatus { line: 0, connect: true };
    for _ in 0..12 {
        assert!(!env.is_legal(&reconnect).legal);
        let out = env.step(&reconnect).unwrap();
        assert!(out.info.illegal_action);
        assert!(!env.topology().line_connected[0]);
    }
    assert!(env.is_legal(&reconnect).legal);
    let out = env.step(&reconnect).unwrap();
    assert!(!out.info.illegal_action);
    assert!(env.topology().line_connected[0]);
}

#[test]
fn one_step_dip_resets_the_overload_count() {
    let spec = overload_triangle();
    let sc = Arc::new(demand_series(&[90.0, 90.0, 90.0, 60.0, 90.0, 90.0, 90.0, 90.0]));
    let (mut env, _) = Environment::reset(spec, sc, EnvConfig::default()).unwrap();
    let counts: Vec<u8> = (0..7)
        .map(|_| {
            env.step(&Action::DoNothing).unwrap();
            env.topology().overload_counter[0]
        })
        .collect();
    // step 3 is the dip; the line trips on the third overloaded step after it
    assert_eq!(counts[..5], [1, 2, 0, 1, 2]);
    assert!(!env.topology().line_connected[0]);
}

#[test]
fn isolating_a_load_collapses_the_grid() {
    let mut env = case5_env(flat5(10));
    let spec = env.spec().clone();
    let hub_slots = spec.slots_of(0);
    let pos = hub_slots.iter().position(|&s| s == spec.load_slot(0)).unwrap();
    let action = Action::SwitchBus { substation: 0, mask: 1 << pos };
    let sim = env.simulate(&action).unwrap();
    assert!(!sim.legal);
    assert!(sim.predicted_failure());
    let out = env.step(&action).unwrap();
    assert!(out.done);
    assert_eq!(out.reason, Termination::Islanding);
    assert_eq!(out.reward, 0.0);
    assert_eq!(env.step(&Action::DoNothing).unwrap_err(), EnvError::EpisodeFinished);
    assert_eq!(env.simulate(&Action::DoNothing).unwrap_err(), EnvError::EpisodeFinished);
}

#[test]
fn simulate_matches_reality_on_flat_chronics() {
    let mut env = case5_env(flat5(10));
    let sim = env.simulate(&Action::DoNothing).unwrap();
    let real = env.step(&Action::DoNothing).unwrap();
    assert_eq!(sim.prediction.unwrap(), real);
}

#[test]
fn simulate_does_not_see_attacks() {
    let mut sc = flat5(10);
    sc.attacks.push(Attack { step: 1, line: 0, duration: 20 });
    let mut env = case5_env(sc);
    let sim = env.simulate(&Action::DoNothing).unwrap();
    assert!(sim.prediction.as_ref().unwrap().observation.features[1] == 1.0);
    env.step(&Action::DoNothing).unwrap();
    assert!(!env.topology().line_connected[0]);
    assert_eq!(env.topology().line_cooldown[0], 20);
}

#[test]
fn unlimited_budget_allows_many_simulations() {
    let mut env = case5_env(flat5(10));
    for _ in 0..200 {
        env.simulate(&Action::DoNothing).unwrap();
    }
    env.step(&Action::DoNothing).unwrap();
}

#[test]
fn finite_budget_is_enforced_and_refilled() {
    let spec = Arc::new(presets::case5());
    let cfg = EnvConfig { simulation_budget: Some(2), ..EnvConfig::default() };
    let (mut env, _) = Environment::reset(spec, Arc::new(flat5(10)), cfg).unwrap();
    env.simulate(&Action::DoNothing).unwrap();
    env.simulate(&Action::DoNothing).unwrap();
    assert_eq!(env.simulate(&Action::DoNothing).unwrap_err(), EnvError::SimulationBudgetExhausted);
    env.step(&Action::DoNothing).unwrap();
    env.simulate(&Action::DoNothing).unwrap();
}

#[test]
fn legality_checks() {
    let env = case5_env(flat5(10));
    let ok = env.is_legal(&Action::DoNothing);
    assert!(ok.legal && ok.violations.is_empty());

    let too_much = Action::Redispatch { generator: 0, delta_mw: 1000.0 };
    let v = env.is_legal(&too_much);
    assert!(!v.legal);
    assert!(v.violations.contains(&Violation::GeneratorLimit { generator: 0 }));

    let wind = Action::Redispatch { generator: 1, delta_mw: 5.0 };
    assert_eq!(env.is_legal(&wind).violations, vec![Violation::NotDispatchable { generator: 1 }]);

    let mut topo = env.topology().clone();
    topo.substation_cooldown[2] = 2;
    let locked = env.with_topology(topo).unwrap();
    let v = locked.is_legal(&Action::SwitchBus { substation: 2, mask: 0b10 });
    assert_eq!(v.violations, vec![Violation::SubstationCooldown { substation: 2, remaining: 2 }]);
}

#[test]
fn redispatch_moves_generation_and_costs_more_than_switching() {
    let mut env = case5_env(flat5(10));
    let before = env.generation_mw().to_vec();
    let out = env.step(&Action::Redispatch { generator: 2, delta_mw: -20.0 }).unwrap();
    // the east unit gives up 20 MW and the plant, as balancing unit, picks it up
    let after = env.generation_mw();
    assert!((after[2] - (before[2] - 20.0)).abs() < 1e-9);
    assert!((after[0] - (before[0] + 20.0)).abs() < 1e-9);
    assert!((out.info.action_cost - 0.05 * 20.0 / 280.0).abs() < 1e-15);
    let out = env.step(&Action::SwitchBus { substation: 2, mask: 0b10 }).unwrap();
    assert_eq!(out.info.action_cost, 0.01);
}

#[test]
fn illegal_action_in_step_becomes_do_nothing() {
    let mut env = case5_env(flat5(10));
    let mut twin = env.clone();
    let bad = env.step(&Action::Redispatch { generator: 0, delta_mw: 1e6 }).unwrap();
    let idle = twin.step(&Action::DoNothing).unwrap();
    assert!(bad.info.illegal_action);
    assert_eq!(bad.observation, idle.observation);
    assert_eq!(bad.reward, idle.reward);
}

#[test]
fn scenario_files_round_trip() {
    let mut sc = flat5(6);
    sc.id = "s0".into();
    sc.load_mw[3][1] = 77.125;
    sc.attacks = vec![Attack { step: 2, line: 4, duration: 18 }];
    let dir = tempfile::tempdir().unwrap();
    sc.write_dir(&dir.path().join("s0")).unwrap();
    let back = Scenario::read_dir(&dir.path().join("s0")).unwrap();
    assert_eq!(back, sc);
    let set = read_scenario_set(dir.path()).unwrap();
    assert_eq!(set.len(), 1);
}

#[test]
fn malformed_chronics_are_rejected() {
    assert!(Scenario::parse("x", "time,load_0\n0,1\n", "step,line_id,duration\n").is_err());
    assert!(Scenario::parse("x", "step,load_0\n0,abc\n", "step,line_id,duration\n").is_err());
    assert!(Scenario::parse("x", "step,load_0\n1,5\n", "step,line_id,duration\n").is_err());
    let sc = Scenario::parse("x", "step,load_0\n0,5\n", "step,line_id,duration\n0,9,3\n").unwrap();
    assert!(sc.validate(&overload_triangle()).is_err());
}

fn attack_scenario() -> Scenario {
    let spec = presets::case5();
    let mut sc = Scenario::flat(&spec, 60, 1.0, 0.3);
    for (t, row) in sc.load_mw.iter_mut().enumerate() {
        let f = 1.0 + 0.25 * ((t as f64) / 9.0).sin();
        row.iter_mut().for_each(|v| *v *= f);
    }
    sc.attacks = vec![
        Attack { step: 5, line: 2, duration: 6 },
        Attack { step: 20, line: 0, duration: 10 },
        Attack { step: 33, line: 4, duration: 4 },
    ];
    sc
}

fn bits(o: &StepOutcome) -> (Vec<u64>, u64, bool) {
    (o.observation.features.iter().map(|v| v.to_bits()).collect(), o.reward.to_bits(), o.done)
}

fn catalogue_like(spec: &GridSpec, pick: u32) -> Action {
    match pick % 4 {
        0 => Action::DoNothing,
        1 => {
            let s = (pick / 4) as usize % spec.n_substations();
            let n = spec.slots_of(s).len() as u32;
            Action::SwitchBus { substation: s, mask: (pick / 16) % (1 << n) & !1 }
        }
        2 => Action::SetLineStatus { line: (pick / 4) as usize % spec.n_lines(), connect: pick % 8 < 4 },
        _ => Action::Redispatch { generator: 0, delta_mw: ((pick / 4) % 5) as f64 * 10.0 - 20.0 },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn episodes_are_deterministic_and_simulate_is_pure(picks in proptest::collection::vec(any::<u32>(), 1..60)) {
        let spec = Arc::new(presets::case5());
        let sc = Arc::new(attack_scenario());
        let (mut a, _) = Environment::reset(spec.clone(), sc.clone(), EnvConfig::default()).unwrap();
        let (mut b, _) = Environment::reset(spec.clone(), sc, EnvConfig::default()).unwrap();
        let mut total = 0.0;
        let mut expected = 0.0;
        for &p in &picks {
            if a.is_done() { break; }
            let action = catalogue_like(&spec, p);
            let before = a.observation();
            let _ = a.simulate(&action).unwrap();
            let _ = a.simulate(&catalogue_like(&spec, p.rotate_left(7))).unwrap();
            prop_assert_eq!(&before, &a.observation());
            let oa = a.step(&action).unwrap();
            let ob = b.step(&action).unwrap();
            prop_assert_eq!(bits(&oa), bits(&ob));
            total += oa.reward;
            if !oa.reason.is_failure() {
                expected += 1.0 - oa.info.action_cost;
            }
            if !oa.done {
                for l in 0..spec.n_lines() {
                    prop_assert!(!(a.topology().line_connected[l] && a.topology().overload_counter[l] >= 3));
                }
            }
            a.topology().validate(&spec).unwrap();
        }
        prop_assert!((total - expected).abs() < 1e-12);
    }
}

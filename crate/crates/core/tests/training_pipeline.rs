//! Training and evaluation through the public API, across backends.

use std::sync::Arc;

use gridsas::env::EnvConfig;
use gridsas::es_trainer::{checkpoint_path, evaluate, evaluate_do_nothing, TrainConfig, Trainer};
use gridsas::grid::presets;
use gridsas::policy::PolicyParams;
use gridsas::rollout::RolloutContext;
use gridsas::rollout_workers::{FaultPlan, LocalExecutor, PoolConfig, WorkerPool};
use gridsas::scenario_gen::{generate, GeneratorConfig};

fn context() -> RolloutContext {
    let spec = presets::case5();
    let scenarios = generate(&spec, &GeneratorConfig { length: 48, seed: 21, ..Default::default() }, 4);
    RolloutContext::new(spec, scenarios, EnvConfig::default(), false, vec![16]).unwrap()
}

fn config() -> TrainConfig {
    TrainConfig { population: 6, k: 5, iterations: 3, seed: 9, ..Default::default() }
}

fn ids(ctx: &RolloutContext) -> Vec<String> {
    ctx.scenarios.iter().map(|s| s.id.clone()).collect()
}

#[test]
fn faulty_thread_pool_trains_like_a_single_thread() {
    let ctx = context();
    let init = PolicyParams::init(ctx.policy_layers(), 3);

    let mut local = LocalExecutor::sequential(Arc::new(ctx.clone()), 1.0);
    let mut a = Trainer::new(config(), init.clone(), ids(&ctx)).unwrap();
    let want = a.train(&mut local, |_| {}).unwrap();

    let faults = [
        FaultPlan { crash_after_tasks: Some(2), ..Default::default() },
        FaultPlan { duplicate_results: true, ..Default::default() },
        FaultPlan { drop_first_params: true, ..Default::default() },
    ];
    // the crashed worker no longer acks broadcasts, so allow one missing
    let cfg = PoolConfig { quorum: 0.75, ..Default::default() };
    let mut pool = WorkerPool::threads(&ctx, 1.0, 4, &faults, cfg).unwrap();
    let mut b = Trainer::new(config(), init, ids(&ctx)).unwrap();
    let got = b.train(&mut pool, |_| {}).unwrap();
    pool.shutdown();

    assert_eq!(a.params, b.params);
    assert_eq!(want.len(), got.len());
    for (w, g) in want.iter().zip(&got) {
        assert_eq!(w.to_record().mean_return.to_bits(), g.to_record().mean_return.to_bits());
    }
}

#[test]
fn checkpoint_round_trip_evaluates_identically() {
    let ctx = context();
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(config(), PolicyParams::init(ctx.policy_layers(), 4), ids(&ctx))
        .unwrap()
        .with_output(dir.path(), 0)
        .unwrap();
    t.train(&mut LocalExecutor::new(Arc::new(ctx.clone()), 1.0), |_| {}).unwrap();

    let loaded = PolicyParams::load(&checkpoint_path(dir.path(), 3)).unwrap();
    assert_eq!(loaded, t.params);
    let all: Vec<usize> = (0..ctx.scenarios.len()).collect();
    let r1 = evaluate(&ctx, &t.params, 5, &all, 1.0, 0).unwrap();
    let r2 = evaluate(&ctx, &loaded, 5, &all, 1.0, 0).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(r1.episodes.len(), 4);

    let dn = evaluate_do_nothing(&ctx, &all, 1.0, 0).unwrap();
    assert_eq!(dn.k, None);
    assert_eq!(dn.fallback_rate, 0.0);
}

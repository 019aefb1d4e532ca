use proptest::prelude::*;

use super::*;
use crate::env::EnvConfig;
use crate::grid::presets;
use crate::rollout_workers::LocalExecutor;
use crate::scenario_gen::{generate, GeneratorConfig};

fn result(task_id: u64, seed: u64, sign: i8, total_return: f64) -> RolloutResult {
    RolloutResult { task_id, seed, sign, total_return, steps_survived: 0, mean_risk: 0.0, scenario_id: "s000".into() }
}

fn unit_noise(seed: u64, dim: usize) -> Vec<f64> {
    let mut e = vec![0.0; dim];
    e[seed as usize % dim] = 1.0;
    e
}

fn raw_cfg(population: usize, sigma: f64) -> TrainConfig {
    TrainConfig { population, sigma, rank_shaping: false, ..Default::default() }
}

#[test]
fn single_pair_along_unit_noise() {
    // one antithetic pair on e1 with returns 3 and 1, sigma 0.5:
    // g = (3·e1 - 1·e1) / (2·0.5) = 2·e1
    let cfg = raw_cfg(2, 0.5);
    let rs = [result(0, 0, 1, 3.0), result(1, 0, -1, 1.0)];
    let g = estimate_gradient_with(&rs, &cfg, 3, unit_noise);
    assert_eq!(g, vec![2.0, 0.0, 0.0]);
}

#[test]
fn equal_returns_give_exactly_zero_gradient() {
    let cfg = TrainConfig { population: 8, ..Default::default() };
    let rs: Vec<_> = (0..8).map(|i| result(i, 77 + i / 2, if i % 2 == 0 { 1 } else { -1 }, 4.25)).collect();
    let g = estimate_gradient(&rs, &cfg, 50);
    assert!(g.iter().all(|&x| x.to_bits() == 0));
    let g_raw = estimate_gradient(&rs, &raw_cfg(8, 0.05), 50);
    assert!(g_raw.iter().all(|&x| x.to_bits() == 0));
}

#[test]
fn centered_ranks_examples() {
    assert_eq!(centered_ranks(&[1.0, 5.0, 3.0]), vec![-0.5, 0.5, 0.0]);
    assert_eq!(centered_ranks(&[2.0, 2.0, 2.0]), vec![0.0, 0.0, 0.0]);
    assert_eq!(centered_ranks(&[1.0, 2.0, 2.0, 4.0]), vec![-0.5, 0.0, 0.0, 0.5]);
    assert_eq!(centered_ranks(&[9.0]), vec![0.0]);
    assert!(centered_ranks(&[]).is_empty());
}

#[test]
fn episodes_of_one_perturbation_are_averaged() {
    let cfg = TrainConfig { episodes_per_perturbation: 2, ..raw_cfg(2, 1.0) };
    let rs = [result(0, 0, 1, 2.0), result(1, 0, 1, 4.0), result(2, 0, -1, 1.0), result(3, 0, -1, 1.0)];
    // perturbation means 3 and 1, two perturbations
    let g = estimate_gradient_with(&rs, &cfg, 2, unit_noise);
    assert_eq!(g, vec![1.0, 0.0]);
}

#[test]
fn update_step_has_learning_rate_times_gradient_norm() {
    let target: Vec<f64> = (0..16).map(|i| i as f64 * 0.1).collect();
    let mut backend = QuadraticBackend::new(target);
    let cfg = TrainConfig { population: 8, sigma: 0.1, learning_rate: 0.05, ..Default::default() };
    let ids = vec!["a".to_string()];
    let mut theta = vec![0.0; 16];
    let stats = run_iteration(&mut theta, &cfg, &mut backend, 0, &ids).unwrap();
    let step = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
    approx::assert_relative_eq!(step, cfg.learning_rate * stats.grad_norm, max_relative = 1e-12);
    assert!(stats.grad_norm > 0.0);
    assert_eq!(stats.results, 8);
}

#[test]
fn constant_returns_leave_parameters_unchanged() {
    let cfg = TrainConfig { population: 6, ..Default::default() };
    let mut theta = vec![0.25; 10];
    run_iteration(&mut theta, &cfg, &mut ConstantBackend(-3.0), 2, &["a".into()]).unwrap();
    assert_eq!(theta, vec![0.25; 10]);
}

#[test]
fn tasks_pair_signs_and_rotate_scenarios() {
    let cfg = TrainConfig { population: 4, episodes_per_perturbation: 2, ..Default::default() };
    let ids: Vec<String> = (0..5).map(|i| format!("s{i:03}")).collect();
    let t = build_tasks(&cfg, 3, 3, &ids);
    assert_eq!(t.len(), 8);
    assert_eq!(t[0].task_id, 24);
    assert_eq!(t.iter().map(|x| x.task_id).collect::<Vec<_>>(), (24..32).collect::<Vec<_>>());
    // direction 0 of iteration 3 starts at scenario (3·2 + 0)·2 = 12 ≡ 2
    assert_eq!([&t[0].scenario_id, &t[1].scenario_id], [&ids[2], &ids[3]]);
    assert_eq!([&t[2].scenario_id, &t[3].scenario_id], [&ids[2], &ids[3]]);
    assert_eq!((t[0].sign, t[2].sign), (1, -1));
    assert_eq!(t[0].seed, t[3].seed);
    assert_ne!(t[0].seed, t[4].seed);
    assert_eq!(build_tasks(&cfg, 3, 3, &ids), t);
    assert_ne!(iteration_seeds(cfg.seed, 3, 2), iteration_seeds(cfg.seed, 4, 2));
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert!(TrainConfig { population: 3, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { population: 3, antithetic: false, ..Default::default() }.validate().is_ok());
    assert!(TrainConfig { sigma: 0.0, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { gamma: 1.5, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { k: 0, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { episodes_per_perturbation: 0, ..Default::default() }.validate().is_err());
}

#[test]
fn quadratic_objective_improves() {
    let target = vec![1.0; 8];
    let mut backend = QuadraticBackend::new(target);
    let cfg = TrainConfig { population: 16, sigma: 0.1, learning_rate: 0.05, rank_shaping: false, ..Default::default() };
    let mut theta = vec![0.0; 8];
    let start = backend.objective(&theta);
    for it in 0..100 {
        run_iteration(&mut theta, &cfg, &mut backend, it, &["q".into()]).unwrap();
    }
    assert!(backend.objective(&theta) > 0.1 * start, "{} vs {start}", backend.objective(&theta));
}

fn tiny_context() -> Arc<RolloutContext> {
    let spec = presets::case5();
    let cfg = GeneratorConfig { length: 30, seed: 9, ..Default::default() };
    Arc::new(RolloutContext::new(spec.clone(), generate(&spec, &cfg, 4), EnvConfig::default(), false, vec![4]).unwrap())
}

#[test]
fn resumed_training_reproduces_uninterrupted_run() {
    let ctx = tiny_context();
    let ids: Vec<String> = ctx.scenarios.iter().map(|s| s.id.clone()).collect();
    let cfg = TrainConfig { population: 4, iterations: 4, k: 4, sigma: 0.1, learning_rate: 0.1, ..Default::default() };
    let init = PolicyParams::init(ctx.policy_layers(), 1);

    let full_dir = tempfile::tempdir().unwrap();
    let mut full = Trainer::new(cfg.clone(), init.clone(), ids.clone()).unwrap().with_output(full_dir.path(), 2).unwrap();
    full.train(&mut LocalExecutor::new(ctx.clone(), 1.0), |_| {}).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let short = TrainConfig { iterations: 3, ..cfg.clone() };
    let mut first = Trainer::new(short, init.clone(), ids.clone()).unwrap().with_output(dir.path(), 2).unwrap();
    first.train(&mut LocalExecutor::new(ctx.clone(), 1.0), |_| {}).unwrap();
    assert!(checkpoint_path(dir.path(), 3).exists());
    // pretend iteration 3 never finished: only the 2-iteration checkpoint survives
    std::fs::remove_file(checkpoint_path(dir.path(), 3)).unwrap();

    let mut resumed = Trainer::new(cfg, init, ids).unwrap().with_output(dir.path(), 2).unwrap().resume().unwrap();
    assert_eq!(resumed.iteration, 2);
    assert_eq!(read_metrics(dir.path()).len(), 2);
    resumed.train(&mut LocalExecutor::sequential(ctx, 1.0), |_| {}).unwrap();

    assert_eq!(resumed.params.as_slice(), full.params.as_slice());
    let a = read_metrics(full_dir.path());
    let b = read_metrics(dir.path());
    assert_eq!(a.len(), 4);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.iteration, x.mean_return, x.grad_norm), (y.iteration, y.mean_return, y.grad_norm));
    }
    assert_eq!(latest_checkpoint(dir.path()).unwrap().unwrap().0, 4);
}

fn read_metrics(dir: &Path) -> Vec<MetricsRecord> {
    crate::logs::read_records(&dir.join(METRICS_FILE)).unwrap()
}

#[test]
fn evaluation_reports_and_k_sweep() {
    let ctx = tiny_context();
    let p = PolicyParams::init(ctx.policy_layers(), 2);
    let all: Vec<usize> = (0..ctx.scenarios.len()).collect();
    let dn = evaluate_do_nothing(&ctx, &all, 1.0, 0).unwrap();
    assert_eq!(dn.k, None);
    assert_eq!(dn.fallback_rate, 0.0);
    let sweep = sweep_k(&ctx, &p, &[1, 8], &all, 1.0, 10).unwrap();
    assert_eq!(sweep.len(), 2);
    assert_eq!(sweep[1].k, Some(8));
    for r in &sweep {
        assert_eq!(r.episodes.len(), all.len());
        assert!(r.mean_survival <= 10.0);
        assert!((0.0..=1.0).contains(&r.fallback_rate));
    }
    assert!(matches!(evaluate(&ctx, &p, 4, &[99], 1.0, 0), Err(PlannerError::BadIndex(99))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradient_ignores_result_order(
        returns in prop::collection::vec(-10.0f64..10.0, 8),
        perm_seed in any::<u64>(),
        shaped in any::<bool>(),
    ) {
        let cfg = TrainConfig { population: 8, rank_shaping: shaped, ..Default::default() };
        let rs: Vec<_> = returns.iter().enumerate()
            .map(|(i, &r)| result(i as u64, 40 + i as u64 / 2, if i % 2 == 0 { 1 } else { -1 }, r))
            .collect();
        let mut shuffled = rs.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let a = estimate_gradient(&rs, &cfg, 12);
        let b = estimate_gradient(&shuffled, &cfg, 12);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rank_shaping_is_invariant_to_monotone_transforms(
        returns in prop::collection::vec(-10.0f64..10.0, 6),
        scale in 0.1f64..10.0,
        shift in -50.0f64..50.0,
    ) {
        let cfg = TrainConfig { population: 6, ..Default::default() };
        let make = |f: &dyn Fn(f64) -> f64| -> Vec<RolloutResult> {
            returns.iter().enumerate()
                .map(|(i, &r)| result(i as u64, 9 + i as u64 / 2, if i % 2 == 0 { 1 } else { -1 }, f(r)))
                .collect()
        };
        let a = estimate_gradient(&make(&|r| r), &cfg, 10);
        let b = estimate_gradient(&make(&|r| (scale * r + shift).exp().min(f64::MAX)), &cfg, 10);
        let c = estimate_gradient(&make(&|r| r.powi(3) * scale + shift), &cfg, 10);
        prop_assert_eq!(&a, &c);
        // exp may saturate and create ties, so only compare when it did not
        let distinct = returns.iter().map(|&r| (scale * r + shift).exp()).collect::<Vec<_>>();
        if distinct.iter().all(|x| x.is_finite()) {
            prop_assert_eq!(&a, &b);
        }
    }

    #[test]
    fn centered_ranks_stay_in_range_and_sum_to_zero(values in prop::collection::vec(-1e6f64..1e6, 2..40)) {
        let r = centered_ranks(&values);
        prop_assert!(r.iter().all(|x| (-0.5..=0.5).contains(x)));
        prop_assert!(r.iter().sum::<f64>().abs() < 1e-9);
    }
}

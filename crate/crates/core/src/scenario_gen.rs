//! Seeded synthetic chronics: daily demand cycles with noise, bounded random
//! walks for renewable availability, and exogenous line attacks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::env::{Attack, Scenario, STEPS_PER_DAY};
use crate::grid::{electrical_islands, isolated_injections, GridSpec, TopologyState};

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub length: usize,
    /// Expected attacks per simulated day (Poisson).
    pub attacks_per_day: f64,
    /// Attack durations are drawn uniformly from this inclusive range.
    pub attack_duration: (u32, u32),
    /// Relative amplitude of the daily demand swing.
    pub daily_amplitude: f64,
    /// Std of the multiplicative per-step demand noise.
    pub load_noise: f64,
    /// Per-scenario demand level, drawn uniformly from this range.
    pub level: (f64, f64),
    /// Std of a renewable walk step, as a fraction of `p_max`.
    pub renewable_step: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            length: STEPS_PER_DAY,
            attacks_per_day: 2.0,
            attack_duration: (12, 48),
            daily_amplitude: 0.15,
            load_noise: 0.02,
            level: (1.0, 1.1),
            renewable_step: 0.03,
            seed: 0,
        }
    }
}

/// Lines whose loss alone neither splits the grid nor strands an element.
pub fn attackable_lines(spec: &GridSpec) -> Vec<usize> {
    (0..spec.n_lines())
        .filter(|&l| {
            let mut topo = TopologyState::reference(spec);
            topo.disconnect_line(spec, l);
            electrical_islands(spec, &topo).count() == 1 && isolated_injections(spec, &topo).is_empty()
        })
        .collect()
}

/// Generates `count` scenarios named `s000`, `s001`, ... Scenario `i` only
/// depends on `(cfg, i)`.
pub fn generate(spec: &GridSpec, cfg: &GeneratorConfig, count: usize) -> Vec<Scenario> {
    let targets = attackable_lines(spec);
    (0..count).map(|i| generate_one(spec, cfg, &targets, i)).collect()
}

fn generate_one(spec: &GridSpec, cfg: &GeneratorConfig, targets: &[usize], index: usize) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let len = cfg.length.max(1);
    let noise = Normal::new(0.0, cfg.load_noise.max(0.0)).unwrap();
    let walk = Normal::new(0.0, cfg.renewable_step.max(0.0)).unwrap();

    let level = if cfg.level.1 > cfg.level.0 { rng.random_range(cfg.level.0..cfg.level.1) } else { cfg.level.0 };
    // demand peaks in the evening; each load gets a small phase offset
    let phases: Vec<f64> = (0..spec.n_loads()).map(|_| rng.random_range(-0.3..0.3)).collect();
    let start = rng.random_range(0..STEPS_PER_DAY);
    let load_mw = (0..len)
        .map(|t| {
            let day = std::f64::consts::TAU * ((start + t) % STEPS_PER_DAY) as f64 / STEPS_PER_DAY as f64;
            spec.loads
                .iter()
                .map(|d| {
                    let cycle = 1.0 + cfg.daily_amplitude * (day - std::f64::consts::FRAC_PI_2 - 0.5 + phases[d.id]).sin();
                    (d.nominal_mw * level * cycle * (1.0 + noise.sample(&mut rng))).max(0.0)
                })
                .collect()
        })
        .collect();

    let renewables: Vec<_> = spec.generators.iter().filter(|g| g.renewable).collect();
    let mut level_r: Vec<f64> = renewables.iter().map(|_| rng.random_range(0.2..0.8)).collect();
    let mut renewable_mw = Vec::with_capacity(len);
    for _ in 0..len {
        renewable_mw.push(renewables.iter().zip(&level_r).map(|(g, f)| f * g.p_max).collect());
        for f in &mut level_r {
            *f = (*f + walk.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }

    let mut attacks = Vec::new();
    if cfg.attacks_per_day > 0.0 && !targets.is_empty() {
        let per_day = Poisson::new(cfg.attacks_per_day).unwrap();
        let (lo, hi) = (cfg.attack_duration.0.min(cfg.attack_duration.1), cfg.attack_duration.0.max(cfg.attack_duration.1));
        for day_start in (0..len).step_by(STEPS_PER_DAY) {
            let day_end = (day_start + STEPS_PER_DAY).min(len);
            let n = per_day.sample(&mut rng) as usize;
            for _ in 0..n {
                let step = rng.random_range(day_start.max(1)..day_end.max(2));
                let line = targets[rng.random_range(0..targets.len())];
                let duration = rng.random_range(lo..=hi);
                if step < len {
                    attacks.push(Attack { step, line, duration });
                }
            }
        }
        attacks.sort_by_key(|a| (a.step, a.line));
        attacks.dedup_by_key(|a| (a.step, a.line));
    }

    Scenario {
        id: format!("s{index:03}"),
        load_mw,
        renewable_ids: renewables.iter().map(|g| g.id).collect(),
        renewable_mw,
        attacks,
    }
}

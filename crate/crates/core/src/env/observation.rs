use std::f64::consts::TAU;

use super::scenario::STEPS_PER_DAY;
use crate::grid::{CooldownRules, GridSpec, TopologyState};

/// Loading ratios above this are clipped in the feature vector.
const RHO_CLIP: f64 = 10.0;

/// Flat feature vector handed to the policy.
///
/// Layout, in order: per line `rho`, connected flag and cooldown (scaled by
/// the recovery time); per substation cooldown; per generator output over
/// `p_max`; per load demand over its scenario peak; per slot a one-hot of bus
/// {0, 1, 2}; time of day as a sin/cos pair; elapsed fraction of the episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Vec<f64>,
}

impl Observation {
    pub fn dim(spec: &GridSpec) -> usize {
        3 * spec.n_lines() + spec.n_substations() + spec.n_generators() + spec.n_loads() + 3 * spec.n_slots() + 3
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

pub(crate) struct ObservationInputs<'a> {
    pub spec: &'a GridSpec,
    pub rules: &'a CooldownRules,
    pub topo: &'a TopologyState,
    pub rho: &'a [f64],
    pub gen_mw: &'a [f64],
    pub load_mw: &'a [f64],
    pub load_peak: &'a [f64],
    pub step: usize,
    pub episode_len: usize,
}

pub(crate) fn build(inp: ObservationInputs<'_>) -> Observation {
    let spec = inp.spec;
    let mut f = Vec::with_capacity(Observation::dim(spec));
    let line_scale = inp.rules.line_recovery.max(1) as f64;
    let sub_scale = inp.rules.substation.max(1) as f64;
    for l in 0..spec.n_lines() {
        f.push(inp.rho[l].min(RHO_CLIP));
        f.push(if inp.topo.line_connected[l] { 1.0 } else { 0.0 });
        f.push(inp.topo.line_cooldown[l] as f64 / line_scale);
    }
    f.extend(inp.topo.substation_cooldown.iter().map(|&c| c as f64 / sub_scale));
    f.extend(spec.generators.iter().map(|g| {
        if g.p_max > 0.0 {
            inp.gen_mw[g.id] / g.p_max
        } else {
            0.0
        }
    }));
    f.extend(inp.load_mw.iter().zip(inp.load_peak).map(|(d, p)| if *p > 0.0 { d / p } else { 0.0 }));
    for &bus in &inp.topo.bus_of {
        f.extend((0..3u8).map(|b| if b == bus { 1.0 } else { 0.0 }));
    }
    let phase = TAU * (inp.step % STEPS_PER_DAY) as f64 / STEPS_PER_DAY as f64;
    f.push(phase.sin());
    f.push(phase.cos());
    f.push(inp.step as f64 / inp.episode_len.max(1) as f64);
    Observation { features: f }
}

//! The discrete action catalogue scored by the policy.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::action::Action;
use crate::grid::{Element, GridSpec};

/// Redispatch steps as fractions of each generator's ramp limit.
pub const DEFAULT_RAMP_FRACTIONS: [f64; 4] = [-0.4, -0.2, 0.2, 0.4];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogueError {
    #[error("action index {index} out of range for catalogue of {len}")]
    OutOfRange { index: usize, len: usize },
    #[error("action not in catalogue: {0}")]
    NotInCatalogue(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Key {
    DoNothing,
    Bus(usize, u32),
    Line(usize, bool),
    Redispatch(usize, u64),
}

/// Ordered action list; position is the policy output index.
#[derive(Debug, Clone)]
pub struct ActionCatalogue {
    actions: Vec<Action>,
    index: HashMap<Key, usize>,
    slots_per_substation: Vec<usize>,
}

impl PartialEq for ActionCatalogue {
    fn eq(&self, other: &Self) -> bool {
        self.actions == other.actions
    }
}

/// Number of distinct non-reference bus splits of a substation with `n` slots.
pub fn bus_configurations(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        (1usize << (n - 1)) - 1
    }
}

/// Canonical form of a bus mask: the substation's first slot stays on bus 1.
pub fn canonical_mask(mask: u32, n_slots: usize) -> u32 {
    let full = if n_slots >= 32 { u32::MAX } else { (1u32 << n_slots) - 1 };
    if mask & 1 == 1 {
        !mask & full
    } else {
        mask & full
    }
}

/// Builds the catalogue: do-nothing; per substation every canonical bus split
/// in ascending mask order; per line a disconnect then a reconnect; and, when
/// enabled, per dispatchable generator one step per ramp fraction.
pub fn build_catalogue(spec: &GridSpec, include_redispatch: bool, ramp_fractions: &[f64]) -> ActionCatalogue {
    let mut actions = vec![Action::DoNothing];
    for s in 0..spec.n_substations() {
        let n = spec.slots_of(s).len();
        if n < 2 {
            continue;
        }
        // bit 0 clear, not all zero
        actions.extend((1..(1u32 << (n - 1))).map(|half| Action::SwitchBus { substation: s, mask: half << 1 }));
    }
    for l in 0..spec.n_lines() {
        actions.push(Action::SetLineStatus { line: l, connect: false });
        actions.push(Action::SetLineStatus { line: l, connect: true });
    }
    if include_redispatch {
        for g in spec.dispatchable() {
            for f in ramp_fractions {
                let delta_mw = f * g.ramp;
                if delta_mw != 0.0 {
                    actions.push(Action::Redispatch { generator: g.id, delta_mw });
                }
            }
        }
    }
    let slots_per_substation = (0..spec.n_substations()).map(|s| spec.slots_of(s).len()).collect();
    let mut cat = ActionCatalogue { actions, index: HashMap::new(), slots_per_substation };
    for (i, a) in cat.actions.iter().enumerate() {
        let key = cat.key(a).expect("catalogued actions are canonical");
        let prev = cat.index.insert(key, i);
        debug_assert!(prev.is_none(), "duplicate action {a}");
    }
    cat
}

impl ActionCatalogue {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn action_at(&self, index: usize) -> Result<&Action, CatalogueError> {
        self.actions
            .get(index)
            .ok_or(CatalogueError::OutOfRange { index, len: self.len() })
    }

    /// Index of `action`, after folding a bus mask onto its canonical form.
    pub fn index_of(&self, action: &Action) -> Result<usize, CatalogueError> {
        self.key(action)
            .and_then(|k| self.index.get(&k).copied())
            .ok_or_else(|| CatalogueError::NotInCatalogue(action.to_string()))
    }

    fn key(&self, action: &Action) -> Option<Key> {
        Some(match *action {
            Action::DoNothing => Key::DoNothing,
            Action::SwitchBus { substation, mask } => {
                let n = *self.slots_per_substation.get(substation)?;
                if n < 32 && mask >> n != 0 {
                    return None;
                }
                Key::Bus(substation, canonical_mask(mask, n))
            }
            Action::SetLineStatus { line, connect } => Key::Line(line, connect),
            Action::Redispatch { generator, delta_mw } => Key::Redispatch(generator, delta_mw.to_bits()),
        })
    }

    pub fn count_by_kind(&self, kind: &str) -> usize {
        self.actions.iter().filter(|a| a.kind() == kind).count()
    }

    /// Audit table: index, kind, target, description.
    pub fn dump_table(&self, spec: &GridSpec) -> String {
        let mut out = String::from("index\tkind\ttarget\tdescription\n");
        for (i, a) in self.actions.iter().enumerate() {
            let (target, desc) = match *a {
                Action::DoNothing => ("-".to_string(), "keep current topology".to_string()),
                Action::SwitchBus { substation, mask } => {
                    let moved: Vec<String> = spec
                        .slots_of(substation)
                        .iter()
                        .enumerate()
                        .filter(|(bit, _)| mask >> bit & 1 == 1)
                        .map(|(_, &slot)| element_name(spec.element_at(slot)))
                        .collect();
                    (format!("substation {substation}"), format!("swap bus: {}", moved.join(" ")))
                }
                Action::SetLineStatus { line, connect } => (
                    format!("line {line}"),
                    if connect { "reconnect" } else { "disconnect" }.to_string(),
                ),
                Action::Redispatch { generator, delta_mw } => {
                    (format!("generator {generator}"), format!("{delta_mw:+.1} MW"))
                }
            };
            let _ = writeln!(out, "{i}\t{}\t{target}\t{desc}", a.kind());
        }
        out
    }
}

fn element_name(e: Element) -> String {
    match e {
        Element::LineOrigin(l) => format!("line{l}.or"),
        Element::LineExtremity(l) => format!("line{l}.ex"),
        Element::Generator(g) => format!("gen{g}"),
        Element::Load(d) => format!("load{d}"),
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;
    use std::sync::Arc;

    use super::*;
    use crate::env::{EnvConfig, Environment, Scenario};
    use crate::grid::{presets, GenSpec, LineSpec, LoadSpec, Substation};

    /// Distinct bus partitions of `n` slots other than "all together", found by
    /// brute force over every raw assignment.
    fn brute_force_splits(n: usize) -> usize {
        let mut seen = HashSet::new();
        for raw in 0u32..(1 << n) {
            let bus2: Vec<usize> = (0..n).filter(|i| raw >> i & 1 == 1).collect();
            let bus1: Vec<usize> = (0..n).filter(|i| raw >> i & 1 == 0).collect();
            if bus1.is_empty() || bus2.is_empty() {
                continue;
            }
            let mut pair = [bus1, bus2];
            pair.sort();
            seen.insert(pair);
        }
        seen.len()
    }

    fn three_slot_grid() -> GridSpec {
        let sub = |id| Substation { id, name: format!("s{id}") };
        GridSpec::new(
            "t",
            vec![sub(0), sub(1)],
            vec![LineSpec { id: 0, from: 0, to: 1, reactance: 1.0, thermal_limit: 1.0 }],
            vec![GenSpec { id: 0, substation: 0, p_min: 0.0, p_max: 10.0, ramp: 5.0, renewable: false }],
            vec![LoadSpec { id: 0, substation: 0, nominal_mw: 1.0 }],
        )
        .unwrap()
    }

    #[test]
    fn three_slots_give_three_splits() {
        assert_eq!(brute_force_splits(3), 3);
        assert_eq!(bus_configurations(3), 3);
        let spec = three_slot_grid();
        let cat = build_catalogue(&spec, false, &[]);
        assert_eq!(cat.count_by_kind("bus-switch"), 3);
    }

    #[test]
    fn split_count_matches_brute_force() {
        for n in 1..=10 {
            assert_eq!(bus_configurations(n), brute_force_splits(n), "n = {n}");
        }
    }

    #[test]
    fn case5_catalogue_size_is_frozen() {
        let spec = presets::case5();
        let expected_bus: usize = (0..spec.n_substations())
            .map(|s| brute_force_splits(spec.slots_of(s).len()))
            .sum();
        let cat = build_catalogue(&spec, false, &[]);
        assert_eq!(cat.count_by_kind("bus-switch"), expected_bus);
        assert_eq!(cat.len(), 1 + expected_bus + 2 * spec.n_lines());
        assert_eq!(cat.len(), 170);
        let with = build_catalogue(&spec, true, &DEFAULT_RAMP_FRACTIONS);
        assert_eq!(with.len(), 178);
    }

    #[test]
    fn redispatch_flag() {
        let spec = presets::case14();
        assert_eq!(build_catalogue(&spec, false, &DEFAULT_RAMP_FRACTIONS).count_by_kind("redispatch"), 0);
        let with = build_catalogue(&spec, true, &DEFAULT_RAMP_FRACTIONS);
        assert_eq!(with.count_by_kind("redispatch"), 4 * spec.dispatchable().count());
    }

    #[test]
    fn ordering_and_invariants() {
        let spec = presets::case14();
        let cat = build_catalogue(&spec, true, &DEFAULT_RAMP_FRACTIONS);
        assert_eq!(cat.action_at(0).unwrap(), &Action::DoNothing);
        assert_eq!(cat, build_catalogue(&spec, true, &DEFAULT_RAMP_FRACTIONS));
        let rank = |a: &Action| match *a {
            Action::DoNothing => (0, 0, 0),
            Action::SwitchBus { substation, mask } => (1, substation, mask as usize),
            Action::SetLineStatus { line, connect } => (2, line, connect as usize),
            Action::Redispatch { generator, .. } => (3, generator, 0),
        };
        for w in cat.actions().windows(2) {
            assert!(rank(&w[0]) <= rank(&w[1]), "{} before {}", w[0], w[1]);
        }
        for (i, a) in cat.actions().iter().enumerate() {
            assert_eq!(cat.index_of(a).unwrap(), i);
            if let Action::SwitchBus { mask, .. } = a {
                assert_eq!(mask & 1, 0);
                assert_ne!(*mask, 0);
            }
        }
        assert!(matches!(cat.action_at(cat.len()), Err(CatalogueError::OutOfRange { .. })));
    }

    #[test]
    fn swapped_bus_masks_map_to_canonical_index() {
        let spec = presets::case14();
        let cat = build_catalogue(&spec, false, &[]);
        for s in 0..spec.n_substations() {
            let n = spec.slots_of(s).len();
            if n > 4 {
                continue;
            }
            for raw in 0u32..(1 << n) {
                let action = Action::SwitchBus { substation: s, mask: raw };
                // independent oracle: the partition as a pair of sorted slot sets
                let part = |m: u32| {
                    let mut p = [
                        (0..n).filter(|i| m >> i & 1 == 0).collect::<Vec<_>>(),
                        (0..n).filter(|i| m >> i & 1 == 1).collect::<Vec<_>>(),
                    ];
                    p.sort();
                    p
                };
                if raw == 0 || raw == (1 << n) - 1 {
                    assert!(cat.index_of(&action).is_err());
                    continue;
                }
                let idx = cat.index_of(&action).unwrap();
                match cat.action_at(idx).unwrap() {
                    Action::SwitchBus { substation, mask } => {
                        assert_eq!(*substation, s);
                        assert_eq!(part(*mask), part(raw));
                    }
                    other => panic!("mapped to {other}"),
                }
            }
        }
        assert!(cat.index_of(&Action::SwitchBus { substation: 99, mask: 2 }).is_err());
        assert!(cat.index_of(&Action::Redispatch { generator: 0, delta_mw: 1.0 }).is_err());
    }

    #[test]
    fn catalogue_is_legal_from_reset() {
        for spec in [presets::case5(), presets::case14()] {
            let spec = Arc::new(spec);
            let cat = build_catalogue(&spec, true, &DEFAULT_RAMP_FRACTIONS);
            let sc = Arc::new(Scenario::flat(&spec, 4, 1.0, 0.5));
            let (env, _) = Environment::reset(spec.clone(), sc, EnvConfig::default()).unwrap();
            for a in cat.actions() {
                assert!(env.is_legal(a).legal, "{a} illegal from reset");
            }
        }
    }

    #[test]
    fn dump_lists_every_action() {
        let spec = presets::case5();
        let cat = build_catalogue(&spec, false, &[]);
        let table = cat.dump_table(&spec);
        assert_eq!(table.lines().count(), cat.len() + 1);
        assert!(table.lines().nth(1).unwrap().starts_with("0\tdo-nothing"));
    }
}

use super::{Element, GridError, GridSpec};
use crate::action::Action;

/// Steps a substation or line stays locked after an agent acts on it, and the
/// recovery time after an automatic disconnection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CooldownRules {
    pub substation: u32,
    pub line_action: u32,
    pub line_recovery: u32,
}

impl Default for CooldownRules {
    fn default() -> Self {
        CooldownRules {
            substation: 3,
            line_action: 3,
            line_recovery: 12,
        }
    }
}

impl CooldownRules {
    /// No cooldown at all; handy when testing pure topology algebra.
    pub fn none() -> Self {
        CooldownRules {
            substation: 0,
            line_action: 0,
            line_recovery: 0,
        }
    }
}

/// Mutable switching state of a grid.
///
/// `bus_of[slot]` is 0 for the endpoints of a disconnected line and 1 or 2
/// otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TopologyState {
    pub bus_of: Vec<u8>,
    pub line_connected: Vec<bool>,
    pub overload_counter: Vec<u8>,
    pub line_cooldown: Vec<u32>,
    pub substation_cooldown: Vec<u32>,
}

impl TopologyState {
    /// Everything on bus 1, every line in service, all counters zero.
    pub fn reference(spec: &GridSpec) -> Self {
        TopologyState {
            bus_of: vec![1; spec.n_slots()],
            line_connected: vec![true; spec.n_lines()],
            overload_counter: vec![0; spec.n_lines()],
            line_cooldown: vec![0; spec.n_lines()],
            substation_cooldown: vec![0; spec.n_substations()],
        }
    }

    pub fn validate(&self, spec: &GridSpec) -> Result<(), GridError> {
        if self.bus_of.len() != spec.n_slots()
            || self.line_connected.len() != spec.n_lines()
            || self.overload_counter.len() != spec.n_lines()
            || self.line_cooldown.len() != spec.n_lines()
            || self.substation_cooldown.len() != spec.n_substations()
        {
            return Err(GridError::Invalid("topology arrays do not match grid dimensions".into()));
        }
        for slot in 0..spec.n_slots() {
            let bus = self.bus_of[slot];
            if bus > 2 {
                return Err(GridError::Invalid(format!("slot {slot} has bus {bus}")));
            }
            match spec.element_at(slot) {
                Element::LineOrigin(l) | Element::LineExtremity(l) => {
                    if (bus == 0) == self.line_connected[l] {
                        return Err(GridError::Invalid(format!(
                            "line {l} endpoint bus {bus} disagrees with its status"
                        )));
                    }
                }
                _ if bus == 0 => {
                    return Err(GridError::Invalid(format!("generator/load slot {slot} has bus 0")));
                }
                _ => {}
            }
        }
        if let Some(l) = self.overload_counter.iter().position(|&c| c > 3) {
            return Err(GridError::Invalid(format!("line {l} overload counter above 3")));
        }
        Ok(())
    }

    /// Slots of a substation currently on bus 2, as a bit mask in slot order.
    /// Switching this mask from the reference layout reproduces the current one.
    pub fn substation_mask(&self, spec: &GridSpec, substation: usize) -> u32 {
        spec.slots_of(substation)
            .iter()
            .enumerate()
            .filter(|&(_, &slot)| self.bus_of[slot] == 2)
            .fold(0, |m, (i, _)| m | (1 << i))
    }

    pub fn disconnect_line(&mut self, spec: &GridSpec, line: usize) {
        self.line_connected[line] = false;
        self.bus_of[spec.line_origin_slot(line)] = 0;
        self.bus_of[spec.line_extremity_slot(line)] = 0;
        self.overload_counter[line] = 0;
    }

    /// Reconnects both endpoints onto bus 1.
    pub fn connect_line(&mut self, spec: &GridSpec, line: usize) {
        self.line_connected[line] = true;
        self.bus_of[spec.line_origin_slot(line)] = 1;
        self.bus_of[spec.line_extremity_slot(line)] = 1;
        self.overload_counter[line] = 0;
    }

    pub fn tick_cooldowns(&mut self) {
        for c in self.line_cooldown.iter_mut().chain(self.substation_cooldown.iter_mut()) {
            *c = c.saturating_sub(1);
        }
    }
}

/// Applies a topological action and returns the new state.
///
/// Redispatch and do-nothing leave the topology untouched. A bus
/// reconfiguration locks its substation for `rules.substation` steps; a line
/// switch locks the line for `rules.line_action` steps. Reconnecting a line
/// that is already in service is a no-op.
pub fn apply_topology_action(
    spec: &GridSpec,
    topo: &TopologyState,
    action: &Action,
    rules: &CooldownRules,
) -> Result<TopologyState, GridError> {
    match *action {
        Action::DoNothing | Action::Redispatch { .. } => Ok(topo.clone()),
        Action::SwitchBus { substation, mask } => {
            if substation >= spec.n_substations() {
                return Err(GridError::UnknownElement(format!("substation {substation}")));
            }
            let slots = spec.slots_of(substation);
            if slots.len() < 32 && mask >> slots.len() != 0 {
                return Err(GridError::UnknownElement(format!(
                    "bus mask {mask:#b} for substation {substation} with {} slots",
                    slots.len()
                )));
            }
            if topo.substation_cooldown[substation] > 0 {
                return Err(GridError::CooldownViolation(format!(
                    "substation {substation} locked for {} more steps",
                    topo.substation_cooldown[substation]
                )));
            }
            let mut next = topo.clone();
            // endpoints of disconnected lines stay at bus 0
            for (i, &slot) in slots.iter().enumerate() {
                if mask & (1 << i) != 0 && next.bus_of[slot] != 0 {
                    next.bus_of[slot] = 3 - next.bus_of[slot];
                }
            }
            next.substation_cooldown[substation] = rules.substation;
            Ok(next)
        }
        Action::SetLineStatus { line, connect } => {
            if line >= spec.n_lines() {
                return Err(GridError::UnknownElement(format!("line {line}")));
            }
            if connect && topo.line_connected[line] {
                return Ok(topo.clone());
            }
            if topo.line_cooldown[line] > 0 {
                return Err(GridError::CooldownViolation(format!(
                    "line {line} locked for {} more steps",
                    topo.line_cooldown[line]
                )));
            }
            let mut next = topo.clone();
            if connect {
                next.connect_line(spec, line);
            } else if next.line_connected[line] {
                next.disconnect_line(spec, line);
            } else {
                return Ok(next);
            }
            next.line_cooldown[line] = rules.line_action;
            Ok(next)
        }
    }
}

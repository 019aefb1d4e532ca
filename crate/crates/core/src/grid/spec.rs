use super::GridError;

/// System base used to convert MW into per-unit flows.
pub const BASE_MVA: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Substation {
    pub id: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSpec {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    /// Series reactance, per-unit.
    pub reactance: f64,
    /// Thermal limit, per-unit flow.
    pub thermal_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub id: usize,
    pub substation: usize,
    pub p_min: f64,
    pub p_max: f64,
    /// Largest allowed setpoint change per step, MW.
    pub ramp: f64,
    pub renewable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadSpec {
    pub id: usize,
    pub substation: usize,
    /// Typical demand level used by the scenario generator, MW.
    pub nominal_mw: f64,
}

/// Something that occupies a slot in a substation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Element {
    LineOrigin(usize),
    LineExtremity(usize),
    Generator(usize),
    Load(usize),
}

/// Static description of a grid.
///
/// Every element endpoint owns one slot in a flat assignment array: line `l`
/// has slots `2l` (origin) and `2l + 1` (extremity), generator `g` has slot
/// `2L + g` and load `d` has slot `2L + G + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub name: String,
    pub substations: Vec<Substation>,
    pub lines: Vec<LineSpec>,
    pub generators: Vec<GenSpec>,
    pub loads: Vec<LoadSpec>,
    slots_of_sub: Vec<Vec<usize>>,
    sub_of_slot: Vec<usize>,
}

impl GridSpec {
    pub fn new(
        name: impl Into<String>,
        substations: Vec<Substation>,
        lines: Vec<LineSpec>,
        generators: Vec<GenSpec>,
        loads: Vec<LoadSpec>,
    ) -> Result<Self, GridError> {
        let n_sub = substations.len();
        if n_sub == 0 {
            return Err(GridError::Invalid("grid has no substations".into()));
        }
        for (i, s) in substations.iter().enumerate() {
            if s.id != i {
                return Err(GridError::Invalid(format!("substation ids must be 0..n in order, found {} at {i}", s.id)));
            }
        }
        let check_sub = |what: &str, id: usize, sub: usize| {
            if sub >= n_sub {
                Err(GridError::Invalid(format!("{what} {id} references unknown substation {sub}")))
            } else {
                Ok(())
            }
        };
        for (i, l) in lines.iter().enumerate() {
            if l.id != i {
                return Err(GridError::Invalid(format!("line ids must be 0..n in order, found {} at {i}", l.id)));
            }
            check_sub("line", l.id, l.from)?;
            check_sub("line", l.id, l.to)?;
            if l.from == l.to {
                return Err(GridError::Invalid(format!("line {} has identical endpoints", l.id)));
            }
            if !(l.reactance > 0.0 && l.reactance.is_finite()) {
                return Err(GridError::Invalid(format!("line {} reactance must be positive", l.id)));
            }
            if !(l.thermal_limit > 0.0 && l.thermal_limit.is_finite()) {
                return Err(GridError::Invalid(format!("line {} thermal limit must be positive", l.id)));
            }
        }
        for (i, g) in generators.iter().enumerate() {
            if g.id != i {
                return Err(GridError::Invalid(format!("generator ids must be 0..n in order, found {} at {i}", g.id)));
            }
            check_sub("generator", g.id, g.substation)?;
            if !(g.p_min <= g.p_max) || g.p_min < 0.0 || !g.p_max.is_finite() {
                return Err(GridError::Invalid(format!("generator {} needs 0 <= p_min <= p_max", g.id)));
            }
            if !(g.ramp >= 0.0) {
                return Err(GridError::Invalid(format!("generator {} ramp must be non-negative", g.id)));
            }
        }
        for (i, d) in loads.iter().enumerate() {
            if d.id != i {
                return Err(GridError::Invalid(format!("load ids must be 0..n in order, found {} at {i}", d.id)));
            }
            check_sub("load", d.id, d.substation)?;
            if !(d.nominal_mw >= 0.0) {
                return Err(GridError::Invalid(format!("load {} nominal demand must be non-negative", d.id)));
            }
        }

        let n_slots = 2 * lines.len() + generators.len() + loads.len();
        let mut sub_of_slot = vec![0; n_slots];
        for l in &lines {
            sub_of_slot[2 * l.id] = l.from;
            sub_of_slot[2 * l.id + 1] = l.to;
        }
        for g in &generators {
            sub_of_slot[2 * lines.len() + g.id] = g.substation;
        }
        for d in &loads {
            sub_of_slot[2 * lines.len() + generators.len() + d.id] = d.substation;
        }
        let mut slots_of_sub = vec![Vec::new(); n_sub];
        for (slot, &sub) in sub_of_slot.iter().enumerate() {
            slots_of_sub[sub].push(slot);
        }
        if let Some((s, slots)) = slots_of_sub.iter().enumerate().find(|(_, v)| v.len() > 31) {
            return Err(GridError::Invalid(format!("substation {s} has {} slots, at most 31 supported", slots.len())));
        }

        let spec = GridSpec {
            name: name.into(),
            substations,
            lines,
            generators,
            loads,
            slots_of_sub,
            sub_of_slot,
        };
        if !spec.is_connected_reference() {
            return Err(GridError::Invalid("grid is not connected with every line in service".into()));
        }
        Ok(spec)
    }

    fn is_connected_reference(&self) -> bool {
        let mut uf = petgraph::unionfind::UnionFind::<usize>::new(self.substations.len());
        for l in &self.lines {
            uf.union(l.from, l.to);
        }
        let root = uf.find(0);
        (0..self.substations.len()).all(|s| uf.find(s) == root)
    }

    pub fn n_substations(&self) -> usize {
        self.substations.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn n_loads(&self) -> usize {
        self.loads.len()
    }

    pub fn n_slots(&self) -> usize {
        self.sub_of_slot.len()
    }

    /// Number of (substation, bus) nodes.
    pub fn n_nodes(&self) -> usize {
        2 * self.substations.len()
    }

    pub fn slots_of(&self, substation: usize) -> &[usize] {
        &self.slots_of_sub[substation]
    }

    pub fn substation_of_slot(&self, slot: usize) -> usize {
        self.sub_of_slot[slot]
    }

    pub fn line_origin_slot(&self, line: usize) -> usize {
        2 * line
    }

    pub fn line_extremity_slot(&self, line: usize) -> usize {
        2 * line + 1
    }

    pub fn gen_slot(&self, generator: usize) -> usize {
        2 * self.lines.len() + generator
    }

    pub fn load_slot(&self, load: usize) -> usize {
        2 * self.lines.len() + self.generators.len() + load
    }

    pub fn element_at(&self, slot: usize) -> Element {
        let nl = self.lines.len();
        let ng = self.generators.len();
        if slot < 2 * nl {
            if slot % 2 == 0 {
                Element::LineOrigin(slot / 2)
            } else {
                Element::LineExtremity(slot / 2)
            }
        } else if slot < 2 * nl + ng {
            Element::Generator(slot - 2 * nl)
        } else {
            Element::Load(slot - 2 * nl - ng)
        }
    }

    pub fn slot_of(&self, element: Element) -> usize {
        match element {
            Element::LineOrigin(l) => self.line_origin_slot(l),
            Element::LineExtremity(l) => self.line_extremity_slot(l),
            Element::Generator(g) => self.gen_slot(g),
            Element::Load(d) => self.load_slot(d),
        }
    }

    /// Index of the (substation, bus) node; `bus` must be 1 or 2.
    pub fn node(&self, substation: usize, bus: u8) -> usize {
        debug_assert!(bus == 1 || bus == 2);
        2 * substation + (bus as usize - 1)
    }

    pub fn dispatchable(&self) -> impl Iterator<Item = &GenSpec> {
        self.generators.iter().filter(|g| !g.renewable)
    }
}

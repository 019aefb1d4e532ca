use crate::grid::{electrical_islands, Element, GridSpec, TopologyState};

/// Island that could not be balanced, with its missing power in MW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Shortfall {
    pub island: usize,
    pub missing_mw: f64,
}

/// Balances every island independently.
///
/// Renewables run at their availability, curtailed when they alone exceed the
/// island's demand. The residual is shared among the island's dispatchable
/// units in proportion to `p_max`, shifted by each unit's redispatch offset.
/// The island's slack unit (its lowest-index dispatchable generator) then
/// absorbs the remaining mismatch, the other units covering what the slack's
/// limits cannot.
pub(crate) fn balance(
    spec: &GridSpec,
    topo: &TopologyState,
    load_mw: &[f64],
    renewable_mw: &[f64],
    offsets: &[f64],
) -> Result<Vec<f64>, Shortfall> {
    let islands = electrical_islands(spec, topo);
    let mut gen_mw = vec![0.0; spec.n_generators()];
    for (island, members) in islands.components.iter().enumerate() {
        let mut demand = 0.0;
        let mut renewables = Vec::new();
        let mut thermal = Vec::new();
        for e in members {
            match *e {
                Element::Load(d) => demand += load_mw[d],
                Element::Generator(g) if spec.generators[g].renewable => renewables.push(g),
                Element::Generator(g) => thermal.push(g),
                _ => {}
            }
        }
        let avail: f64 = renewables
            .iter()
            .map(|&g| renewable_mw[g].clamp(0.0, spec.generators[g].p_max))
            .sum();
        let curtail = if avail > demand && avail > 0.0 { demand / avail } else { 1.0 };
        for &g in &renewables {
            gen_mw[g] = renewable_mw[g].clamp(0.0, spec.generators[g].p_max) * curtail;
        }
        let residual = (demand - avail).max(0.0);
        if thermal.is_empty() {
            if residual > 1e-9 {
                return Err(Shortfall { island, missing_mw: residual });
            }
            continue;
        }
        let capacity: f64 = thermal.iter().map(|&g| spec.generators[g].p_max).sum();
        if residual > capacity + 1e-9 {
            return Err(Shortfall { island, missing_mw: residual - capacity });
        }
        for &g in &thermal {
            let p_max = spec.generators[g].p_max;
            let share = if capacity > 0.0 { residual * p_max / capacity } else { 0.0 };
            gen_mw[g] = (share + offsets[g]).clamp(0.0, p_max);
        }
        let mut mismatch = residual - thermal.iter().map(|&g| gen_mw[g]).sum::<f64>();
        for &g in &thermal {
            if mismatch == 0.0 {
                break;
            }
            let p_max = spec.generators[g].p_max;
            let next = (gen_mw[g] + mismatch).clamp(0.0, p_max);
            mismatch -= next - gen_mw[g];
            gen_mw[g] = next;
        }
    }
    Ok(gen_mw)
}

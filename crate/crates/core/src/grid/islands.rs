use petgraph::unionfind::UnionFind;

use super::{Element, GridSpec, TopologyState};

/// Partition of the energised elements into electrically connected components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Islands {
    /// Component of every (substation, bus) node; `None` for nodes hosting nothing.
    pub node_component: Vec<Option<usize>>,
    /// Elements of each component, in slot order. Components are numbered by
    /// their lowest node index.
    pub components: Vec<Vec<Element>>,
}

impl Islands {
    pub fn count(&self) -> usize {
        self.components.len()
    }

    pub fn component_of_node(&self, node: usize) -> Option<usize> {
        self.node_component[node]
    }
}

/// Groups elements by the connected component of their (substation, bus) node.
/// Edges are the lines in service.
pub fn electrical_islands(spec: &GridSpec, topo: &TopologyState) -> Islands {
    let n_nodes = spec.n_nodes();
    let mut uf = UnionFind::<usize>::new(n_nodes);
    let mut active = vec![false; n_nodes];
    for slot in 0..spec.n_slots() {
        let bus = topo.bus_of[slot];
        if bus != 0 {
            active[spec.node(spec.substation_of_slot(slot), bus)] = true;
        }
    }
    for l in 0..spec.n_lines() {
        if !topo.line_connected[l] {
            continue;
        }
        let a = node_of_slot(spec, topo, spec.line_origin_slot(l));
        let b = node_of_slot(spec, topo, spec.line_extremity_slot(l));
        if let (Some(a), Some(b)) = (a, b) {
            uf.union(a, b);
        }
    }

    let mut root_to_component = vec![usize::MAX; n_nodes];
    let mut node_component = vec![None; n_nodes];
    let mut n_components = 0;
    for node in 0..n_nodes {
        if !active[node] {
            continue;
        }
        let root = uf.find(node);
        if root_to_component[root] == usize::MAX {
            root_to_component[root] = n_components;
            n_components += 1;
        }
        node_component[node] = Some(root_to_component[root]);
    }

    let mut components = vec![Vec::new(); n_components];
    for slot in 0..spec.n_slots() {
        if let Some(node) = node_of_slot(spec, topo, slot) {
            let c = node_component[node].expect("energised node is active");
            components[c].push(spec.element_at(slot));
        }
    }
    Islands {
        node_component,
        components,
    }
}

pub(crate) fn node_of_slot(spec: &GridSpec, topo: &TopologyState, slot: usize) -> Option<usize> {
    match topo.bus_of[slot] {
        0 => None,
        bus => Some(spec.node(spec.substation_of_slot(slot), bus)),
    }
}

/// Generators and loads sitting on a node with no line in service.
pub fn isolated_injections(spec: &GridSpec, topo: &TopologyState) -> Vec<Element> {
    let mut has_line = vec![false; spec.n_nodes()];
    for l in 0..spec.n_lines() {
        if topo.line_connected[l] {
            for slot in [spec.line_origin_slot(l), spec.line_extremity_slot(l)] {
                if let Some(node) = node_of_slot(spec, topo, slot) {
                    has_line[node] = true;
                }
            }
        }
    }
    let first = 2 * spec.n_lines();
    (first..spec.n_slots())
        .filter(|&slot| match node_of_slot(spec, topo, slot) {
            Some(node) => !has_line[node],
            None => true,
        })
        .map(|slot| spec.element_at(slot))
        .collect()
}

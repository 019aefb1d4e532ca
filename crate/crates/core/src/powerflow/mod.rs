//! DC power flow and the overload risk measure.
//!
//! Every island is solved independently: `B θ = P` on the reduced
//! susceptance matrix with the island's slack node pinned at `θ = 0`. The
//! slack absorbs any injection imbalance. Islands of up to
//! [`DENSE_LIMIT`] nodes use a dense Cholesky factorisation; larger islands
//! switch to Jacobi-preconditioned conjugate gradients on a CSR matrix.

mod dense;
mod sparse;

use petgraph::unionfind::UnionFind;
use thiserror::Error;

use crate::grid::{node_of_slot, GridSpec, TopologyState, BASE_MVA};

/// Largest island solved with the dense factorisation.
pub const DENSE_LIMIT: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("injection vector has {got} entries, grid has {expected} nodes")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular susceptance system on island containing node {node}")]
    SingularSystem { node: usize },
    #[error("power flow did not converge")]
    NotConverged,
}

/// Net injection per (substation, bus) node in per-unit. Positive means
/// generation.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionVector(pub Vec<f64>);

impl InjectionVector {
    pub fn zeros(spec: &GridSpec) -> Self {
        InjectionVector(vec![0.0; spec.n_nodes()])
    }

    /// Builds nodal injections from generator outputs and load demands in MW.
    /// Elements with bus 0 contribute nothing.
    pub fn from_dispatch(spec: &GridSpec, topo: &TopologyState, gen_mw: &[f64], load_mw: &[f64]) -> Self {
        let mut p = vec![0.0; spec.n_nodes()];
        for (g, &mw) in gen_mw.iter().enumerate() {
            if let Some(node) = node_of_slot(spec, topo, spec.gen_slot(g)) {
                p[node] += mw / BASE_MVA;
            }
        }
        for (d, &mw) in load_mw.iter().enumerate() {
            if let Some(node) = node_of_slot(spec, topo, spec.load_slot(d)) {
                p[node] -= mw / BASE_MVA;
            }
        }
        InjectionVector(p)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        InjectionVector(self.0.iter().map(|v| v * alpha).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowResult {
    /// Signed flow per line, per-unit, positive from origin to extremity.
    pub flow: Vec<f64>,
    /// `|flow| / thermal_limit` for lines in service, 0 otherwise.
    pub rho: Vec<f64>,
    /// Nodal injections after slack absorption.
    pub injection: Vec<f64>,
    /// Voltage angle per node, radians.
    pub theta: Vec<f64>,
    /// Slack node of every island that contains at least one line or injection.
    pub slack_nodes: Vec<usize>,
    pub converged: bool,
}

impl PowerFlowResult {
    pub fn overloaded_lines(&self) -> usize {
        self.rho.iter().filter(|&&r| r > 1.0).count()
    }
}

/// Solves the DC power flow for the given topology and nodal injections.
pub fn solve_dc(spec: &GridSpec, topo: &TopologyState, inj: &InjectionVector) -> Result<PowerFlowResult, PowerFlowError> {
    let n_nodes = spec.n_nodes();
    if inj.0.len() != n_nodes {
        return Err(PowerFlowError::DimensionMismatch { expected: n_nodes, got: inj.0.len() });
    }

    // (origin node, extremity node, susceptance) of every line in service
    let mut branches = Vec::with_capacity(spec.n_lines());
    let mut uf = UnionFind::<usize>::new(n_nodes);
    for (l, line) in spec.lines.iter().enumerate() {
        if !topo.line_connected[l] {
            continue;
        }
        let a = node_of_slot(spec, topo, spec.line_origin_slot(l));
        let b = node_of_slot(spec, topo, spec.line_extremity_slot(l));
        if let (Some(a), Some(b)) = (a, b) {
            uf.union(a, b);
            branches.push((l, a, b, 1.0 / line.reactance));
        }
    }

    let mut has_gen = vec![false; n_nodes];
    for g in 0..spec.n_generators() {
        if let Some(node) = node_of_slot(spec, topo, spec.gen_slot(g)) {
            has_gen[node] = true;
        }
    }
    let mut touched = vec![false; n_nodes];
    for &(_, a, b, _) in &branches {
        touched[a] = true;
        touched[b] = true;
    }
    for (node, &p) in inj.0.iter().enumerate() {
        if p != 0.0 || has_gen[node] {
            touched[node] = true;
        }
    }

    // group nodes by island root, in ascending node order
    let mut island_of_root: Vec<Option<usize>> = vec![None; n_nodes];
    let mut islands: Vec<Vec<usize>> = Vec::new();
    for node in 0..n_nodes {
        if !touched[node] {
            continue;
        }
        let root = uf.find(node);
        let idx = *island_of_root[root].get_or_insert_with(|| {
            islands.push(Vec::new());
            islands.len() - 1
        });
        islands[idx].push(node);
    }

    let mut injection = inj.0.clone();
    let mut theta = vec![0.0; n_nodes];
    let mut slack_nodes = Vec::with_capacity(islands.len());
    let mut converged = true;
    // position of a node inside its island's reduced system
    let mut local = vec![usize::MAX; n_nodes];

    for nodes in &islands {
        let slack = nodes.iter().copied().find(|&n| has_gen[n]).unwrap_or(nodes[0]);
        slack_nodes.push(slack);
        let others: f64 = nodes.iter().filter(|&&n| n != slack).map(|&n| injection[n]).sum();
        injection[slack] = -others;
        if nodes.len() == 1 {
            continue;
        }

        let mut dim = 0;
        for &n in nodes {
            if n == slack {
                continue;
            }
            local[n] = dim;
            dim += 1;
        }
        let rhs: Vec<f64> = nodes.iter().filter(|&&n| n != slack).map(|&n| injection[n]).collect();
        let island_branches = branches.iter().filter(|&&(_, a, _, _)| uf.equiv(a, slack));
        let solution = if dim <= DENSE_LIMIT {
            let mut b = vec![0.0; dim * dim];
            for &(_, a, c, y) in island_branches {
                let (ia, ic) = (local[a], local[c]);
                if ia != usize::MAX {
                    b[ia * dim + ia] += y;
                }
                if ic != usize::MAX {
                    b[ic * dim + ic] += y;
                }
                if ia != usize::MAX && ic != usize::MAX {
                    b[ia * dim + ic] -= y;
                    b[ic * dim + ia] -= y;
                }
            }
            dense::cholesky_solve(&mut b, dim, rhs).ok_or(PowerFlowError::SingularSystem { node: slack })?
        } else {
            let triplets: Vec<(usize, usize, f64)> = island_branches
                .map(|&(_, a, c, y)| (local[a], local[c], y))
                .collect();
            let matrix = sparse::Csr::laplacian_reduced(dim, &triplets);
            let (x, ok) = sparse::pcg(&matrix, &rhs);
            converged &= ok;
            x
        };
        for &n in nodes {
            if n != slack {
                theta[n] = solution[local[n]];
            }
        }
    }

    let mut flow = vec![0.0; spec.n_lines()];
    let mut rho = vec![0.0; spec.n_lines()];
    for &(l, a, b, y) in &branches {
        flow[l] = (theta[a] - theta[b]) * y;
        rho[l] = flow[l].abs() / spec.lines[l].thermal_limit;
    }
    Ok(PowerFlowResult {
        flow,
        rho,
        injection,
        theta,
        slack_nodes,
        converged,
    })
}

/// Largest loading ratio over the lines in service; 0 when none is.
pub fn compute_risk(pf: &PowerFlowResult) -> Result<f64, PowerFlowError> {
    if !pf.converged {
        return Err(PowerFlowError::NotConverged);
    }
    Ok(pf.rho.iter().copied().fold(0.0, f64::max))
}

//! Grid graph: substations with two bus bars, lines, generators and loads,
//! plus the mutable switching state layered on top.

mod format;
mod islands;
pub mod presets;
mod spec;
mod topology;

pub use format::{load_grid_file, parse_grid, to_grid_text};
pub use islands::{electrical_islands, isolated_injections, Islands};
pub(crate) use islands::node_of_slot;
pub use spec::{Element, GenSpec, GridSpec, LineSpec, LoadSpec, Substation, BASE_MVA};
pub use topology::{apply_topology_action, CooldownRules, TopologyState};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("unknown element: {0}")]
    UnknownElement(String),
    #[error("cooldown violation: {0}")]
    CooldownViolation(String),
    #[error("grid file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("grid file: {0}")]
    Io(String),
}

/// Loads a preset by name (`case5`, `case14`) or a grid file by path.
pub fn load_grid(name_or_path: &str) -> Result<GridSpec, GridError> {
    match presets::by_name(name_or_path) {
        Some(spec) => Ok(spec),
        None => load_grid_file(std::path::Path::new(name_or_path)),
    }
}

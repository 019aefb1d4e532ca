//! Built-in desk-scale grids. Both ship as plain grid files under `grids/`.

use super::{parse_grid, GridSpec};

pub const CASE5_TEXT: &str = include_str!("../../grids/case5.grid");
pub const CASE14_TEXT: &str = include_str!("../../grids/case14.grid");

pub const NAMES: [&str; 2] = ["case5", "case14"];

pub fn case5() -> GridSpec {
    parse_grid(CASE5_TEXT).expect("case5 preset is valid")
}

pub fn case14() -> GridSpec {
    parse_grid(CASE14_TEXT).expect("case14 preset is valid")
}

pub fn by_name(name: &str) -> Option<GridSpec> {
    match name {
        "case5" => Some(case5()),
        "case14" => Some(case14()),
        _ => None,
    }
}

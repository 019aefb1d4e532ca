//! Plain-text grid definition files.
//!
//! ```text
//! # comments run to end of line
//! [grid]
//! name = case5
//!
//! [substations]
//! # id name
//! 0 hub
//!
//! [lines]
//! # id from to reactance_pu thermal_limit_pu
//! 0 0 1 0.10 1.60
//!
//! [generators]
//! # id substation p_min_mw p_max_mw ramp_mw renewable
//! 0 1 0 400 60 false
//!
//! [loads]
//! # id substation nominal_mw
//! 0 0 90
//! ```
//!
//! Records are whitespace separated, one per line. Ids must be dense and in
//! order starting at 0. `renewable` accepts `true`/`false`/`1`/`0`.

use std::fmt::Write as _;
use std::path::Path;

use super::{GenSpec, GridError, GridSpec, LineSpec, LoadSpec, Substation};

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Grid,
    Substations,
    Lines,
    Generators,
    Loads,
}

pub fn parse_grid(text: &str) -> Result<GridSpec, GridError> {
    let mut section = Section::None;
    let mut name = String::from("grid");
    let mut subs = Vec::new();
    let mut lines = Vec::new();
    let mut gens = Vec::new();
    let mut loads = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            section = match content {
                "[grid]" => Section::Grid,
                "[substations]" => Section::Substations,
                "[lines]" => Section::Lines,
                "[generators]" => Section::Generators,
                "[loads]" => Section::Loads,
                other => return Err(parse_err(lineno, format!("unknown section {other}"))),
            };
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let err = |msg: String| parse_err(lineno, msg);
        match section {
            Section::None => return Err(err("record outside of any section".into())),
            Section::Grid => {
                let (key, value) = content
                    .split_once('=')
                    .ok_or_else(|| err("expected key = value".into()))?;
                match key.trim() {
                    "name" => name = value.trim().to_string(),
                    other => return Err(err(format!("unknown grid key {other}"))),
                }
            }
            Section::Substations => {
                expect_fields(&fields, 2, lineno)?;
                subs.push(Substation {
                    id: num(fields[0], lineno)?,
                    name: fields[1].to_string(),
                });
            }
            Section::Lines => {
                expect_fields(&fields, 5, lineno)?;
                lines.push(LineSpec {
                    id: num(fields[0], lineno)?,
                    from: num(fields[1], lineno)?,
                    to: num(fields[2], lineno)?,
                    reactance: num(fields[3], lineno)?,
                    thermal_limit: num(fields[4], lineno)?,
                });
            }
            Section::Generators => {
                expect_fields(&fields, 6, lineno)?;
                let renewable = match fields[5] {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    other => return Err(err(format!("bad renewable flag {other}"))),
                };
                gens.push(GenSpec {
                    id: num(fields[0], lineno)?,
                    substation: num(fields[1], lineno)?,
                    p_min: num(fields[2], lineno)?,
                    p_max: num(fields[3], lineno)?,
                    ramp: num(fields[4], lineno)?,
                    renewable,
                });
            }
            Section::Loads => {
                expect_fields(&fields, 3, lineno)?;
                loads.push(LoadSpec {
                    id: num(fields[0], lineno)?,
                    substation: num(fields[1], lineno)?,
                    nominal_mw: num(fields[2], lineno)?,
                });
            }
        }
    }
    GridSpec::new(name, subs, lines, gens, loads)
}

pub fn load_grid_file(path: &Path) -> Result<GridSpec, GridError> {
    let text = std::fs::read_to_string(path).map_err(|e| GridError::Io(format!("{}: {e}", path.display())))?;
    parse_grid(&text)
}

/// Renders a spec back into the text format. `parse_grid(&to_grid_text(s)) == s`.
pub fn to_grid_text(spec: &GridSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "[grid]\nname = {}\n", spec.name);
    let _ = writeln!(out, "[substations]\n# id name");
    for s in &spec.substations {
        let _ = writeln!(out, "{} {}", s.id, s.name);
    }
    let _ = writeln!(out, "\n[lines]\n# id from to reactance_pu thermal_limit_pu");
    for l in &spec.lines {
        let _ = writeln!(out, "{} {} {} {} {}", l.id, l.from, l.to, l.reactance, l.thermal_limit);
    }
    let _ = writeln!(out, "\n[generators]\n# id substation p_min_mw p_max_mw ramp_mw renewable");
    for g in &spec.generators {
        let _ = writeln!(out, "{} {} {} {} {} {}", g.id, g.substation, g.p_min, g.p_max, g.ramp, g.renewable);
    }
    let _ = writeln!(out, "\n[loads]\n# id substation nominal_mw");
    for d in &spec.loads {
        let _ = writeln!(out, "{} {} {}", d.id, d.substation, d.nominal_mw);
    }
    out
}

fn parse_err(line: usize, message: String) -> GridError {
    GridError::Parse { line, message }
}

fn expect_fields(fields: &[&str], n: usize, line: usize) -> Result<(), GridError> {
    if fields.len() != n {
        return Err(parse_err(line, format!("expected {n} fields, found {}", fields.len())));
    }
    Ok(())
}

fn num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, GridError> {
    s.parse().map_err(|_| parse_err(line, format!("cannot parse {s:?}")))
}

//! Chronics (demand and renewable availability series) and attack schedules.
//!
//! On disk a scenario is a directory holding two comma-separated files:
//!
//! * `chronics.csv` with header `step,load_<id>...,renew_cap_<id>...`, one row
//!   per step, values in MW;
//! * `attacks.csv` with header `step,line_id,duration`.

use std::fs;
use std::path::{Path, PathBuf};

use super::EnvError;
use crate::grid::GridSpec;

/// Steps per simulated day at five-minute resolution.
pub const STEPS_PER_DAY: usize = 288;

/// Forced outage of one line starting at `step`, lasting `duration` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attack {
    pub step: usize,
    pub line: usize,
    pub duration: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    /// `load_mw[t][d]`, demand of load `d` at step `t`.
    pub load_mw: Vec<Vec<f64>>,
    /// Generator ids of the renewable columns, ascending.
    pub renewable_ids: Vec<usize>,
    /// `renewable_mw[t][k]`, available power of generator `renewable_ids[k]`.
    pub renewable_mw: Vec<Vec<f64>>,
    pub attacks: Vec<Attack>,
}

impl Scenario {
    /// Episode length in steps.
    pub fn len(&self) -> usize {
        self.load_mw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.load_mw.is_empty()
    }

    /// Constant demand at `load_scale` times nominal and renewables at
    /// `renewable_fraction` of their capacity; no attacks.
    pub fn flat(spec: &GridSpec, len: usize, load_scale: f64, renewable_fraction: f64) -> Self {
        let loads: Vec<f64> = spec.loads.iter().map(|d| d.nominal_mw * load_scale).collect();
        let renewable_ids: Vec<usize> = spec.generators.iter().filter(|g| g.renewable).map(|g| g.id).collect();
        let renew: Vec<f64> = renewable_ids
            .iter()
            .map(|&g| spec.generators[g].p_max * renewable_fraction)
            .collect();
        Scenario {
            id: "flat".into(),
            load_mw: vec![loads; len],
            renewable_ids,
            renewable_mw: vec![renew; len],
            attacks: Vec::new(),
        }
    }

    pub fn validate(&self, spec: &GridSpec) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidScenario(m));
        if self.is_empty() {
            return bad("scenario has no steps".into());
        }
        if self.renewable_mw.len() != self.len() {
            return bad("renewable series length differs from load series".into());
        }
        let expected: Vec<usize> = spec.generators.iter().filter(|g| g.renewable).map(|g| g.id).collect();
        if self.renewable_ids != expected {
            return bad(format!("renewable columns {:?} do not match grid renewables {expected:?}", self.renewable_ids));
        }
        for (t, row) in self.load_mw.iter().enumerate() {
            if row.len() != spec.n_loads() {
                return bad(format!("step {t}: {} load columns, grid has {}", row.len(), spec.n_loads()));
            }
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad(format!("step {t}: demands must be finite and non-negative"));
            }
        }
        for (t, row) in self.renewable_mw.iter().enumerate() {
            if row.len() != self.renewable_ids.len() || row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad(format!("step {t}: malformed renewable row"));
            }
        }
        for a in &self.attacks {
            if a.step >= self.len() || a.line >= spec.n_lines() {
                return bad(format!("attack {a:?} out of range"));
            }
        }
        Ok(())
    }

    /// Renewable availability per generator at step `t` (0 for dispatchable units).
    pub fn renewable_by_gen(&self, spec: &GridSpec, t: usize) -> Vec<f64> {
        let mut out = vec![0.0; spec.n_generators()];
        for (k, &g) in self.renewable_ids.iter().enumerate() {
            out[g] = self.renewable_mw[t][k];
        }
        out
    }

    pub fn chronics_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["step".to_string()];
        header.extend((0..self.load_mw[0].len()).map(|d| format!("load_{d}")));
        header.extend(self.renewable_ids.iter().map(|g| format!("renew_cap_{g}")));
        w.write_record(&header).expect("in-memory write");
        for t in 0..self.len() {
            let mut row = vec![t.to_string()];
            row.extend(self.load_mw[t].iter().map(|v| v.to_string()));
            row.extend(self.renewable_mw[t].iter().map(|v| v.to_string()));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn attacks_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "line_id", "duration"]).expect("in-memory write");
        for a in &self.attacks {
            w.write_record([a.step.to_string(), a.line.to_string(), a.duration.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn parse(id: &str, chronics: &str, attacks: &str) -> Result<Self, EnvError> {
        let bad = |m: String| EnvError::InvalidScenario(format!("{id}: {m}"));
        let mut rdr = csv::Reader::from_reader(chronics.as_bytes());
        let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
        if header.get(0) != Some("step") {
            return Err(bad("chronics header must start with `step`".into()));
        }
        let mut load_cols = 0;
        let mut renewable_ids = Vec::new();
        for name in header.iter().skip(1) {
            if let Some(rest) = name.strip_prefix("load_") {
                if !renewable_ids.is_empty() || rest.parse::<usize>() != Ok(load_cols) {
                    return Err(bad(format!("unexpected column {name}")));
                }
                load_cols += 1;
            } else if let Some(rest) = name.strip_prefix("renew_cap_") {
                renewable_ids.push(rest.parse::<usize>().map_err(|_| bad(format!("bad column {name}")))?);
            } else {
                return Err(bad(format!("unknown column {name}")));
            }
        }
        let mut load_mw = Vec::new();
        let mut renewable_mw = Vec::new();
        for (t, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad(format!("non-numeric value in row {t}")))?;
            if vals.len() != 1 + load_cols + renewable_ids.len() || vals[0] != t as f64 {
                return Err(bad(format!("malformed row {t}")));
            }
            load_mw.push(vals[1..1 + load_cols].to_vec());
            renewable_mw.push(vals[1 + load_cols..].to_vec());
        }
        let mut rdr = csv::Reader::from_reader(attacks.as_bytes());
        let mut list = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let field = |i: usize| -> Result<u64, EnvError> {
                rec.get(i)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| bad("malformed attack row".into()))
            };
            list.push(Attack {
                step: field(0)? as usize,
                line: field(1)? as usize,
                duration: field(2)? as u32,
            });
        }
        Ok(Scenario {
            id: id.to_string(),
            load_mw,
            renewable_ids,
            renewable_mw,
            attacks: list,
        })
    }

    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("chronics.csv"), self.chronics_csv())?;
        fs::write(dir.join("attacks.csv"), self.attacks_csv())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, EnvError> {
        let io = |e: std::io::Error| EnvError::Io(format!("{}: {e}", dir.display()));
        let chronics = fs::read_to_string(dir.join("chronics.csv")).map_err(io)?;
        let attacks = fs::read_to_string(dir.join("attacks.csv")).map_err(io)?;
        let id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Scenario::parse(&id, &chronics, &attacks)
    }
}

/// Loads every scenario sub-directory of `root` in lexicographic order.
pub fn read_scenario_set(root: &Path) -> Result<Vec<Scenario>, EnvError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| EnvError::Io(format!("{}: {e}", root.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("chronics.csv").is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| Scenario::read_dir(d)).collect()
}

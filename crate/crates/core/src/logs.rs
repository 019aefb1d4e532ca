//! Append-only tab-separated logs: per-iteration training metrics and per-step
//! replay records. Floats are written in shortest round-trip form, so every
//! record parses back to the identical value.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log io: {0}")]
    Io(#[from] io::Error),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

/// A record type stored one per line under a fixed header.
pub trait TsvRecord: Sized {
    const HEADER: &'static str;
    fn to_fields(&self) -> Vec<String>;
    fn from_fields(fields: &[&str]) -> Result<Self, String>;

    fn to_line(&self) -> String {
        self.to_fields().join("\t")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

fn parse_opt(s: &str) -> Result<Option<f64>, String> {
    if s == "-" {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| format!("bad number {s:?}"))
    }
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("bad number {s:?}"))
}

fn expect_len(fields: &[&str], n: usize) -> Result<(), String> {
    if fields.len() == n {
        Ok(())
    } else {
        Err(format!("expected {n} fields, found {}", fields.len()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub max_return: f64,
    pub grad_norm: f64,
    pub mean_steps: f64,
    pub wall_time_s: f64,
}

impl TsvRecord for MetricsRecord {
    const HEADER: &'static str = "iteration\tmean_return\tstd_return\tmax_return\tgrad_norm\tmean_steps\twall_time_s";

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.iteration.to_string(),
            self.mean_return.to_string(),
            self.std_return.to_string(),
            self.max_return.to_string(),
            self.grad_norm.to_string(),
            self.mean_steps.to_string(),
            self.wall_time_s.to_string(),
        ]
    }

    fn from_fields(f: &[&str]) -> Result<Self, String> {
        expect_len(f, 7)?;
        Ok(MetricsRecord {
            iteration: num(f[0])?,
            mean_return: num(f[1])?,
            std_return: num(f[2])?,
            max_return: num(f[3])?,
            grad_norm: num(f[4])?,
            mean_steps: num(f[5])?,
            wall_time_s: num(f[6])?,
        })
    }
}

/// One environment step as seen by the planner.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRecord {
    pub scenario: String,
    pub step: usize,
    pub action_index: usize,
    pub action: String,
    pub k: usize,
    pub survivors: usize,
    pub fallback: bool,
    pub predicted_risk: Option<f64>,
    pub realized_risk: Option<f64>,
    pub reward: f64,
    pub reason: String,
}

impl TsvRecord for ReplayRecord {
    const HEADER: &'static str =
        "scenario\tstep\taction_index\taction\tk\tsurvivors\tfallback\tpredicted_risk\trealized_risk\treward\treason";

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.scenario.clone(),
            self.step.to_string(),
            self.action_index.to_string(),
            self.action.clone(),
            self.k.to_string(),
            self.survivors.to_string(),
            (self.fallback as u8).to_string(),
            opt(self.predicted_risk),
            opt(self.realized_risk),
            self.reward.to_string(),
            self.reason.clone(),
        ]
    }

    fn from_fields(f: &[&str]) -> Result<Self, String> {
        expect_len(f, 11)?;
        Ok(ReplayRecord {
            scenario: f[0].to_string(),
            step: num(f[1])?,
            action_index: num(f[2])?,
            action: f[3].to_string(),
            k: num(f[4])?,
            survivors: num(f[5])?,
            fallback: match f[6] {
                "0" => false,
                "1" => true,
                s => return Err(format!("bad flag {s:?}")),
            },
            predicted_risk: parse_opt(f[7])?,
            realized_risk: parse_opt(f[8])?,
            reward: num(f[9])?,
            reason: f[10].to_string(),
        })
    }
}

/// Appends records to `path`, writing the header first if the file is new.
pub struct TsvAppender {
    file: File,
}

impl TsvAppender {
    pub fn open<R: TsvRecord>(path: &Path) -> Result<Self, LogError> {
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if file.metadata()?.len() == 0 {
            writeln!(file, "{}", R::HEADER)?;
        }
        Ok(TsvAppender { file })
    }

    pub fn append<R: TsvRecord>(&mut self, rec: &R) -> Result<(), LogError> {
        writeln!(self.file, "{}", rec.to_line())?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn append_records<R: TsvRecord>(path: &Path, records: &[R]) -> Result<(), LogError> {
    let mut w = TsvAppender::open::<R>(path)?;
    for r in records {
        w.append(r)?;
    }
    Ok(())
}

pub fn read_records<R: TsvRecord>(path: &Path) -> Result<Vec<R>, LogError> {
    let reader = BufReader::new(File::open(path)?);
    let err = |line: usize, message: String| LogError::Parse { path: path.display().to_string(), line, message };
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != R::HEADER {
                return Err(err(1, "unexpected header".into()));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        out.push(R::from_fields(&fields).map_err(|m| err(i + 1, m))?);
    }
    Ok(out)
}

/// Keeps only the first `n` records of a metrics log, e.g. when resuming from
/// an earlier checkpoint.
pub fn truncate_records<R: TsvRecord>(path: &Path, n: usize) -> Result<(), LogError> {
    if !path.exists() {
        return Ok(());
    }
    let kept: Vec<R> = read_records::<R>(path)?.into_iter().take(n).collect();
    let mut body = String::from(R::HEADER);
    body.push('\n');
    for r in &kept {
        body.push_str(&r.to_line());
        body.push('\n');
    }
    std::fs::write(path, body)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn replay(step: usize, r: Option<f64>) -> ReplayRecord {
        ReplayRecord {
            scenario: "s003".into(),
            step,
            action_index: 17,
            action: "substation 0 switch 0b110".into(),
            k: 64,
            survivors: 40,
            fallback: step % 2 == 0,
            predicted_risk: r,
            realized_risk: r.map(|v| v * 1.1),
            reward: 0.99,
            reason: "none".into(),
        }
    }

    #[test]
    fn appending_keeps_earlier_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.tsv");
        append_records(&path, &[replay(0, Some(0.7))]).unwrap();
        append_records(&path, &[replay(1, None), replay(2, Some(1.0 / 3.0))]).unwrap();
        let back: Vec<ReplayRecord> = read_records(&path).unwrap();
        assert_eq!(back, vec![replay(0, Some(0.7)), replay(1, None), replay(2, Some(1.0 / 3.0))]);
        assert_eq!(std::fs::read_to_string(&path).unwrap().matches("scenario\tstep").count(), 1);
    }

    #[test]
    fn bad_lines_report_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        std::fs::write(&path, format!("{}\n1\t2\n", MetricsRecord::HEADER)).unwrap();
        match read_records::<MetricsRecord>(&path) {
            Err(LogError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_keeps_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        let rec = |i| MetricsRecord {
            iteration: i,
            mean_return: i as f64,
            std_return: 0.0,
            max_return: 1.0,
            grad_norm: 0.5,
            mean_steps: 3.0,
            wall_time_s: 0.1,
        };
        append_records(&path, &[rec(0), rec(1), rec(2)]).unwrap();
        truncate_records::<MetricsRecord>(&path, 2).unwrap();
        assert_eq!(read_records::<MetricsRecord>(&path).unwrap(), vec![rec(0), rec(1)]);
    }

    proptest! {
        #[test]
        fn metrics_round_trip(it in 0usize..10_000, vals in proptest::array::uniform6(any::<f64>().prop_filter("finite", |v| v.is_finite()))) {
            let rec = MetricsRecord {
                iteration: it,
                mean_return: vals[0],
                std_return: vals[1],
                max_return: vals[2],
                grad_norm: vals[3],
                mean_steps: vals[4],
                wall_time_s: vals[5],
            };
            let line = rec.to_line();
            let fields: Vec<&str> = line.split('\t').collect();
            let back = MetricsRecord::from_fields(&fields).unwrap();
            prop_assert_eq!(back, rec);
        }
    }
}

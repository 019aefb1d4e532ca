//! Run configuration: a flat `key = value` file, overridable from the command
//! line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use gridsas::es_trainer::TrainConfig;
use gridsas::policy::DEFAULT_HIDDEN;
use gridsas::rollout_workers::PoolConfig;
use gridsas::sas_planner::DEFAULT_K;

/// Where rollouts run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Rayon threads inside the coordinator.
    Local,
    /// Worker threads behind the message protocol.
    Threads,
    /// Worker processes on stdin/stdout.
    Processes,
}

impl FromStr for Backend {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "local" => Backend::Local,
            "threads" => Backend::Threads,
            "processes" => Backend::Processes,
            _ => bail!("unknown backend {s:?} (local, threads, processes)"),
        })
    }
}

impl Backend {
    fn as_str(self) -> &'static str {
        match self {
            Backend::Local => "local",
            Backend::Threads => "threads",
            Backend::Processes => "processes",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Preset name or grid file.
    pub grid: String,
    pub scenarios: Option<PathBuf>,
    /// Held-out scenarios for the closing evaluation; defaults to `scenarios`.
    pub eval_scenarios: Option<PathBuf>,
    pub output: PathBuf,
    pub backend: Backend,
    /// Worker count; 0 lets the local backend use every core.
    pub workers: usize,
    pub seed: u64,
    /// One training run per entry.
    pub ks: Vec<usize>,
    pub population: usize,
    pub sigma: f64,
    pub learning_rate: f64,
    pub episodes_per_perturbation: usize,
    pub iterations: usize,
    pub gamma: f64,
    pub antithetic: bool,
    pub rank_shaping: bool,
    pub max_steps: usize,
    pub hidden: Vec<usize>,
    pub include_redispatch: bool,
    pub checkpoint_every: usize,
    pub quorum: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            grid: "case5".into(),
            scenarios: None,
            eval_scenarios: None,
            output: PathBuf::from("runs"),
            backend: Backend::Local,
            workers: 0,
            seed: t.seed,
            ks: vec![DEFAULT_K],
            population: t.population,
            sigma: t.sigma,
            learning_rate: t.learning_rate,
            episodes_per_perturbation: t.episodes_per_perturbation,
            iterations: t.iterations,
            gamma: t.gamma,
            antithetic: t.antithetic,
            rank_shaping: t.rank_shaping,
            max_steps: t.max_steps,
            hidden: DEFAULT_HIDDEN.to_vec(),
            include_redispatch: false,
            checkpoint_every: 10,
            quorum: PoolConfig::default().quorum,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| anyhow::anyhow!("{key}: cannot parse {v:?}: {e}"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => bail!("{key}: expected a boolean, got {v:?}"),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "grid" => self.grid = v.to_string(),
            "scenarios" => self.scenarios = Some(PathBuf::from(v)),
            "eval_scenarios" => self.eval_scenarios = Some(PathBuf::from(v)),
            "output" => self.output = PathBuf::from(v),
            "backend" => self.backend = v.parse()?,
            "workers" => self.workers = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "k" => self.ks = parse_list(key, v)?,
            "population" => self.population = parse(key, v)?,
            "sigma" => self.sigma = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "episodes_per_perturbation" => self.episodes_per_perturbation = parse(key, v)?,
            "iterations" => self.iterations = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "antithetic" => self.antithetic = parse_bool(key, v)?,
            "rank_shaping" => self.rank_shaping = parse_bool(key, v)?,
            "max_steps" => self.max_steps = parse(key, v)?,
            "hidden" => self.hidden = parse_list(key, v)?,
            "include_redispatch" => self.include_redispatch = parse_bool(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "quorum" => self.quorum = parse(key, v)?,
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').with_context(|| format!("expected key=value, got {pair:?}"))?;
        self.set(k, v)
    }

    pub fn parse_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.set_pair(line).with_context(|| format!("config line {}", i + 1))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = RunConfig::default();
        cfg.parse_text(&text).with_context(|| path.display().to_string())?;
        Ok(cfg)
    }

    /// Every key, in a form [`RunConfig::parse_text`] reads back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let _ = writeln!(s, "grid = {}", self.grid);
        if let Some(p) = path(&self.scenarios) {
            let _ = writeln!(s, "scenarios = {p}");
        }
        if let Some(p) = path(&self.eval_scenarios) {
            let _ = writeln!(s, "eval_scenarios = {p}");
        }
        let _ = writeln!(s, "output = {}", self.output.display());
        let _ = writeln!(s, "backend = {}", self.backend.as_str());
        let _ = writeln!(s, "workers = {}", self.workers);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "k = {}", join(&self.ks));
        let _ = writeln!(s, "population = {}", self.population);
        let _ = writeln!(s, "sigma = {}", self.sigma);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "episodes_per_perturbation = {}", self.episodes_per_perturbation);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "antithetic = {}", self.antithetic);
        let _ = writeln!(s, "rank_shaping = {}", self.rank_shaping);
        let _ = writeln!(s, "max_steps = {}", self.max_steps);
        let _ = writeln!(s, "hidden = {}", join(&self.hidden));
        let _ = writeln!(s, "include_redispatch = {}", self.include_redispatch);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "quorum = {}", self.quorum);
        s
    }

    pub fn train_config(&self, k: usize) -> TrainConfig {
        TrainConfig {
            population: self.population,
            sigma: self.sigma,
            learning_rate: self.learning_rate,
            k,
            episodes_per_perturbation: self.episodes_per_perturbation,
            seed: self.seed,
            iterations: self.iterations,
            gamma: self.gamma,
            antithetic: self.antithetic,
            rank_shaping: self.rank_shaping,
            max_steps: self.max_steps,
        }
    }

    pub fn pool_config(&self) -> PoolConfig {
        PoolConfig { quorum: self.quorum, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            bail!("k must list positive action set sizes");
        }
        if !(self.quorum > 0.0 && self.quorum <= 1.0) {
            bail!("quorum must lie in (0, 1]");
        }
        for &k in &self.ks {
            self.train_config(k).validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.parse_text("# sweep\nk = 1, 8,64\nbackend=processes\nscenarios = data/train # inline\nrank_shaping = off\n")
            .unwrap();
        assert_eq!(cfg.ks, vec![1, 8, 64]);
        assert_eq!(cfg.backend, Backend::Processes);
        assert!(!cfg.rank_shaping);
        let mut back = RunConfig::default();
        back.parse_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_entries() {
        let mut cfg = RunConfig::default();
        assert!(cfg.parse_text("population = many").is_err());
        assert!(cfg.parse_text("colour = blue").is_err());
        assert!(cfg.parse_text("just a line").is_err());
        assert!(cfg.set("antithetic", "maybe").is_err());
        cfg.set("k", "0").unwrap();
        assert!(cfg.validate().is_err());
    }
}

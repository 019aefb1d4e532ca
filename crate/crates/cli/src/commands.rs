use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use anyhow::{Context, Result};
use gridsas::action_space::{build_catalogue, DEFAULT_RAMP_FRACTIONS};
use gridsas::env::{read_scenario_set, EnvConfig, EnvError, Scenario};
use gridsas::es_trainer::{evaluate as evaluate_policy, evaluate_do_nothing, latest_checkpoint, EvalReport, TrainError, Trainer, METRICS_FILE};
use gridsas::grid::{load_grid, GridError, GridSpec};
use gridsas::logs::{append_records, read_records, LogError, ReplayRecord};
use gridsas::policy::{PolicyError, PolicyParams};
use gridsas::rollout::{run_episode, Agent, RolloutContext};
use gridsas::rollout_workers::{serve_stdio, FaultPlan, LocalExecutor, RolloutBackend, WorkerError, WorkerPool};
use gridsas::sas_planner::PlannerError;
use gridsas::scenario_gen::{generate, GeneratorConfig};

use crate::config::{Backend, RunConfig};
use crate::RunArgs;

/// An error with an explicit category for the error line.
#[derive(Debug)]
pub struct Tagged {
    pub kind: &'static str,
    pub message: String,
}

impl std::fmt::Display for Tagged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Tagged {}

fn tagged(kind: &'static str, message: impl Into<String>) -> anyhow::Error {
    Tagged { kind, message: message.into() }.into()
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(t) = cause.downcast_ref::<Tagged>() {
            return t.kind;
        }
        if cause.is::<WorkerError>() {
            return "worker";
        }
        if cause.is::<TrainError>() {
            return "train";
        }
        if cause.is::<PolicyError>() {
            return "policy";
        }
        if cause.is::<PlannerError>() {
            return "planner";
        }
        if cause.is::<GridError>() {
            return "grid";
        }
        if cause.is::<EnvError>() {
            return "scenario";
        }
        if cause.is::<LogError>() {
            return "log";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "error"
}

/// `error kind=<kind> message=<text>` on one line.
pub fn error_line(e: &anyhow::Error) -> String {
    let message = format!("{e:#}").replace(['\n', '\r'], " ");
    format!("error kind={} message={message}", error_kind(e))
}

fn resolve(run: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &run.config {
        Some(p) => RunConfig::load(p).map_err(|e| tagged("config", format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    let mut overrides: Vec<(&str, String)> = Vec::new();
    let path = |p: &PathBuf| p.display().to_string();
    if let Some(v) = &run.grid {
        overrides.push(("grid", v.clone()));
    }
    if let Some(v) = &run.scenarios {
        overrides.push(("scenarios", path(v)));
    }
    if let Some(v) = &run.eval_scenarios {
        overrides.push(("eval_scenarios", path(v)));
    }
    if let Some(v) = &run.output {
        overrides.push(("output", path(v)));
    }
    if let Some(v) = run.workers {
        overrides.push(("workers", v.to_string()));
    }
    if let Some(v) = &run.backend {
        overrides.push(("backend", v.clone()));
    }
    if let Some(v) = run.seed {
        overrides.push(("seed", v.to_string()));
    }
    if let Some(v) = run.iterations {
        overrides.push(("iterations", v.to_string()));
    }
    if let Some(v) = &run.k {
        overrides.push(("k", v.clone()));
    }
    for (k, v) in overrides {
        cfg.set(k, &v).map_err(|e| tagged("config", format!("{e:#}")))?;
    }
    for pair in &run.set {
        cfg.set_pair(pair).map_err(|e| tagged("config", format!("{e:#}")))?;
    }
    cfg.validate().map_err(|e| tagged("config", format!("{e:#}")))?;
    Ok(cfg)
}

fn load_scenarios(dir: &Path) -> Result<Vec<Scenario>> {
    if !dir.is_dir() {
        return Err(tagged("config", format!("scenario directory {} does not exist", dir.display())));
    }
    let set = read_scenario_set(dir).with_context(|| format!("loading scenarios from {}", dir.display()))?;
    if set.is_empty() {
        return Err(tagged("config", format!("no scenarios in {}", dir.display())));
    }
    Ok(set)
}

fn context(spec: &GridSpec, dir: &Path, include_redispatch: bool, hidden: &[usize]) -> Result<Arc<RolloutContext>> {
    let scenarios = load_scenarios(dir)?;
    let ctx = RolloutContext::new(spec.clone(), scenarios, EnvConfig::default(), include_redispatch, hidden.to_vec())
        .with_context(|| format!("scenarios in {} do not fit the grid", dir.display()))?;
    Ok(Arc::new(ctx))
}

fn backend(cfg: &RunConfig, ctx: &Arc<RolloutContext>) -> Result<Box<dyn RolloutBackend>> {
    let workers = cfg.workers;
    Ok(match cfg.backend {
        Backend::Local => Box::new(LocalExecutor::with_threads(ctx.clone(), cfg.gamma, workers)),
        Backend::Threads => Box::new(WorkerPool::threads(ctx, cfg.gamma, workers.max(1), &[], cfg.pool_config())?),
        Backend::Processes => {
            let exe = std::env::current_exe().context("locating the gridsas executable")?;
            let command = |id: u32| {
                let mut c = Command::new(&exe);
                c.args(["worker", "--id", &id.to_string()]);
                c
            };
            Box::new(WorkerPool::processes(ctx, cfg.gamma, workers.max(1), command, cfg.pool_config())?)
        }
    })
}

const REPORT_HEADER: &str = "agent\ttrained_k\teval_k\tepisodes\tmean_return\tmean_survival\tfallback_rate";

fn report_row(trained_k: Option<usize>, r: &EvalReport) -> String {
    let opt = |k: Option<usize>| k.map_or("-".to_string(), |k| k.to_string());
    let agent = if r.k.is_some() { "sas" } else { "do-nothing" };
    format!(
        "{agent}\t{}\t{}\t{}\t{:.6}\t{:.3}\t{:.6}",
        opt(trained_k),
        opt(r.k),
        r.episodes.len(),
        r.mean_return,
        r.mean_survival,
        r.fallback_rate
    )
}

fn write_report(path: &Path, rows: &[String]) -> Result<()> {
    let mut body = format!("{REPORT_HEADER}\n");
    for r in rows {
        body.push_str(r);
        body.push('\n');
    }
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Plays every scenario in order and collects the step log.
fn play(
    ctx: &RolloutContext,
    agent: Agent<'_>,
    k: Option<usize>,
    max_steps: usize,
    gamma: f64,
) -> Result<(EvalReport, Vec<ReplayRecord>)> {
    let mut log = Vec::new();
    let mut episodes = Vec::with_capacity(ctx.scenarios.len());
    for s in 0..ctx.scenarios.len() {
        episodes.push(run_episode(ctx, s, agent, max_steps, gamma, Some(&mut log))?);
    }
    Ok((EvalReport::from_episodes(k, episodes), log))
}

/// Like [`play`] without the log, spread over the rayon pool.
fn score(ctx: &RolloutContext, params: Option<&PolicyParams>, k: usize, max_steps: usize, gamma: f64) -> Result<EvalReport> {
    let all: Vec<usize> = (0..ctx.scenarios.len()).collect();
    Ok(match params {
        Some(p) => evaluate_policy(ctx, p, k, &all, gamma, max_steps)?,
        None => evaluate_do_nothing(ctx, &all, gamma, max_steps)?,
    })
}

pub fn gen_scenarios(
    grid: &str,
    count: usize,
    length: usize,
    attack_rate: Option<f64>,
    seed: u64,
    level: Option<&str>,
    out: &Path,
) -> Result<()> {
    let spec = load_grid(grid)?;
    let mut cfg = GeneratorConfig { length, seed, ..Default::default() };
    if let Some(rate) = attack_rate {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(tagged("config", "attack rate must be a non-negative number"));
        }
        cfg.attacks_per_day = rate;
    }
    if let Some(l) = level {
        let parts: Vec<f64> = l
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| tagged("config", format!("bad level {l:?}")))?;
        match parts[..] {
            [lo, hi] if lo > 0.0 && lo <= hi => cfg.level = (lo, hi),
            [v] if v > 0.0 => cfg.level = (v, v),
            _ => return Err(tagged("config", format!("bad level {l:?}"))),
        }
    }
    if length == 0 {
        return Err(tagged("config", "length must be positive"));
    }
    for sc in generate(&spec, &cfg, count) {
        sc.write_dir(&out.join(&sc.id)).with_context(|| format!("writing scenario {}", sc.id))?;
    }
    println!("wrote {count} scenarios of {length} steps to {}", out.display());
    Ok(())
}

/// Trains one policy at action set size `k` into `dir`.
fn train_one(cfg: &RunConfig, spec: &GridSpec, k: usize, dir: &Path, resume: bool) -> Result<PolicyParams> {
    let train_dir = cfg.scenarios.as_deref().ok_or_else(|| tagged("config", "scenarios is required for training"))?;
    let ctx = context(spec, train_dir, cfg.include_redispatch, &cfg.hidden)?;
    if !resume && (dir.join(METRICS_FILE).exists() || latest_checkpoint(dir)?.is_some()) {
        return Err(tagged("config", format!("{} already holds a run; pass --resume or pick another output", dir.display())));
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut resolved = cfg.clone();
    resolved.ks = vec![k];
    resolved.output = dir.to_path_buf();
    std::fs::write(dir.join("config.txt"), resolved.to_text())?;

    let ids: Vec<String> = ctx.scenarios.iter().map(|s| s.id.clone()).collect();
    let init = PolicyParams::init(ctx.policy_layers(), cfg.seed);
    let mut trainer = Trainer::new(cfg.train_config(k), init, ids)?.with_output(dir, cfg.checkpoint_every)?;
    if resume {
        trainer = trainer.resume()?;
        eprintln!("k={k}: resuming after iteration {}", trainer.iteration);
    }
    let mut exec = backend(cfg, &ctx)?;
    let total = cfg.iterations;
    trainer.train(exec.as_mut(), |s| {
        eprintln!(
            "k={k} iter {}/{total} mean_return={:.3} max_return={:.3} grad_norm={:.4} mean_steps={:.1} time={:.2}s",
            s.iteration + 1,
            s.mean_return,
            s.max_return,
            s.grad_norm,
            s.mean_steps,
            s.wall_time_s
        );
    })?;
    Ok(trainer.params)
}

fn eval_context(cfg: &RunConfig, spec: &GridSpec) -> Result<Arc<RolloutContext>> {
    let dir = cfg.eval_scenarios.as_deref().or(cfg.scenarios.as_deref()).ok_or_else(|| tagged("config", "no evaluation scenarios"))?;
    context(spec, dir, cfg.include_redispatch, &cfg.hidden)
}

pub fn train(run: &RunArgs, resume: bool) -> Result<()> {
    let cfg = resolve(run)?;
    let spec = load_grid(&cfg.grid)?;
    let eval_ctx = eval_context(&cfg, &spec)?;
    let dn = score(&eval_ctx, None, 0, cfg.max_steps, cfg.gamma)?;
    for &k in &cfg.ks {
        let dir = if cfg.ks.len() == 1 { cfg.output.clone() } else { cfg.output.join(format!("k{k}")) };
        let params = train_one(&cfg, &spec, k, &dir, resume)?;
        let sas = score(&eval_ctx, Some(&params), k, cfg.max_steps, cfg.gamma)?;
        let rows = vec![report_row(Some(k), &sas), report_row(None, &dn)];
        write_report(&dir.join("evaluation.tsv"), &rows)?;
        println!("{}", dir.display());
        println!("{REPORT_HEADER}");
        for r in &rows {
            println!("{r}");
        }
    }
    Ok(())
}

pub fn ablate_k(run: &RunArgs, resume: bool) -> Result<()> {
    let cfg = resolve(run)?;
    let spec = load_grid(&cfg.grid)?;
    let eval_ctx = eval_context(&cfg, &spec)?;
    let mut trained = Vec::new();
    for &k in &cfg.ks {
        let dir = cfg.output.join(format!("k{k}"));
        trained.push((k, train_one(&cfg, &spec, k, &dir, resume)?));
    }
    let mut rows = Vec::new();
    for (tk, params) in &trained {
        for &ek in &cfg.ks {
            let r = score(&eval_ctx, Some(params), ek, cfg.max_steps, cfg.gamma)?;
            rows.push(report_row(Some(*tk), &r));
        }
    }
    let dn = score(&eval_ctx, None, 0, cfg.max_steps, cfg.gamma)?;
    rows.push(report_row(None, &dn));
    write_report(&cfg.output.join("ablation.tsv"), &rows)?;
    println!("{REPORT_HEADER}");
    for r in &rows {
        println!("{r}");
    }
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: Option<PathBuf>,
    pub grid: String,
    pub scenarios: PathBuf,
    pub ks: String,
    pub do_nothing: bool,
    pub max_steps: usize,
    pub gamma: f64,
    pub include_redispatch: bool,
    pub output: Option<PathBuf>,
}

pub fn evaluate(a: &EvalArgs) -> Result<()> {
    if !(a.gamma > 0.0 && a.gamma <= 1.0) {
        return Err(tagged("config", "gamma must lie in (0, 1]"));
    }
    let spec = load_grid(&a.grid)?;
    let params = match (&a.checkpoint, a.do_nothing) {
        (Some(p), false) => Some(PolicyParams::load(p).with_context(|| format!("loading {}", p.display()))?),
        _ => None,
    };
    let hidden = params.as_ref().map_or(Vec::new(), |p| p.layers()[1..p.layers().len() - 1].to_vec());
    let ctx = context(&spec, &a.scenarios, a.include_redispatch, &hidden)?;
    let mut runs: Vec<(String, EvalReport, Vec<ReplayRecord>)> = Vec::new();
    match &params {
        Some(p) => {
            if p.layers() != ctx.policy_layers() {
                return Err(tagged(
                    "version-mismatch",
                    format!("checkpoint layers {:?} do not fit this grid and catalogue ({:?})", p.layers(), ctx.policy_layers()),
                ));
            }
            let ks: Vec<usize> = a
                .ks
                .split(',')
                .map(|x| x.trim().parse::<usize>().ok().filter(|&k| k > 0))
                .collect::<Option<_>>()
                .ok_or_else(|| tagged("config", format!("bad K list {:?}", a.ks)))?;
            for k in ks {
                let (r, log) = play(&ctx, Agent::Sas { params: p, k }, Some(k), a.max_steps, a.gamma)?;
                runs.push((format!("replay_k{k}.tsv"), r, log));
            }
        }
        None => {
            let (r, log) = play(&ctx, Agent::DoNothing, None, a.max_steps, a.gamma)?;
            runs.push(("replay_do_nothing.tsv".into(), r, log));
        }
    }
    let rows: Vec<String> = runs.iter().map(|(_, r, _)| report_row(None, r)).collect();
    if let Some(dir) = &a.output {
        std::fs::create_dir_all(dir)?;
        for (name, _, log) in &runs {
            let path = dir.join(name);
            if path.exists() {
                std::fs::remove_file(&path)?;
            }
            append_records(&path, log)?;
        }
        write_report(&dir.join("evaluation.tsv"), &rows)?;
    }
    println!("{REPORT_HEADER}");
    for r in &rows {
        println!("{r}");
    }
    Ok(())
}

pub fn replay(log: &Path, scenario: Option<&str>, summary: bool) -> Result<()> {
    let records: Vec<ReplayRecord> = read_records(log)?;
    let records: Vec<&ReplayRecord> = records.iter().filter(|r| scenario.is_none_or(|s| r.scenario == s)).collect();
    if records.is_empty() {
        return Err(tagged("config", format!("no matching records in {}", log.display())));
    }
    let risk = |r: Option<f64>| r.map_or("-".to_string(), |v| format!("{v:.3}"));
    let mut out = String::new();
    if summary {
        out.push_str("scenario\tsteps\treturn\tfallbacks\tend\n");
        let mut i = 0;
        while i < records.len() {
            let id = &records[i].scenario;
            let run: Vec<_> = records[i..].iter().take_while(|r| &r.scenario == id).collect();
            let ret: f64 = run.iter().map(|r| r.reward).sum();
            let fallbacks = run.iter().filter(|r| r.fallback).count();
            let _ = writeln!(out, "{id}\t{}\t{ret:.3}\t{fallbacks}\t{}", run.len(), run.last().map_or("none", |r| &r.reason));
            i += run.len();
        }
    } else {
        out.push_str("scenario\tstep\taction\tk\tsurvivors\tpredicted\trealized\treward\tend\n");
        for r in records {
            let fb = if r.fallback { " (fallback)" } else { "" };
            let _ = writeln!(
                out,
                "{}\t{}\t#{} {}{fb}\t{}\t{}\t{}\t{}\t{:.3}\t{}",
                r.scenario,
                r.step,
                r.action_index,
                r.action,
                r.k,
                r.survivors,
                risk(r.predicted_risk),
                risk(r.realized_risk),
                r.reward,
                r.reason
            );
        }
    }
    print!("{out}");
    Ok(())
}

pub fn dump_catalogue(grid: &str, include_redispatch: bool) -> Result<()> {
    let spec = load_grid(grid)?;
    let cat = build_catalogue(&spec, include_redispatch, &DEFAULT_RAMP_FRACTIONS);
    print!("{}", cat.dump_table(&spec));
    Ok(())
}

pub fn worker(id: u32) -> Result<()> {
    let faults = FaultPlan {
        crash_after_tasks: std::env::var("GRIDSAS_WORKER_CRASH_AFTER").ok().and_then(|v| v.parse().ok()),
        ..Default::default()
    };
    serve_stdio(id, &faults)?;
    Ok(())
}

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{EnvVariant, ExperimentConfig, KdeBandwidth, NamedAgent};
use super::ground_truth::{ground_truth_nchain, ChainPath};
use super::metrics::optimal_count;
use crate::agents::{train_run, RunOptions, RunTrace};
use crate::error::{Error, Result};
use crate::mdp::LEFT;
use crate::quantile::wasserstein2_to_gaussian;
use crate::seed::derive_seed;

pub const TRACE_HEADER: [&str; 11] = [
    "t",
    "episode",
    "state",
    "action",
    "is_optimal_action",
    "reward",
    "done",
    "loss",
    "criterion_kind",
    "q_mean_best",
    "bonus_or_gap",
];
pub const SNAPSHOT_HEADER: [&str; 4] = ["t", "sa_label", "theta_index", "theta_value"];
pub const SUMMARY_HEADER: [&str; 4] = ["agent", "seed_count", "total_optimal", "final_w2"];

/// Outcome of one (agent, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub agent: String,
    pub seed: u64,
    pub optimal: u64,
    /// W₂ of the final θ(start, left) to the left-path ground truth.
    pub final_w2: Option<f64>,
    pub error: Option<String>,
    pub invariant_breach: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSummary {
    pub agent: String,
    pub seed_count: usize,
    pub total_optimal: u64,
    /// Mean over seeds with a defined value.
    pub final_w2: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct VariantReport {
    pub label: String,
    pub dir: PathBuf,
    pub runs: Vec<RunOutcome>,
    pub summary: Vec<AgentSummary>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub variants: Vec<VariantReport>,
}

impl ExperimentReport {
    pub fn failures(&self) -> impl Iterator<Item = &RunOutcome> {
        self.variants
            .iter()
            .flat_map(|v| v.runs.iter())
            .filter(|r| r.error.is_some())
    }

    pub fn has_invariant_breach(&self) -> bool {
        self.failures().any(|r| r.invariant_breach)
    }
}

/// Worker count: `PDBOO_THREADS` when set to a positive integer, otherwise
/// rayon's default.
pub fn worker_threads() -> usize {
    std::env::var("PDBOO_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

fn fmt_f(x: f64) -> String {
    format!("{x}")
}

/// Runs every (agent, seed) pair of every environment variant and writes
/// traces, snapshots and summaries under `out_dir` (the config's
/// `output_dir` when `None`). A failing run is reported and skipped; other
/// runs are unaffected.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let variants = cfg.env_variants()?;
    let root = out_dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&root)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let sweep = variants.len() > 1 || variants.iter().any(|v| !v.label.is_empty());
    let mut reports = Vec::with_capacity(variants.len());
    for variant in &variants {
        let dir = if sweep { root.join(&variant.label) } else { root.clone() };
        fs::create_dir_all(&dir)?;
        reports.push(run_variant(cfg, variant, &dir, &pool)?);
    }
    if sweep {
        write_sweep_summary(&root.join("sweep_summary.csv"), &reports)?;
    }
    Ok(ExperimentReport {
        out_dir: root,
        variants: reports,
    })
}

fn run_variant(
    cfg: &ExperimentConfig,
    variant: &EnvVariant,
    dir: &Path,
    pool: &rayon::ThreadPool,
) -> Result<VariantReport> {
    let truth = match &variant.nchain {
        Some(p) if p.chain_len == 5 => Some((
            ground_truth_nchain(p, ChainPath::Left)?,
            ground_truth_nchain(p, ChainPath::Right)?,
        )),
        _ => None,
    };
    // W₂ is only defined against a non-degenerate Gaussian left path.
    let left_gauss = truth.as_ref().and_then(|(l, _)| match l.components() {
        [c] if c.std > 0.0 => Some((c.mean, c.std)),
        _ => None,
    });
    if let Some((left, right)) = &truth {
        let mut w = csv::Writer::from_path(dir.join("ground_truth.csv"))?;
        w.write_record(["path", "weight", "mean", "std"])?;
        for (name, dist) in [("left", left), ("right", right)] {
            for c in dist.components() {
                w.write_record([name.to_string(), fmt_f(c.weight), fmt_f(c.mean), fmt_f(c.std)])?;
            }
        }
        w.flush()?;
    }

    let jobs: Vec<(&NamedAgent, u64)> = cfg
        .agents
        .iter()
        .flat_map(|a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let mut opts = RunOptions::for_env(&variant.mdp, cfg.total_steps);
    opts.episode_cap = cfg.episode_cap;
    opts.eval_interval = cfg.eval_interval;

    let runs: Vec<RunOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|&(agent, seed)| {
                let result = train_run(&variant.mdp, &agent.config, &opts, derive_seed(cfg.master_seed, seed))
                    .and_then(|trace| write_run(dir, &agent.name, seed, &trace).map(|()| trace));
                match result {
                    Ok(trace) => RunOutcome {
                        agent: agent.name.clone(),
                        seed,
                        optimal: optimal_count(&trace.rows),
                        final_w2: left_gauss
                            .and_then(|(mu, sigma)| final_w2(&trace, variant.mdp.start_state(), mu, sigma)),
                        error: None,
                        invariant_breach: false,
                    },
                    Err(e) => RunOutcome {
                        agent: agent.name.clone(),
                        seed,
                        optimal: 0,
                        final_w2: None,
                        invariant_breach: matches!(e, Error::InvariantBreach { .. }),
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });

    let summary = summarize(cfg, &runs);
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(SUMMARY_HEADER)?;
    for s in &summary {
        w.write_record([
            s.agent.clone(),
            s.seed_count.to_string(),
            s.total_optimal.to_string(),
            s.final_w2.map(fmt_f).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    fs::write(dir.join("meta.txt"), meta_text(cfg, variant, &runs))?;

    Ok(VariantReport {
        label: variant.label.clone(),
        dir: dir.to_path_buf(),
        runs,
        summary,
    })
}

fn final_w2(trace: &RunTrace, start: usize, mu: f64, sigma: f64) -> Option<f64> {
    let snap = trace
        .snapshots
        .iter()
        .rev()
        .find(|s| s.state == start && s.action == LEFT)?;
    wasserstein2_to_gaussian(&snap.theta, mu, sigma).ok()
}

fn summarize(cfg: &ExperimentConfig, runs: &[RunOutcome]) -> Vec<AgentSummary> {
    cfg.agents
        .iter()
        .map(|a| {
            let ok: Vec<&RunOutcome> = runs.iter().filter(|r| r.agent == a.name && r.error.is_none()).collect();
            let w2: Vec<f64> = ok.iter().filter_map(|r| r.final_w2).collect();
            AgentSummary {
                agent: a.name.clone(),
                seed_count: ok.len(),
                total_optimal: ok.iter().map(|r| r.optimal).sum(),
                final_w2: (!w2.is_empty()).then(|| w2.iter().sum::<f64>() / w2.len() as f64),
            }
        })
        .collect()
}

fn write_run(dir: &Path, agent: &str, seed: u64, trace: &RunTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(format!("trace_{agent}_{seed}.csv")))?;
    w.write_record(TRACE_HEADER)?;
    for r in &trace.rows {
        w.write_record([
            r.t.to_string(),
            r.episode.to_string(),
            r.state.to_string(),
            r.action.to_string(),
            u8::from(r.is_optimal_action).to_string(),
            fmt_f(r.reward),
            u8::from(r.done).to_string(),
            r.loss.map(fmt_f).unwrap_or_default(),
            r.kind.as_str().to_string(),
            fmt_f(r.q_mean_best),
            fmt_f(r.bonus_or_gap),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(format!("snapshots_{agent}_{seed}.csv")))?;
    w.write_record(SNAPSHOT_HEADER)?;
    for s in &trace.snapshots {
        let label = s.label();
        for (i, v) in s.theta.iter().enumerate() {
            w.write_record([s.t.to_string(), label.clone(), i.to_string(), fmt_f(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_sweep_summary(path: &Path, reports: &[VariantReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["setting", "agent", "seed_count", "total_optimal", "final_w2"])?;
    for r in reports {
        for s in &r.summary {
            w.write_record([
                r.label.clone(),
                s.agent.clone(),
                s.seed_count.to_string(),
                s.total_optimal.to_string(),
                s.final_w2.map(fmt_f).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn meta_text(cfg: &ExperimentConfig, variant: &EnvVariant, runs: &[RunOutcome]) -> String {
    let mut m = String::new();
    let _ = writeln!(
        m,
        "setting = {}",
        if variant.label.is_empty() { "-" } else { &variant.label }
    );
    let _ = writeln!(m, "n_states = {}", variant.mdp.n_states());
    let _ = writeln!(m, "n_actions = {}", variant.mdp.n_actions());
    let _ = writeln!(m, "gamma = {}", variant.mdp.gamma());
    let _ = writeln!(m, "start_state = {}", variant.mdp.start_state());
    let _ = writeln!(m, "total_steps = {}", cfg.total_steps);
    let _ = writeln!(m, "eval_interval = {}", cfg.eval_interval);
    let _ = writeln!(m, "episode_cap = {}", cfg.episode_cap);
    let _ = writeln!(m, "master_seed = {}", cfg.master_seed);
    let bw = match cfg.kde_bandwidth {
        KdeBandwidth::Scott => "scott".to_string(),
        KdeBandwidth::Fixed(h) => fmt_f(h),
    };
    let _ = writeln!(m, "kde_bandwidth = {bw}");
    for &s in &cfg.seeds {
        let _ = writeln!(m, "run_seed.{s} = {}", derive_seed(cfg.master_seed, s));
    }
    for a in &cfg.agents {
        let _ = writeln!(m, "agent.{} = {:?}", a.name, a.config);
    }
    for r in runs.iter().filter(|r| r.error.is_some()) {
        let _ = writeln!(
            m,
            "failed.{}.{} = {}",
            r.agent,
            r.seed,
            r.error.as_deref().unwrap_or("")
        );
    }
    m
}

/// `key = value` lines of a meta.txt.
pub fn read_meta(dir: &Path) -> Result<Vec<(String, String)>> {
    Ok(fs::read_to_string(dir.join("meta.txt"))?
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

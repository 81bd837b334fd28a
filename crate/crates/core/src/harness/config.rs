// Flat experiment config.
//
//   key = value                top-level settings
//   [env]                      environment (inline N-Chain or an .mdp file)
//   [agent.<name>]             one agent; comma lists expand into a grid
//
// `#` starts a comment. Lists are comma separated; `right_modes` takes
// `lo/hi` pairs and turns the experiment into a sweep over them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::agents::{AgentConfig, AgentKind};
use crate::error::{Error, Result};
use crate::mdp::{load_mdp, nchain, NChainParams, RewardDist, TabularMdp};
use crate::perturbation::{DeltaSchedule, DirichletParams, ScheduleForm, XiScale};
use crate::quantile::HuberParams;

#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    /// One N-Chain per entry of `right_modes` (a single default one when empty).
    NChain {
        base: NChainParams,
        right_std: f64,
        right_modes: Vec<(f64, f64)>,
    },
    File(PathBuf),
}

/// A concrete environment of an experiment. `label` is empty unless the
/// experiment sweeps over several.
#[derive(Debug, Clone)]
pub struct EnvVariant {
    pub label: String,
    pub mdp: TabularMdp,
    pub nchain: Option<NChainParams>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KdeBandwidth {
    Scott,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedAgent {
    pub name: String,
    pub config: AgentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub agents: Vec<NamedAgent>,
    pub total_steps: u64,
    pub seeds: Vec<u64>,
    pub master_seed: u64,
    pub eval_interval: u64,
    pub episode_cap: u64,
    pub output_dir: PathBuf,
    pub kde_bandwidth: KdeBandwidth,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        parse_config(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.agents.is_empty() {
            return Err(Error::Config("at least one [agent.<name>] section is required".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if self.episode_cap == 0 {
            return Err(Error::Config("episode_cap must be positive".into()));
        }
        let mut names: Vec<&str> = self.agents.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate agent name `{}`", w[0])));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate seed".into()));
        }
        for a in &self.agents {
            a.config
                .validate()
                .map_err(|e| Error::Config(format!("agent `{}`: {e}", a.name)))?;
        }
        Ok(())
    }

    pub fn env_variants(&self) -> Result<Vec<EnvVariant>> {
        match &self.env {
            EnvSpec::File(path) => Ok(vec![EnvVariant {
                label: String::new(),
                mdp: load_mdp(path)?,
                nchain: None,
            }]),
            EnvSpec::NChain {
                base,
                right_std,
                right_modes,
            } => {
                if right_modes.is_empty() {
                    return Ok(vec![EnvVariant {
                        label: String::new(),
                        mdp: nchain(base)?,
                        nchain: Some(base.clone()),
                    }]);
                }
                right_modes
                    .iter()
                    .map(|&(lo, hi)| {
                        let params = NChainParams {
                            right: RewardDist::even_mixture(lo, hi, *right_std),
                            ..base.clone()
                        };
                        Ok(EnvVariant {
                            label: format!("right_{}_{}", fmt_num(lo), fmt_num(hi)),
                            mdp: nchain(&params)?,
                            nchain: Some(params),
                        })
                    })
                    .collect()
            }
        }
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Default)]
struct Section {
    line: usize,
    entries: Vec<(usize, String, String)>,
}

/// Parses config text that has no file of its own; relative paths resolve
/// against the working directory.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    parse_config(text, Path::new("<inline>"))
}

pub fn parse_config(text: &str, origin: &Path) -> Result<ExperimentConfig> {
    let perr = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut top = Section::default();
    let mut env: Option<Section> = None;
    let mut agents: Vec<(String, Section)> = Vec::new();
    // 0 = top, 1 = env, 2 = last agent
    let mut current = 0;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| perr(lineno, "unterminated section header".into()))?
                .trim();
            if name == "env" {
                if env.is_some() {
                    return Err(perr(lineno, "duplicate [env] section".into()));
                }
                env = Some(Section {
                    line: lineno,
                    ..Section::default()
                });
                current = 1;
            } else if let Some(agent) = name.strip_prefix("agent.") {
                if agent.is_empty() || !agent.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                    return Err(perr(lineno, format!("invalid agent name `{agent}`")));
                }
                agents.push((
                    agent.to_string(),
                    Section {
                        line: lineno,
                        ..Section::default()
                    },
                ));
                current = 2;
            } else {
                return Err(perr(lineno, format!("unknown section `[{name}]`")));
            }
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| perr(lineno, format!("expected `key = value`, got `{line}`")))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() || v.is_empty() {
            return Err(perr(lineno, "empty key or value".into()));
        }
        let section = match current {
            0 => &mut top,
            1 => env.as_mut().expect("env section open"),
            _ => &mut agents.last_mut().expect("agent section open").1,
        };
        if section.entries.iter().any(|(_, key, _)| *key == k) {
            return Err(perr(lineno, format!("duplicate key `{k}`")));
        }
        section.entries.push((lineno, k, v));
    }

    let mut cfg = ExperimentConfig {
        env: EnvSpec::NChain {
            base: NChainParams::default(),
            right_std: 0.1,
            right_modes: Vec::new(),
        },
        agents: Vec::new(),
        total_steps: 30_000,
        seeds: Vec::new(),
        master_seed: 0,
        eval_interval: 1000,
        episode_cap: 100,
        output_dir: PathBuf::from("out"),
        kde_bandwidth: KdeBandwidth::Scott,
    };
    let base_dir = origin.parent().unwrap_or(Path::new(""));

    for (line, k, v) in &top.entries {
        let e = |m: String| perr(*line, m);
        match k.as_str() {
            "total_steps" => cfg.total_steps = parse_one(v).map_err(e)?,
            "seeds" => cfg.seeds = parse_list(v).map_err(e)?,
            "master_seed" => cfg.master_seed = parse_one(v).map_err(e)?,
            "eval_interval" => cfg.eval_interval = parse_one(v).map_err(e)?,
            "episode_cap" => cfg.episode_cap = parse_one(v).map_err(e)?,
            "output_dir" => cfg.output_dir = base_dir.join(v),
            "kde_bandwidth" => {
                cfg.kde_bandwidth = if v == "scott" {
                    KdeBandwidth::Scott
                } else {
                    let b: f64 = parse_one(v).map_err(e)?;
                    if !(b > 0.0) {
                        return Err(perr(*line, "kde_bandwidth must be `scott` or a positive number".into()));
                    }
                    KdeBandwidth::Fixed(b)
                }
            }
            _ => return Err(perr(*line, format!("unknown key `{k}`"))),
        }
    }

    if let Some(sec) = &env {
        cfg.env = parse_env(sec, base_dir, &perr)?;
    }

    for (name, sec) in &agents {
        cfg.agents.extend(parse_agent(name, sec, &perr)?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_one<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse::<T>().map_err(|e| format!("bad value `{v}`: {e}"))
}

fn parse_list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(parse_one).collect()
}

fn parse_env(sec: &Section, base_dir: &Path, perr: &dyn Fn(usize, String) -> Error) -> Result<EnvSpec> {
    let mut kind = "nchain".to_string();
    let mut path = None;
    let mut base = NChainParams::default();
    let (mut left_mean, mut left_std) = (10.0, 0.1);
    let mut right_std = 0.1;
    let mut right_modes = Vec::new();
    let mut touched_nchain = false;
    for (line, k, v) in &sec.entries {
        let e = |m: String| perr(*line, m);
        match k.as_str() {
            "kind" => kind = v.clone(),
            "path" => path = Some(base_dir.join(v)),
            "left_mean" => left_mean = parse_one(v).map_err(e)?,
            "left_std" => left_std = parse_one(v).map_err(e)?,
            "right_std" => right_std = parse_one(v).map_err(e)?,
            "right_modes" => {
                for pair in v.split(',') {
                    let (lo, hi) = pair.split_once('/').ok_or_else(|| {
                        perr(
                            *line,
                            format!("right_modes entries look like `lo/hi`, got `{}`", pair.trim()),
                        )
                    })?;
                    right_modes.push((parse_one(lo).map_err(e)?, parse_one(hi).map_err(e)?));
                }
            }
            "chain_len" => base.chain_len = parse_one(v).map_err(e)?,
            "n_noop" => base.n_noop = parse_one(v).map_err(e)?,
            "gamma" => base.gamma = parse_one(v).map_err(e)?,
            _ => return Err(perr(*line, format!("unknown [env] key `{k}`"))),
        }
        touched_nchain |= k != "kind" && k != "path";
    }
    match kind.as_str() {
        "nchain" => {
            if path.is_some() {
                return Err(perr(sec.line, "`path` only applies to kind = file".into()));
            }
            if left_std < 0.0 || right_std < 0.0 {
                return Err(perr(sec.line, "reward std must be >= 0".into()));
            }
            base.left = RewardDist::gaussian(left_mean, left_std);
            base.right = RewardDist::even_mixture(5.0, 13.0, right_std);
            Ok(EnvSpec::NChain {
                base,
                right_std,
                right_modes,
            })
        }
        "file" => {
            if touched_nchain {
                return Err(perr(sec.line, "N-Chain keys do not apply to kind = file".into()));
            }
            let path = path.ok_or_else(|| perr(sec.line, "kind = file needs `path`".into()))?;
            Ok(EnvSpec::File(path))
        }
        other => Err(perr(sec.line, format!("unknown env kind `{other}`"))),
    }
}

type Assignments<'a> = Vec<(&'a str, usize, String)>;

const AGENT_KEYS: &[&str] = &[
    "kind",
    "n_quantiles",
    "kappa",
    "lr",
    "gamma",
    "eps_start",
    "eps_end",
    "eps_decay_steps",
    "c",
    "delta0",
    "delta_epsilon",
    "delta_form",
    "beta",
    "xi_scale",
    "vmax",
    "target_update_interval",
    "batch_size",
    "replay_capacity",
    "start_steps",
];

fn parse_agent(name: &str, sec: &Section, perr: &dyn Fn(usize, String) -> Error) -> Result<Vec<NamedAgent>> {
    let mut values: BTreeMap<&str, (usize, Vec<String>)> = BTreeMap::new();
    let mut order = Vec::new();
    for (line, k, v) in &sec.entries {
        let Some(&key) = AGENT_KEYS.iter().find(|&&x| x == k) else {
            return Err(perr(*line, format!("unknown agent key `{k}`")));
        };
        let items: Vec<String> = v.split(',').map(|s| s.trim().to_string()).collect();
        if items.iter().any(String::is_empty) {
            return Err(perr(*line, "empty list entry".into()));
        }
        if items.len() > 1 && key == "kind" {
            return Err(perr(*line, "`kind` cannot be a list".into()));
        }
        values.insert(key, (*line, items));
        order.push(key);
    }
    let kind: AgentKind = match values.get("kind") {
        Some((line, v)) => v[0].parse().map_err(|e: Error| perr(*line, e.to_string()))?,
        None => name
            .parse()
            .map_err(|_| perr(sec.line, format!("agent `{name}` needs `kind`")))?,
    };

    // Cartesian product over list-valued keys, in file order.
    // (name, [(key, line, value)])
    let mut combos: Vec<(String, Assignments)> = vec![(name.to_string(), Vec::new())];
    for key in order {
        let (line, items) = &values[key];
        let mut next = Vec::with_capacity(combos.len() * items.len());
        for (label, assigned) in &combos {
            for item in items {
                let mut a = assigned.clone();
                a.push((key, *line, item.clone()));
                let label = if items.len() > 1 {
                    format!("{label}_{key}{item}")
                } else {
                    label.clone()
                };
                next.push((label, a));
            }
        }
        combos = next;
    }

    combos
        .into_iter()
        .map(|(label, assigned)| {
            let mut cfg = AgentConfig::new(kind);
            let (mut delta0, mut delta_eps) = (cfg.delta.delta0(), cfg.delta.epsilon());
            let mut form = cfg.delta.form();
            let mut first_line = sec.line;
            for (key, line, v) in assigned {
                first_line = line;
                let e = |m: String| perr(line, m);
                match key {
                    "kind" => {}
                    "n_quantiles" => cfg.n_quantiles = parse_one(&v).map_err(e)?,
                    "kappa" => {
                        cfg.huber =
                            HuberParams::new(parse_one(&v).map_err(e)?).map_err(|x| perr(line, x.to_string()))?
                    }
                    "lr" => cfg.lr = parse_one(&v).map_err(e)?,
                    "gamma" => cfg.gamma = Some(parse_one(&v).map_err(e)?),
                    "eps_start" => cfg.eps.start = parse_one(&v).map_err(e)?,
                    "eps_end" => cfg.eps.end = parse_one(&v).map_err(e)?,
                    "eps_decay_steps" => cfg.eps.decay_steps = parse_one(&v).map_err(e)?,
                    "c" => cfg.c = parse_one(&v).map_err(e)?,
                    "delta0" => delta0 = parse_one(&v).map_err(e)?,
                    "delta_epsilon" => delta_eps = parse_one(&v).map_err(e)?,
                    "delta_form" => {
                        form = match v.as_str() {
                            "power_law" => ScheduleForm::PowerLaw,
                            "constant" => ScheduleForm::Constant,
                            "sqrt_log_over_t" => ScheduleForm::SqrtLogOverT,
                            other => return Err(perr(line, format!("unknown delta_form `{other}`"))),
                        }
                    }
                    "beta" => {
                        cfg.dirichlet =
                            DirichletParams::new(parse_one(&v).map_err(e)?).map_err(|x| perr(line, x.to_string()))?
                    }
                    "xi_scale" => {
                        cfg.xi_scale = match v.as_str() {
                            "raw_delta" => XiScale::RawDelta,
                            "alpha_certified" => XiScale::AlphaCertified,
                            other => return Err(perr(line, format!("unknown xi_scale `{other}`"))),
                        }
                    }
                    "vmax" => cfg.vmax = Some(parse_one(&v).map_err(e)?),
                    "target_update_interval" => cfg.target_update_interval = parse_one(&v).map_err(e)?,
                    "batch_size" => cfg.batch_size = parse_one(&v).map_err(e)?,
                    "replay_capacity" => cfg.replay_capacity = parse_one(&v).map_err(e)?,
                    "start_steps" => cfg.start_steps = parse_one(&v).map_err(e)?,
                    _ => unreachable!("key list checked above"),
                }
            }
            cfg.delta = DeltaSchedule::new(delta0, delta_eps, form).map_err(|x| perr(first_line, x.to_string()))?;
            Ok(NamedAgent {
                name: label,
                config: cfg,
            })
        })
        .collect()
}

// Line-oriented MDP file format.
//
//   mdp <n_states> <n_actions> <gamma> <rmax>
//   P <s> <a> <s'> <prob>          unlisted entries are 0
//   R <s> <a> <weight> <mean> <std> repeat for mixtures; unlisted pairs pay 0
//   terminal <s>
//   start <s>
//
// `#` starts a comment. The canonical form is the header followed by all
// other lines sorted lexicographically.

use std::fs;
use std::path::{Path, PathBuf};

use super::{GaussianComponent, RewardDist, TabularMdp};
use crate::error::{Error, Result};

pub fn load_mdp(path: impl AsRef<Path>) -> Result<TabularMdp> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_mdp(&text, path)
}

pub fn save_mdp(mdp: &TabularMdp, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serialize_mdp(mdp))?;
    Ok(())
}

pub fn parse_mdp(text: &str, origin: &Path) -> Result<TabularMdp> {
    let err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(origin),
        line,
        message,
    };

    let mut header: Option<(usize, usize, f64, f64)> = None;
    let mut transition = Vec::new();
    let mut components: Vec<Vec<GaussianComponent>> = Vec::new();
    let mut terminal = Vec::new();
    let mut start = None;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        let int = |i: usize| -> Result<usize> {
            tok.get(i)
                .ok_or_else(|| err(lineno, format!("missing field {i}")))?
                .parse::<usize>()
                .map_err(|e| err(lineno, format!("field {i}: {e}")))
        };
        let real = |i: usize| -> Result<f64> {
            let v = tok
                .get(i)
                .ok_or_else(|| err(lineno, format!("missing field {i}")))?
                .parse::<f64>()
                .map_err(|e| err(lineno, format!("field {i}: {e}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(lineno, format!("field {i} is not finite")))
            }
        };
        let arity = |n: usize| -> Result<()> {
            if tok.len() == n {
                Ok(())
            } else {
                Err(err(
                    lineno,
                    format!("`{}` expects {} fields, got {}", tok[0], n - 1, tok.len() - 1),
                ))
            }
        };

        if tok[0] == "mdp" {
            arity(5)?;
            if header.is_some() {
                return Err(err(lineno, "duplicate header".into()));
            }
            let (ns, na) = (int(1)?, int(2)?);
            if ns == 0 || na == 0 {
                return Err(err(lineno, "need at least one state and one action".into()));
            }
            header = Some((ns, na, real(3)?, real(4)?));
            transition = vec![0.0; ns * na * ns];
            components = vec![Vec::new(); ns * na];
            terminal = vec![false; ns];
            continue;
        }
        let Some((ns, na, _, _)) = header else {
            return Err(err(lineno, "expected `mdp` header before other lines".into()));
        };
        let state = |i: usize| -> Result<usize> {
            let s = int(i)?;
            if s < ns {
                Ok(s)
            } else {
                Err(err(lineno, format!("state {s} out of range (n_states = {ns})")))
            }
        };
        let action = |i: usize| -> Result<usize> {
            let a = int(i)?;
            if a < na {
                Ok(a)
            } else {
                Err(err(lineno, format!("action {a} out of range (n_actions = {na})")))
            }
        };
        match tok[0] {
            "P" => {
                arity(5)?;
                let (s, a, next) = (state(1)?, action(2)?, state(3)?);
                let p = real(4)?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(err(lineno, format!("probability row ({s}, {a}): {p} not in [0, 1]")));
                }
                transition[(s * na + a) * ns + next] += p;
            }
            "R" => {
                arity(6)?;
                let (s, a) = (state(1)?, action(2)?);
                let (weight, mean, std) = (real(3)?, real(4)?, real(5)?);
                if weight < 0.0 || std < 0.0 {
                    return Err(err(lineno, "reward weight and std must be >= 0".into()));
                }
                components[s * na + a].push(GaussianComponent { weight, mean, std });
            }
            "terminal" => {
                arity(2)?;
                terminal[state(1)?] = true;
            }
            "start" => {
                arity(2)?;
                start = Some(state(1)?);
            }
            other => return Err(err(lineno, format!("unknown directive `{other}`"))),
        }
    }

    let Some((ns, na, gamma, rmax)) = header else {
        return Err(err(0, "missing `mdp` header".into()));
    };
    let start = start.ok_or_else(|| err(0, "missing `start` line".into()))?;
    let reward = components
        .into_iter()
        .enumerate()
        .map(|(k, comps)| {
            if comps.is_empty() {
                Ok(RewardDist::deterministic(0.0))
            } else {
                RewardDist::new(comps).map_err(|e| err(0, format!("reward ({}, {}): {e}", k / na, k % na)))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    TabularMdp::new(ns, na, transition, reward, gamma, terminal, start, rmax)
}

pub fn serialize_mdp(mdp: &TabularMdp) -> String {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut lines = Vec::new();
    for s in 0..ns {
        for a in 0..na {
            for (next, &p) in mdp.transition_row(s, a).iter().enumerate() {
                if p != 0.0 {
                    lines.push(format!("P {s} {a} {next} {p}"));
                }
            }
            let r = mdp.reward(s, a);
            if !r.is_zero() {
                for c in r.components() {
                    lines.push(format!("R {s} {a} {} {} {}", c.weight, c.mean, c.std));
                }
            }
        }
        if mdp.is_terminal(s) {
            lines.push(format!("terminal {s}"));
        }
    }
    lines.push(format!("start {}", mdp.start_state()));
    lines.sort();
    let mut out = format!("mdp {ns} {na} {} {}\n", mdp.gamma(), mdp.rmax());
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    out
}

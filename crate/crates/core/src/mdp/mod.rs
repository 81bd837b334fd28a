//! Finite MDPs with Gaussian-mixture rewards and the stochastic N-Chain.

mod format;

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::stats::std_normal_cdf;

pub use format::{load_mdp, parse_mdp, save_mdp, serialize_mdp};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// A finite mixture of Gaussians. A deterministic reward is one component
/// with zero std.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardDist {
    components: Vec<GaussianComponent>,
}

impl RewardDist {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("reward distribution has no components"));
        }
        for c in &components {
            if !(c.weight >= 0.0) || !c.mean.is_finite() || !(c.std >= 0.0) || !c.std.is_finite() {
                return Err(Error::invalid(format!("bad reward component {c:?}")));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("reward weights sum to {total}")));
        }
        Ok(Self { components })
    }

    pub fn deterministic(value: f64) -> Self {
        Self::gaussian(value, 0.0)
    }

    pub fn gaussian(mean: f64, std: f64) -> Self {
        Self {
            components: vec![GaussianComponent { weight: 1.0, mean, std }],
        }
    }

    /// ½N(lo, std²) + ½N(hi, std²)
    pub fn even_mixture(lo: f64, hi: f64, std: f64) -> Self {
        Self {
            components: vec![
                GaussianComponent {
                    weight: 0.5,
                    mean: lo,
                    std,
                },
                GaussianComponent {
                    weight: 0.5,
                    mean: hi,
                    std,
                },
            ],
        }
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn is_zero(&self) -> bool {
        self.components
            .iter()
            .all(|c| c.weight == 0.0 || (c.mean == 0.0 && c.std == 0.0))
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.components
            .iter()
            .map(|c| c.weight * (c.std * c.std + (c.mean - m).powi(2)))
            .sum()
    }

    /// Scales every component by `k ≥ 0` (the law of k·R).
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            components: self
                .components
                .iter()
                .map(|c| GaussianComponent {
                    weight: c.weight,
                    mean: k * c.mean,
                    std: k * c.std,
                })
                .collect(),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let p = if c.std > 0.0 {
                    std_normal_cdf((x - c.mean) / c.std)
                } else if x >= c.mean {
                    1.0
                } else {
                    0.0
                };
                c.weight * p
            })
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let c = if self.components.len() == 1 {
            &self.components[0]
        } else {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = self.components.last().unwrap();
            for c in &self.components {
                acc += c.weight;
                if u < acc {
                    pick = c;
                    break;
                }
            }
            pick
        };
        if c.std == 0.0 {
            c.mean
        } else {
            let z: f64 = rng.sample(StandardNormal);
            c.mean + c.std * z
        }
    }

    pub(crate) fn max_abs_mean(&self) -> f64 {
        self.components.iter().map(|c| c.mean.abs()).fold(0.0, f64::max)
    }
}

/// Finite MDP with stochastic rewards attached to (state, action) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<RewardDist>,
    gamma: f64,
    terminal: Vec<bool>,
    start_state: usize,
    rmax: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub done: bool,
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RowSum {
        state: usize,
        action: usize,
        sum: f64,
    },
    NegativeProbability {
        state: usize,
        action: usize,
        next: usize,
        p: f64,
    },
    RewardWeights {
        state: usize,
        action: usize,
    },
    RewardOutOfRange {
        state: usize,
        action: usize,
        mean: f64,
        rmax: f64,
    },
    TerminalNotAbsorbing {
        state: usize,
        action: usize,
    },
    TerminalReward {
        state: usize,
        action: usize,
    },
    Gamma(f64),
    Rmax(f64),
    StartOutOfRange(usize),
    Shape(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowSum { state, action, sum } => {
                write!(f, "P row ({state}, {action}) sums to {sum}, expected 1")
            }
            Violation::NegativeProbability { state, action, next, p } => {
                write!(f, "P({next} | {state}, {action}) = {p} is negative")
            }
            Violation::RewardWeights { state, action } => {
                write!(f, "reward weights at ({state}, {action}) do not sum to 1")
            }
            Violation::RewardOutOfRange {
                state,
                action,
                mean,
                rmax,
            } => {
                write!(f, "reward mean {mean} at ({state}, {action}) outside [-{rmax}, {rmax}]")
            }
            Violation::TerminalNotAbsorbing { state, action } => {
                write!(f, "terminal state {state} does not self-loop under action {action}")
            }
            Violation::TerminalReward { state, action } => {
                write!(f, "terminal state {state} has nonzero reward under action {action}")
            }
            Violation::Gamma(g) => write!(f, "gamma {g} not in [0, 1)"),
            Violation::Rmax(r) => write!(f, "rmax {r} must be positive"),
            Violation::StartOutOfRange(s) => write!(f, "start state {s} out of range"),
            Violation::Shape(m) => write!(f, "{m}"),
        }
    }
}

impl TabularMdp {
    /// Builds and validates an MDP. `transition` is laid out `[s][a][s']` and
    /// `reward` `[s][a]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<RewardDist>,
        gamma: f64,
        terminal: Vec<bool>,
        start_state: usize,
        rmax: f64,
    ) -> Result<Self> {
        let mdp = Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            terminal,
            start_state,
            rmax,
        };
        let v = mdp.validate();
        if v.is_empty() {
            Ok(mdp)
        } else {
            Err(Error::Validation(v))
        }
    }

    /// Constructs without validation; pair with [`TabularMdp::validate`].
    #[allow(clippy::too_many_arguments)]
    pub fn new_unchecked(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<RewardDist>,
        gamma: f64,
        terminal: Vec<bool>,
        start_state: usize,
        rmax: f64,
    ) -> Self {
        Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            terminal,
            start_state,
            rmax,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rmax(&self) -> f64 {
        self.rmax
    }

    /// V_max = R_max/(1−γ)
    pub fn vmax(&self) -> f64 {
        self.rmax / (1.0 - self.gamma)
    }

    pub fn start_state(&self) -> usize {
        self.start_state
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminals(&self) -> &[bool] {
        &self.terminal
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let o = (s * self.n_actions + a) * self.n_states;
        &self.transition[o..o + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> &RewardDist {
        &self.reward[s * self.n_actions + a]
    }

    /// Checks every invariant and reports all violations.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            out.push(Violation::Shape("MDP needs at least one state and action".into()));
            return out;
        }
        if self.transition.len() != ns * na * ns {
            out.push(Violation::Shape(format!(
                "transition tensor has {} entries, expected {}",
                self.transition.len(),
                ns * na * ns
            )));
            return out;
        }
        if self.reward.len() != ns * na || self.terminal.len() != ns {
            out.push(Violation::Shape(
                "reward table or terminal mask has the wrong size".into(),
            ));
            return out;
        }
        if !(0.0..1.0).contains(&self.gamma) {
            out.push(Violation::Gamma(self.gamma));
        }
        if !(self.rmax > 0.0) || !self.rmax.is_finite() {
            out.push(Violation::Rmax(self.rmax));
        }
        if self.start_state >= ns {
            out.push(Violation::StartOutOfRange(self.start_state));
        }
        for s in 0..ns {
            for a in 0..na {
                let row = self.transition_row(s, a);
                for (next, &p) in row.iter().enumerate() {
                    if p < 0.0 || !p.is_finite() {
                        out.push(Violation::NegativeProbability {
                            state: s,
                            action: a,
                            next,
                            p,
                        });
                    }
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    out.push(Violation::RowSum {
                        state: s,
                        action: a,
                        sum,
                    });
                }
                let r = self.reward(s, a);
                let w: f64 = r.components.iter().map(|c| c.weight).sum();
                if (w - 1.0).abs() > 1e-12 || r.components.iter().any(|c| c.weight < 0.0 || c.std < 0.0) {
                    out.push(Violation::RewardWeights { state: s, action: a });
                }
                for c in &r.components {
                    if c.mean.abs() > self.rmax {
                        out.push(Violation::RewardOutOfRange {
                            state: s,
                            action: a,
                            mean: c.mean,
                            rmax: self.rmax,
                        });
                    }
                }
                if self.terminal[s] {
                    if (row[s] - 1.0).abs() > 1e-9 {
                        out.push(Violation::TerminalNotAbsorbing { state: s, action: a });
                    }
                    if !r.is_zero() {
                        out.push(Violation::TerminalReward { state: s, action: a });
                    }
                }
            }
        }
        out
    }

    pub fn reset(&self) -> usize {
        self.start_state
    }

    /// Samples one transition from a non-terminal state.
    pub fn step<R: Rng + ?Sized>(&self, state: usize, action: usize, t: u64, rng: &mut R) -> Result<Transition> {
        if state >= self.n_states || action >= self.n_actions {
            return Err(Error::invalid(format!("({state}, {action}) out of range")));
        }
        if self.terminal[state] {
            return Err(Error::TerminalStep(state));
        }
        let row = self.transition_row(state, action);
        let next_state = sample_index(row, rng);
        let reward = self.reward(state, action).sample(rng);
        Ok(Transition {
            state,
            action,
            reward,
            next_state,
            done: self.terminal[next_state],
            t,
        })
    }
}

fn sample_index<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    // Deterministic rows do not consume randomness.
    if let Some(i) = row.iter().position(|&p| p == 1.0) {
        return i;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NChainParams {
    pub left: RewardDist,
    pub right: RewardDist,
    pub chain_len: usize,
    pub n_noop: usize,
    pub gamma: f64,
}

impl Default for NChainParams {
    fn default() -> Self {
        Self {
            left: RewardDist::gaussian(10.0, 0.1),
            right: RewardDist::even_mixture(5.0, 13.0, 0.1),
            chain_len: 5,
            n_noop: 4,
            gamma: 0.9,
        }
    }
}

impl NChainParams {
    /// Right-hand mixture ½N(lo, 0.1²) + ½N(hi, 0.1²), everything else default.
    pub fn with_right_modes(lo: f64, hi: f64) -> Self {
        Self {
            right: RewardDist::even_mixture(lo, hi, 0.1),
            ..Self::default()
        }
    }
}

/// Stochastic N-Chain.
///
/// States `0..chain_len` form the chain; `0` and `chain_len − 1` are reward
/// states and `chain_len` is an absorbing terminal. Action 0 moves left,
/// action 1 moves right and the remaining `n_noop` actions stay put. Any
/// action taken in a reward state pays that state's reward and ends the
/// episode, so the two-step left path from the middle returns γ²·R_left.
pub fn nchain(params: &NChainParams) -> Result<TabularMdp> {
    let len = params.chain_len;
    if len < 3 || len.is_multiple_of(2) {
        return Err(Error::invalid(format!("chain_len must be odd and >= 3, got {len}")));
    }
    let n_states = len + 1;
    let n_actions = 2 + params.n_noop;
    let end = len;
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut reward = vec![RewardDist::deterministic(0.0); n_states * n_actions];
    let mut set = |s: usize, a: usize, next: usize| {
        transition[(s * n_actions + a) * n_states + next] = 1.0;
    };
    for s in 0..n_states {
        for a in 0..n_actions {
            let next = if s == end || s == 0 || s == len - 1 {
                end
            } else {
                match a {
                    LEFT => s - 1,
                    RIGHT => s + 1,
                    _ => s,
                }
            };
            set(s, a, next);
        }
    }
    for a in 0..n_actions {
        reward[a] = params.left.clone();
        reward[(len - 1) * n_actions + a] = params.right.clone();
    }
    let mut terminal = vec![false; n_states];
    terminal[end] = true;
    let rmax = params.left.max_abs_mean().max(params.right.max_abs_mean()).max(1.0);
    TabularMdp::new(
        n_states,
        n_actions,
        transition,
        reward,
        params.gamma,
        terminal,
        len / 2,
        rmax,
    )
}

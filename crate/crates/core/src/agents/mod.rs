//! Tabular quantile agents: ε-greedy QR, DLTV, p-DLTV and PQR.
//!
//! All four share the quantile TD update; they differ only in how the
//! behaviour action is picked.

mod policy;
mod replay;
mod train;
mod update;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::perturbation::{DeltaSchedule, DirichletParams, XiScale};
use crate::quantile::HuberParams;

pub use policy::{act_dltv, act_eps_greedy, act_pdltv, act_pqr, dltv_coefficient, greedy_mean};
pub use replay::ReplayBuffer;
pub use train::{optimal_action_flags, train_run, RunOptions, RunTrace, Snapshot, TraceRow};
pub use update::{qr_update_step, td_target, QrLearner};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentKind {
    QrEpsGreedy,
    Dltv,
    PDltv,
    Pqr,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [
        AgentKind::QrEpsGreedy,
        AgentKind::Dltv,
        AgentKind::PDltv,
        AgentKind::Pqr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::QrEpsGreedy => "qr_eps_greedy",
            AgentKind::Dltv => "dltv",
            AgentKind::PDltv => "p_dltv",
            AgentKind::Pqr => "pqr",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown agent kind `{s}`")))
    }
}

/// Linear annealing from `start` to `end` over `decay_steps`, then flat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl Default for EpsSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.01,
            decay_steps: 2500,
        }
    }
}

impl EpsSchedule {
    pub fn at(&self, t: u64) -> f64 {
        if self.decay_steps == 0 || t >= self.decay_steps {
            return self.end;
        }
        self.start + (self.end - self.start) * t as f64 / self.decay_steps as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub n_quantiles: usize,
    pub huber: HuberParams,
    pub lr: f64,
    /// Discount used in the TD target; the environment's when `None`.
    pub gamma: Option<f64>,
    pub eps: EpsSchedule,
    /// DLTV / p-DLTV coefficient c.
    pub c: f64,
    pub delta: DeltaSchedule,
    pub dirichlet: DirichletParams,
    pub xi_scale: XiScale,
    /// Only used for `XiScale::AlphaCertified`; the environment's when `None`.
    pub vmax: Option<f64>,
    pub target_update_interval: u64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub start_steps: u64,
}

impl AgentConfig {
    pub fn new(kind: AgentKind) -> Self {
        Self {
            kind,
            n_quantiles: 200,
            huber: HuberParams::default(),
            lr: 0.05,
            gamma: None,
            eps: EpsSchedule::default(),
            c: 50.0,
            delta: DeltaSchedule::power_law(500.0, 0.001).expect("valid schedule"),
            dirichlet: DirichletParams::default(),
            xi_scale: XiScale::RawDelta,
            vmax: None,
            target_update_interval: 25,
            batch_size: 64,
            replay_capacity: 1_000_000,
            start_steps: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_quantiles < 2 {
            return bad(format!("n_quantiles must be >= 2, got {}", self.n_quantiles));
        }
        if matches!(self.kind, AgentKind::Dltv | AgentKind::PDltv) && !self.n_quantiles.is_multiple_of(2) {
            return bad(format!(
                "{} needs an even n_quantiles, got {}",
                self.kind, self.n_quantiles
            ));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if let Some(g) = self.gamma {
            if !(0.0..1.0).contains(&g) {
                return bad(format!("gamma must be in [0, 1), got {g}"));
            }
        }
        if !(0.0..=1.0).contains(&self.eps.start) || !(0.0..=1.0).contains(&self.eps.end) {
            return bad("eps endpoints must lie in [0, 1]".into());
        }
        if !(self.c > 0.0) {
            return bad(format!("c must be positive, got {}", self.c));
        }
        if let Some(v) = self.vmax {
            if !(v > 0.0) {
                return bad(format!("vmax must be positive, got {v}"));
            }
        }
        if self.target_update_interval == 0 || self.batch_size == 0 || self.replay_capacity == 0 {
            return bad("target_update_interval, batch_size and replay_capacity must be positive".into());
        }
        Ok(())
    }
}

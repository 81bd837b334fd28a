use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::policy::{act_dltv, act_eps_greedy, act_pdltv, act_pqr, greedy_mean};
use super::replay::ReplayBuffer;
use super::update::QrLearner;
use super::{AgentConfig, AgentKind};
use crate::dp::q_value_iteration;
use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, Transition};
use crate::perturbation::perturbation_gap;
use crate::table::QuantileTable;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub total_steps: u64,
    /// Episodes are cut (without a terminal bootstrap) after this many steps.
    pub episode_cap: u64,
    /// Snapshot period in steps; 0 disables snapshots.
    pub eval_interval: u64,
    /// (state, action) pairs whose quantiles are snapshotted.
    pub snapshot_pairs: Vec<(usize, usize)>,
    /// Action index whose Q*-value defines "optimal" at every state.
    pub reference_action: usize,
}

impl RunOptions {
    /// Snapshots θ(start, left) and θ(start, right).
    pub fn for_env(env: &TabularMdp, total_steps: u64) -> Self {
        let s = env.start_state();
        Self {
            total_steps,
            episode_cap: 100,
            eval_interval: 1000,
            snapshot_pairs: (0..env.n_actions().min(2)).map(|a| (s, a)).collect(),
            reference_action: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    pub episode: u64,
    pub state: usize,
    pub action: usize,
    pub is_optimal_action: bool,
    pub reward: f64,
    pub done: bool,
    /// Mean batch loss; `None` before learning starts.
    pub loss: Option<f64>,
    pub kind: AgentKind,
    pub q_mean_best: f64,
    /// DLTV: bonus of the chosen action; p-DLTV: the drawn c_t; PQR: the
    /// perturbation gap of the chosen action; ε-greedy: ε.
    pub bonus_or_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: u64,
    pub state: usize,
    pub action: usize,
    pub theta: Vec<f64>,
}

impl Snapshot {
    pub fn label(&self) -> String {
        format!("s{}_a{}", self.state, self.action)
    }
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub snapshots: Vec<Snapshot>,
    pub final_table: Option<QuantileTable>,
}

impl RunTrace {
    pub fn optimal_count(&self) -> u64 {
        self.rows.iter().filter(|r| r.is_optimal_action).count() as u64
    }
}

/// flags[s·|A| + a] is true when Q*(s, a) equals Q*(s, reference) up to
/// rounding; equivalent actions count as optimal.
pub fn optimal_action_flags(env: &TabularMdp, reference: usize) -> Result<Vec<bool>> {
    if reference >= env.n_actions() {
        return Err(Error::invalid(format!("reference action {reference} out of range")));
    }
    let q = q_value_iteration(env, 1e-12 * env.vmax().max(1.0))?;
    let tol = 1e-9 * env.vmax().max(1.0);
    Ok((0..env.n_states())
        .flat_map(|s| (0..env.n_actions()).map(move |a| (s, a)))
        .map(|(s, a)| (q.get(s, a) - q.get(s, reference)).abs() <= tol)
        .collect())
}

/// Trains one agent on `env` for `opts.total_steps` steps from the given seed.
pub fn train_run(env: &TabularMdp, config: &AgentConfig, opts: &RunOptions, seed: u64) -> Result<RunTrace> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ns, na, n) = (env.n_states(), env.n_actions(), config.n_quantiles);
    let gamma = config.gamma.unwrap_or(env.gamma());
    let vmax = config.vmax.unwrap_or(env.vmax());
    let optimal = optimal_action_flags(env, opts.reference_action)?;

    let mut online = QuantileTable::zeros(ns, na, n)?;
    let mut target = online.clone();
    let mut replay = ReplayBuffer::new(config.replay_capacity);
    let mut learner = QrLearner::new();
    let mut batch = Vec::with_capacity(config.batch_size);
    let mut rows = Vec::with_capacity(opts.total_steps as usize);
    let mut snapshots = Vec::new();

    let mut episode = 1;
    let mut ep_len = 0;
    let mut state = env.reset();
    for t in 1..=opts.total_steps {
        let (action, bonus_or_gap) = if t <= config.start_steps {
            (rng.random_range(0..na), 0.0)
        } else {
            match config.kind {
                AgentKind::QrEpsGreedy => {
                    let eps = config.eps.at(t);
                    (act_eps_greedy(&online, state, eps, &mut rng)?, eps)
                }
                AgentKind::Dltv => act_dltv(&online, state, config.c, t)?,
                AgentKind::PDltv => act_pdltv(&online, state, config.c, t, &mut rng)?,
                AgentKind::Pqr => {
                    let delta = config.delta.at(t)?;
                    let (a, xi) = act_pqr(&online, state, delta, config.dirichlet, config.xi_scale, vmax, &mut rng)?;
                    (a, perturbation_gap(online.row(state, a), &xi)?)
                }
            }
        };
        let q_mean_best = online.means(state).into_iter().fold(f64::NEG_INFINITY, f64::max);

        let tr: Transition = env.step(state, action, t, &mut rng)?;
        replay.push(tr);

        let loss = if t >= config.start_steps {
            batch.clear();
            replay.sample_into(config.batch_size, &mut rng, &mut batch);
            Some(learner.update(
                &mut online,
                &target,
                &batch,
                greedy_mean,
                config.lr,
                config.huber,
                gamma,
            )?)
        } else {
            None
        };
        if t % config.target_update_interval == 0 {
            target.copy_from(&online);
            learner.invalidate();
        }
        if !online.is_finite() {
            return Err(Error::InvariantBreach {
                n: t as usize,
                state: tr.state,
                action: tr.action,
                message: "non-finite quantile after update".into(),
            });
        }

        rows.push(TraceRow {
            t,
            episode,
            state,
            action,
            is_optimal_action: optimal[state * na + action],
            reward: tr.reward,
            done: tr.done,
            loss,
            kind: config.kind,
            q_mean_best,
            bonus_or_gap,
        });

        if opts.eval_interval > 0 && (t % opts.eval_interval == 0 || t == opts.total_steps) {
            for &(s, a) in &opts.snapshot_pairs {
                snapshots.push(Snapshot {
                    t,
                    state: s,
                    action: a,
                    theta: online.row(s, a).to_vec(),
                });
            }
        }

        ep_len += 1;
        if tr.done || ep_len >= opts.episode_cap {
            episode += 1;
            ep_len = 0;
            state = env.reset();
        } else {
            state = tr.next_state;
        }
    }
    Ok(RunTrace {
        rows,
        snapshots,
        final_table: Some(online),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{nchain, NChainParams, LEFT, RIGHT};

    #[test]
    fn optimal_flags_on_the_chain() {
        let env = nchain(&NChainParams::default()).unwrap();
        let f = optimal_action_flags(&env, 0).unwrap();
        let na = env.n_actions();
        assert!(f[2 * na + LEFT] && !f[2 * na + RIGHT] && !f[2 * na + 2]);
        assert!(f[na + LEFT] && !f[na + RIGHT]);
        // right is Q*-better at s3, but only the left index counts
        assert!(f[3 * na + LEFT] && !f[3 * na + RIGHT]);
        assert!((0..na).all(|a| f[a] && f[4 * na + a]));
    }

    #[test]
    fn zero_steps_gives_empty_trace() {
        let env = nchain(&NChainParams::default()).unwrap();
        let cfg = AgentConfig::new(AgentKind::Pqr);
        let r = train_run(&env, &cfg, &RunOptions::for_env(&env, 0), 1).unwrap();
        assert!(r.rows.is_empty() && r.snapshots.is_empty());
    }

    #[test]
    fn runs_are_reproducible() {
        let env = nchain(&NChainParams::default()).unwrap();
        let mut opts = RunOptions::for_env(&env, 1500);
        opts.eval_interval = 500;
        for kind in AgentKind::ALL {
            let mut cfg = AgentConfig::new(kind);
            cfg.n_quantiles = 20;
            cfg.batch_size = 8;
            let a = train_run(&env, &cfg, &opts, 42).unwrap();
            let b = train_run(&env, &cfg, &opts, 42).unwrap();
            assert_eq!(a.rows, b.rows);
            assert_eq!(a.snapshots, b.snapshots);
            assert_eq!(a.rows.len(), 1500);
            assert!(a.rows.windows(2).all(|w| w[1].t == w[0].t + 1));
            assert_eq!(a.snapshots.len(), 3 * 2);
            assert!(a.rows.iter().take(499).all(|r| r.loss.is_none()));
            assert!(a.rows[499].loss.is_some());
        }
    }

    #[test]
    fn episodes_end_at_the_cap() {
        let env = nchain(&NChainParams::default()).unwrap();
        let mut cfg = AgentConfig::new(AgentKind::QrEpsGreedy);
        cfg.n_quantiles = 4;
        cfg.start_steps = 1000;
        let mut opts = RunOptions::for_env(&env, 400);
        opts.episode_cap = 3;
        let r = train_run(&env, &cfg, &opts, 5).unwrap();
        let mut len = 0;
        let mut ep = 1;
        for row in &r.rows {
            if row.episode != ep {
                assert!(len <= 3);
                ep = row.episode;
                len = 0;
            }
            len += 1;
        }
    }
}

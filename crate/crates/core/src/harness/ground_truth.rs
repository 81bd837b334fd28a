use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{NChainParams, RewardDist, TabularMdp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainPath {
    Left,
    Right,
}

impl ChainPath {
    pub fn as_str(self) -> &'static str {
        match self {
            ChainPath::Left => "left",
            ChainPath::Right => "right",
        }
    }
}

/// Return law of walking straight to one end of the default-length chain
/// from its middle: the end reward scaled by γ².
pub fn ground_truth_nchain(params: &NChainParams, path: ChainPath) -> Result<RewardDist> {
    if params.chain_len != 5 {
        return Err(Error::invalid(format!(
            "closed-form ground truth needs chain_len = 5, got {}",
            params.chain_len
        )));
    }
    let g2 = params.gamma * params.gamma;
    Ok(match path {
        ChainPath::Left => params.left.scaled(g2),
        ChainPath::Right => params.right.scaled(g2),
    })
}

/// Deterministic policy; states without an entry take action 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    actions: Vec<usize>,
}

impl Policy {
    pub fn constant(n_states: usize, action: usize) -> Self {
        Self {
            actions: vec![action; n_states],
        }
    }

    /// One `<state> <action>` pair per line; `#` comments.
    pub fn parse(text: &str, mdp: &TabularMdp) -> Result<Self> {
        let mut actions = vec![0; mdp.n_states()];
        let mut seen = vec![false; mdp.n_states()];
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: String| Error::Config(format!("policy line {}: {m}", i + 1));
            let mut it = line.split_whitespace();
            let (Some(s), Some(a), None) = (it.next(), it.next(), it.next()) else {
                return Err(bad(format!("expected `<state> <action>`, got `{line}`")));
            };
            let s: usize = s.parse().map_err(|e| bad(format!("state: {e}")))?;
            let a: usize = a.parse().map_err(|e| bad(format!("action: {e}")))?;
            if s >= mdp.n_states() || a >= mdp.n_actions() {
                return Err(bad(format!("({s}, {a}) out of range")));
            }
            if std::mem::replace(&mut seen[s], true) {
                return Err(bad(format!("state {s} listed twice")));
            }
            actions[s] = a;
        }
        Ok(Self { actions })
    }

    pub fn action(&self, s: usize) -> usize {
        self.actions[s]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollouts {
    pub returns: Vec<f64>,
    /// Rollouts cut at `max_steps` before reaching a terminal state.
    pub truncated: usize,
}

impl Rollouts {
    pub fn mean(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len() as f64
    }

    /// Sample standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let n = self.returns.len() as f64;
        (self.returns.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    }
}

/// Discounted returns Σ γ^k r_k of `policy` from the start state.
pub fn monte_carlo_returns<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &Policy,
    rollouts: usize,
    max_steps: u64,
    rng: &mut R,
) -> Result<Rollouts> {
    if rollouts < 2 {
        return Err(Error::invalid("need at least 2 rollouts"));
    }
    let mut returns = Vec::with_capacity(rollouts);
    let mut truncated = 0;
    for _ in 0..rollouts {
        let mut s = mdp.reset();
        let mut g = 0.0;
        let mut disc = 1.0;
        let mut done = mdp.is_terminal(s);
        let mut t = 0;
        while !done && t < max_steps {
            t += 1;
            let tr = mdp.step(s, policy.action(s), t, rng)?;
            g += disc * tr.reward;
            disc *= mdp.gamma();
            done = tr.done;
            s = tr.next_state;
        }
        truncated += usize::from(!done);
        returns.push(g);
    }
    Ok(Rollouts { returns, truncated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{nchain, LEFT};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_forms() {
        let p = NChainParams::default();
        let l = ground_truth_nchain(&p, ChainPath::Left).unwrap();
        assert_eq!(l.components().len(), 1);
        assert!((l.mean() - 8.1).abs() < 1e-12);
        assert!((l.components()[0].std - 0.081).abs() < 1e-15);
        let r = ground_truth_nchain(&p, ChainPath::Right).unwrap();
        assert!((r.mean() - 7.29).abs() < 1e-12);
        let c = r.components();
        assert!((c[0].mean - 4.05).abs() < 1e-12 && (c[1].mean - 10.53).abs() < 1e-12);
        assert!(c.iter().all(|c| c.weight == 0.5 && (c.std - 0.081).abs() < 1e-15));
        let long = NChainParams {
            chain_len: 7,
            ..NChainParams::default()
        };
        assert!(ground_truth_nchain(&long, ChainPath::Left).is_err());
    }

    #[test]
    fn rollouts_match_the_closed_form() {
        let p = NChainParams::default();
        let mdp = nchain(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let r = monte_carlo_returns(&mdp, &Policy::constant(mdp.n_states(), LEFT), 20_000, 100, &mut rng).unwrap();
        assert_eq!(r.truncated, 0);
        let n = r.returns.len() as f64;
        let se = r.std() / n.sqrt();
        assert!((r.mean() - 8.1).abs() < 4.0 * se);
        // SE of the sample std for Gaussian data ≈ σ/sqrt(2n)
        assert!((r.std() - 0.081).abs() < 4.0 * 0.081 / (2.0 * n).sqrt());
    }

    #[test]
    fn policy_files() {
        let mdp = nchain(&NChainParams::default()).unwrap();
        let p = Policy::parse("# left from the middle\n2 0\n1 0\n3 1 # right\n", &mdp).unwrap();
        assert_eq!((p.action(2), p.action(3), p.action(4)), (0, 1, 0));
        assert!(Policy::parse("2\n", &mdp).is_err());
        assert!(Policy::parse("2 9\n", &mdp).is_err());
        assert!(Policy::parse("2 0\n2 1\n", &mdp).is_err());
        // noop forever never terminates
        let stay = Policy::parse("2 2\n", &mdp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = monte_carlo_returns(&mdp, &stay, 3, 50, &mut rng).unwrap();
        assert_eq!(r.truncated, 3);
        assert!(r.returns.iter().all(|&g| g == 0.0));
    }
}

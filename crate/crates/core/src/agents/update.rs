use std::collections::hash_map::Entry;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::mdp::Transition;
use crate::quantile::{HuberParams, PreparedTargets};
use crate::table::QuantileTable;

/// [r + γ·θ_j(s', a*)]_j, or [r]·N when the transition ended the episode.
pub fn td_target(target: &QuantileTable, r: f64, s_next: usize, a_star: usize, gamma: f64, done: bool) -> Vec<f64> {
    if done {
        vec![r; target.n_quantiles()]
    } else {
        target.row(s_next, a_star).iter().map(|t| r + gamma * t).collect()
    }
}

// Distinct non-terminal rewards kept before the cache is flushed.
const CACHE_LIMIT: usize = 512;

/// Sequential quantile-regression SGD with per-target preprocessing reused
/// until [`QrLearner::invalidate`] (call it whenever the target table
/// changes).
#[derive(Debug, Default)]
pub struct QrLearner {
    cache: HashMap<(usize, u64), PreparedTargets>,
    terminal: PreparedTargets,
    targets: Vec<f64>,
    grad: Vec<f64>,
}

impl QrLearner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn invalidate(&mut self) {
        self.cache.clear();
    }

    /// One pass over `batch`, each transition applying
    /// θ(s,a) ← θ(s,a) − lr·∇loss before the next is processed. `selector`
    /// picks a* at the next state from the target table. Returns the mean
    /// pre-update loss.
    #[allow(clippy::too_many_arguments)]
    pub fn update<F>(
        &mut self,
        table: &mut QuantileTable,
        target: &QuantileTable,
        batch: &[Transition],
        mut selector: F,
        lr: f64,
        huber: HuberParams,
        gamma: f64,
    ) -> Result<f64>
    where
        F: FnMut(&QuantileTable, usize) -> usize,
    {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let n = table.n_quantiles();
        self.grad.resize(n, 0.0);
        if self.cache.len() > CACHE_LIMIT {
            self.cache.clear();
        }
        let mut total = 0.0;
        for tr in batch {
            let prepared = if tr.done {
                self.targets.clear();
                self.targets.resize(n, tr.reward);
                self.terminal.reset(&self.targets)?;
                &self.terminal
            } else {
                let key = (tr.next_state, tr.reward.to_bits());
                if let Entry::Vacant(slot) = self.cache.entry(key) {
                    let a_star = selector(target, tr.next_state);
                    let t = td_target(target, tr.reward, tr.next_state, a_star, gamma, false);
                    slot.insert(PreparedTargets::new(&t)?);
                }
                &self.cache[&key]
            };
            let row = table.row_mut(tr.state, tr.action);
            total += prepared.loss_and_grad(row, huber, &mut self.grad)?;
            for (th, g) in row.iter_mut().zip(&self.grad) {
                *th -= lr * g;
            }
        }
        Ok(total / batch.len() as f64)
    }
}

/// One update pass over `batch` without cross-call caching.
pub fn qr_update_step<F>(
    table: &mut QuantileTable,
    target: &QuantileTable,
    batch: &[Transition],
    selector: F,
    lr: f64,
    huber: HuberParams,
    gamma: f64,
) -> Result<f64>
where
    F: FnMut(&QuantileTable, usize) -> usize,
{
    QrLearner::new().update(table, target, batch, selector, lr, huber, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::greedy_mean;
    use crate::dp::q_value_iteration;
    use crate::mdp::{nchain, NChainParams, LEFT};
    use crate::quantile::{quantile_huber_grad, quantile_huber_loss, LossNormalization};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tr(state: usize, action: usize, reward: f64, next_state: usize, done: bool) -> Transition {
        Transition {
            state,
            action,
            reward,
            next_state,
            done,
            t: 0,
        }
    }

    #[test]
    fn target_examples() {
        let mut t = QuantileTable::zeros(2, 1, 2).unwrap();
        t.row_mut(1, 0).copy_from_slice(&[1.0, 2.0]);
        assert_eq!(td_target(&t, 10.0, 1, 0, 0.9, true), vec![10.0, 10.0]);
        assert_eq!(td_target(&t, 3.0, 1, 0, 0.0, false), vec![3.0, 3.0]);
        let v = td_target(&t, 1.0, 1, 0, 0.9, false);
        assert!((v[0] - 1.9).abs() < 1e-15 && (v[1] - 2.8).abs() < 1e-15);
    }

    #[test]
    fn zero_residual_leaves_table_alone() {
        let mut t = QuantileTable::filled(2, 1, 4, 3.0).unwrap();
        let target = t.clone();
        let before = t.clone();
        let loss = qr_update_step(
            &mut t,
            &target,
            &[tr(0, 0, 3.0, 1, true)],
            greedy_mean,
            0.1,
            HuberParams::default(),
            0.9,
        )
        .unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(t, before);
        assert!(qr_update_step(&mut t, &target, &[], greedy_mean, 0.1, HuberParams::default(), 0.9).is_err());
    }

    #[test]
    fn constant_target_is_a_fixed_point() {
        let mut t = QuantileTable::zeros(2, 1, 8).unwrap();
        let target = t.clone();
        let batch = [tr(0, 0, 10.0, 1, true)];
        let mut learner = QrLearner::new();
        // the lowest level moves at rate lr·τ̂_1 = 0.05/16 per update
        for _ in 0..20_000 {
            learner
                .update(&mut t, &target, &batch, greedy_mean, 0.05, HuberParams::default(), 0.9)
                .unwrap();
        }
        assert!(t.row(0, 0).iter().all(|v| (v - 10.0).abs() < 1e-6), "{:?}", t.row(0, 0));
    }

    #[test]
    fn matches_direct_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut t = QuantileTable::zeros(3, 2, 16).unwrap();
        let mut target = t.clone();
        for v in (0..3).flat_map(|s| (0..2).map(move |a| (s, a))) {
            for x in t.row_mut(v.0, v.1) {
                *x = rng.random_range(-2.0..2.0);
            }
            for x in target.row_mut(v.0, v.1) {
                *x = rng.random_range(-2.0..2.0);
            }
        }
        let batch = [tr(0, 1, 0.5, 2, false)];
        let a_star = greedy_mean(&target, 2);
        let y = td_target(&target, 0.5, 2, a_star, 0.9, false);
        let hp = HuberParams::default();
        let expect_loss = quantile_huber_loss(t.row(0, 1), &y, hp, LossNormalization::Sum).unwrap();
        let g = quantile_huber_grad(t.row(0, 1), &y, hp, LossNormalization::Sum).unwrap();
        let expect: Vec<f64> = t.row(0, 1).iter().zip(&g).map(|(th, g)| th - 0.1 * g).collect();
        let loss = qr_update_step(&mut t, &target, &batch, greedy_mean, 0.1, hp, 0.9).unwrap();
        assert!((loss - expect_loss).abs() < 1e-12);
        for (a, b) in t.row(0, 1).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn selector_sees_the_target_table() {
        let mut t = QuantileTable::zeros(2, 3, 4).unwrap();
        let mut target = t.clone();
        target.row_mut(1, 2).copy_from_slice(&[1.0; 4]);
        t.row_mut(1, 0).copy_from_slice(&[50.0; 4]);
        let mut seen = Vec::new();
        qr_update_step(
            &mut t,
            &target,
            &[tr(0, 0, 0.0, 1, false)],
            |tab: &QuantileTable, s| {
                let a = greedy_mean(tab, s);
                seen.push(a);
                a
            },
            0.1,
            HuberParams::default(),
            0.9,
        )
        .unwrap();
        assert_eq!(seen, vec![2]);
    }

    #[test]
    fn fixed_batch_loss_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let mut t = QuantileTable::zeros(4, 2, 8).unwrap();
            let mut target = t.clone();
            for s in 0..4 {
                for a in 0..2 {
                    for x in t.row_mut(s, a) {
                        *x = rng.random_range(-3.0..3.0);
                    }
                    for x in target.row_mut(s, a) {
                        *x = rng.random_range(-3.0..3.0);
                    }
                }
            }
            let batch: Vec<Transition> = (0..4)
                .map(|s| tr(s, s % 2, rng.random_range(-1.0..1.0), rng.random_range(0..4), s == 3))
                .collect();
            let hp = HuberParams::default();
            let mut learner = QrLearner::new();
            let mut prev = f64::INFINITY;
            for _ in 0..3000 {
                let loss = learner
                    .update(&mut t, &target, &batch, greedy_mean, 1e-3, hp, 0.9)
                    .unwrap();
                assert!(loss < prev || loss == 0.0, "{loss} !< {prev}");
                prev = loss;
            }
        }
    }

    #[test]
    fn left_path_converges_to_q_star() {
        // Frozen left-only policy from s2 with periodic target syncs.
        let mdp = nchain(&NChainParams::default()).unwrap();
        let q = q_value_iteration(&mdp, 1e-12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut t = QuantileTable::zeros(6, 6, 50).unwrap();
        let mut target = t.clone();
        let mut learner = QrLearner::new();
        let hp = HuberParams::default();
        let mut batch = Vec::new();
        for step in 0..20_000 {
            batch.clear();
            for _ in 0..8 {
                let s = [2usize, 1, 0][rng.random_range(0..3)];
                let x = mdp.step(s, LEFT, 0, &mut rng).unwrap();
                batch.push(x);
            }
            learner
                .update(&mut t, &target, &batch, |_: &QuantileTable, _| LEFT, 0.05, hp, 0.9)
                .unwrap();
            if step % 25 == 0 {
                target.copy_from(&t);
                learner.invalidate();
            }
        }
        assert!((t.mean(2, LEFT) - q.get(2, LEFT)).abs() < 0.05, "{}", t.mean(2, LEFT));
    }
}

use crate::agents::{Snapshot, TraceRow};
use crate::error::Result;
use crate::quantile::wasserstein2_to_gaussian;

pub fn optimal_count(rows: &[TraceRow]) -> u64 {
    rows.iter().filter(|r| r.is_optimal_action).count() as u64
}

/// Count achieved by taking the optimal action at every step.
pub fn oracle_line(total_steps: u64) -> u64 {
    total_steps
}

/// (t, W₂ to N(mu, sigma²)) for every snapshot of the given pair.
pub fn w2_curve(snapshots: &[Snapshot], state: usize, action: usize, mu: f64, sigma: f64) -> Result<Vec<(u64, f64)>> {
    snapshots
        .iter()
        .filter(|s| s.state == state && s.action == action)
        .map(|s| Ok((s.t, wasserstein2_to_gaussian(&s.theta, mu, sigma)?)))
        .collect()
}

/// Cumulative optimal-action count sampled every `stride` steps and at the
/// last row.
pub fn count_curve(flags: impl IntoIterator<Item = (u64, bool)>, stride: u64) -> Vec<(u64, u64)> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    let mut total = 0;
    let mut last = None;
    for (t, ok) in flags {
        total += u64::from(ok);
        if t % stride == 0 {
            out.push((t, total));
            last = None;
        } else {
            last = Some((t, total));
        }
    }
    out.extend(last);
    out
}

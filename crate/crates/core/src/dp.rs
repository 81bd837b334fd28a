//! Exact distributional dynamic programming.
//!
//! The perturbed optimality operator T_ξ backs up the *unperturbed*
//! next-state distribution of the action that maximises the ξ-weighted
//! expectation:
//!
//! ```text
//! T_ξ Z(s,a) = R(s,a) + γ·Z(S', a*(ξ)),   a*(ξ) = argmax_a' E_ξ[Z(S', a')]
//! ```
//!
//! Distributions are kept as N midpoint quantiles. One application expands
//! each entry into particles (reward atoms ⊗ next-state quantiles, weighted by
//! the transition probabilities) and projects back onto N quantiles. With
//! ξ ≡ 1 this is the standard distributional optimality operator.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{RewardDist, TabularMdp};
use crate::perturbation::{
    alpha_from_delta, make_xi, perturbation_gap, sample_simplex, DeltaSchedule, DirichletParams, PerturbationWeights,
    XiScale,
};
use crate::quantile::{abs_first_moment, midpoint_level, QuantileDist};
use crate::table::{argmax, QuantileTable};

pub type DistTable = QuantileTable;

/// Weighted atoms; the intermediate form before quantile projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    particles: Vec<(f64, f64)>,
}

impl ParticleSet {
    pub fn new(particles: Vec<(f64, f64)>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::invalid("empty particle set"));
        }
        if particles.iter().any(|(v, w)| !v.is_finite() || !(*w >= 0.0)) {
            return Err(Error::invalid("particles need finite values and non-negative weights"));
        }
        let total: f64 = particles.iter().map(|p| p.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("particle weights sum to {total}")));
        }
        Ok(Self { particles })
    }

    pub fn equiprobable(values: Vec<f64>) -> Result<Self> {
        let w = 1.0 / values.len().max(1) as f64;
        Self::new(values.into_iter().map(|v| (v, w)).collect())
    }

    pub fn particles(&self) -> &[(f64, f64)] {
        &self.particles
    }

    pub fn values(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.0).collect()
    }

    pub fn mean(&self) -> f64 {
        self.particles.iter().map(|(v, w)| v * w).sum()
    }
}

// Cumulative weights are compared with a small slack so that sums that are
// exactly a level in real arithmetic still count as reaching it.
const LEVEL_SLACK: f64 = 1e-12;

/// θ_i = F⁻¹(τ̂_i) for the left-continuous inverse CDF of the particles.
pub fn project_to_quantiles(p: &ParticleSet, n: usize) -> Result<QuantileDist> {
    let mut sorted = p.particles.clone();
    sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut k = 0;
    for i in 0..n {
        let level = midpoint_level(i, n);
        while k < sorted.len() && cum + sorted[k].1 < level - LEVEL_SLACK {
            cum += sorted[k].1;
            k += 1;
        }
        out.push(sorted[k.min(sorted.len() - 1)].0);
    }
    QuantileDist::new(out)
}

/// M equiprobable atoms at the mixture's midpoint quantiles.
pub fn discretize_reward(dist: &RewardDist, m: usize) -> Result<ParticleSet> {
    if m == 0 {
        return Err(Error::invalid("need at least one reward atom"));
    }
    let atoms = reward_atoms(dist, m)?;
    ParticleSet::equiprobable(atoms)
}

const BISECTION_TOL: f64 = 1e-12;

fn reward_atoms(dist: &RewardDist, m: usize) -> Result<Vec<f64>> {
    let comps = dist.components();
    if comps.iter().all(|c| c.std == 0.0) {
        // Purely discrete: invert the step CDF directly.
        let mut pts: Vec<(f64, f64)> = comps.iter().map(|c| (c.mean, c.weight)).collect();
        pts.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let ps = ParticleSet { particles: pts };
        return Ok(project_to_quantiles_unchecked(&ps, m));
    }
    let lo0 = comps
        .iter()
        .map(|c| c.mean - 40.0 * c.std)
        .fold(f64::INFINITY, f64::min)
        - 1.0;
    let hi0 = comps
        .iter()
        .map(|c| c.mean + 40.0 * c.std)
        .fold(f64::NEG_INFINITY, f64::max)
        + 1.0;
    let mut atoms = Vec::with_capacity(m);
    for i in 0..m {
        let level = midpoint_level(i, m);
        let (mut lo, mut hi) = (lo0, hi0);
        let mut iters = 0;
        while hi - lo > BISECTION_TOL * hi.abs().max(1.0) {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if dist.cdf(mid) >= level {
                hi = mid;
            } else {
                lo = mid;
            }
            iters += 1;
            if iters > 400 {
                return Err(Error::Bisection { level });
            }
        }
        let mut x = hi;
        for c in comps.iter().filter(|c| c.std == 0.0) {
            if (x - c.mean).abs() <= 4.0 * BISECTION_TOL * x.abs().max(1.0) {
                x = c.mean;
            }
        }
        atoms.push(x);
    }
    Ok(atoms)
}

fn project_to_quantiles_unchecked(p: &ParticleSet, n: usize) -> Vec<f64> {
    let mut cum = 0.0;
    let mut k = 0;
    let s = &p.particles;
    (0..n)
        .map(|i| {
            let level = midpoint_level(i, n);
            while k < s.len() && cum + s[k].1 < level - LEVEL_SLACK {
                cum += s[k].1;
                k += 1;
            }
            s[k.min(s.len() - 1)].0
        })
        .collect()
}

/// argmax_a E_ξ[Z(s, a)], lowest index on ties.
pub fn greedy_action(table: &DistTable, s: usize, xi: &PerturbationWeights) -> Result<usize> {
    if xi.len() != table.n_quantiles() {
        return Err(Error::DimensionMismatch {
            expected: table.n_quantiles(),
            actual: xi.len(),
        });
    }
    let values = (0..table.n_actions())
        .map(|a| table.xi_expectation(s, a, xi))
        .collect::<Result<Vec<_>>>()?;
    Ok(argmax(values))
}

/// T_ξ for a fixed MDP with its rewards discretised once.
#[derive(Debug, Clone)]
pub struct PdbooOperator<'a> {
    mdp: &'a TabularMdp,
    m_reward: usize,
    /// Sorted reward atoms per (s, a); a single atom when all M coincide.
    atoms: Vec<Vec<f64>>,
}

impl<'a> PdbooOperator<'a> {
    pub fn new(mdp: &'a TabularMdp, m_reward: usize) -> Result<Self> {
        if m_reward == 0 {
            return Err(Error::invalid("m_reward must be >= 1"));
        }
        let mut atoms = Vec::with_capacity(mdp.n_states() * mdp.n_actions());
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let mut v = reward_atoms(mdp.reward(s, a), m_reward)?;
                v.sort_unstable_by(f64::total_cmp);
                // Equal atoms give identical runs; one copy carries the same weights.
                if v.first() == v.last() {
                    v.truncate(1);
                }
                atoms.push(v);
            }
        }
        Ok(Self { mdp, m_reward, atoms })
    }

    pub fn m_reward(&self) -> usize {
        self.m_reward
    }

    pub fn reward_atoms(&self, s: usize, a: usize) -> &[f64] {
        &self.atoms[s * self.mdp.n_actions() + a]
    }

    pub fn apply(&self, table: &DistTable, xi: &PerturbationWeights) -> Result<DistTable> {
        let mdp = self.mdp;
        let (ns, na, n) = (mdp.n_states(), mdp.n_actions(), table.n_quantiles());
        if table.n_states() != ns || table.n_actions() != na {
            return Err(Error::DimensionMismatch {
                expected: ns * na,
                actual: table.n_states() * table.n_actions(),
            });
        }
        if xi.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: xi.len(),
            });
        }
        let gamma = mdp.gamma();

        // Perturbed greedy choice and its sorted, discounted quantiles per s'.
        let mut next_sorted: Vec<Vec<f64>> = Vec::with_capacity(ns);
        for s2 in 0..ns {
            let a_star = greedy_action(table, s2, xi)?;
            let mut v: Vec<f64> = table.row(s2, a_star).iter().map(|t| gamma * t).collect();
            v.sort_unstable_by(f64::total_cmp);
            next_sorted.push(v);
        }

        let mut out = DistTable::zeros(ns, na, n)?;
        let mut scratch = MergeScratch::default();
        for s in 0..ns {
            for a in 0..na {
                let atoms = self.reward_atoms(s, a);
                let row = out.row_mut(s, a);
                if mdp.is_terminal(s) {
                    let ps = ParticleSet::equiprobable(atoms.to_vec())?;
                    row.copy_from_slice(&project_to_quantiles_unchecked(&ps, n));
                    continue;
                }
                let succ: Vec<(usize, f64)> = mdp
                    .transition_row(s, a)
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(s2, &p)| (s2, p))
                    .collect();
                scratch.project(atoms, &succ, &next_sorted, row);
            }
        }
        Ok(out)
    }
}

/// Buffers for merging the sorted runs `r_m + γ·θ(s', a*)`.
#[derive(Debug, Default)]
struct MergeScratch {
    buf: Vec<f64>,
    merged: Vec<Vec<f64>>,
}

impl MergeScratch {
    fn project(&mut self, atoms: &[f64], succ: &[(usize, f64)], next_sorted: &[Vec<f64>], out: &mut [f64]) {
        let n = out.len();
        let m = atoms.len();
        self.merged.resize_with(succ.len(), Vec::new);
        for (k, &(s2, _)) in succ.iter().enumerate() {
            let base = &next_sorted[s2];
            let run = base.len();
            let dst = &mut self.merged[k];
            dst.clear();
            for &r in atoms {
                dst.extend(base.iter().map(|t| r + t));
            }
            merge_runs(dst, run, &mut self.buf);
        }
        // Weighted sweep over the per-successor sorted arrays.
        debug_assert!(self.merged.iter().all(|v| v.len() == m * next_sorted[0].len()));
        let weights: Vec<f64> = succ
            .iter()
            .zip(&self.merged)
            .map(|(&(_, p), v)| p / v.len() as f64)
            .collect();
        let mut heads = vec![0usize; succ.len()];
        let mut cur: Vec<f64> = self.merged.iter().map(|v| v[0]).collect();
        let mut cum = 0.0;
        let mut last = f64::NAN;
        let mut i = 0;
        while i < n {
            let mut k = 0;
            for j in 1..cur.len() {
                if cur[j] < cur[k] {
                    k = j;
                }
            }
            let value = cur[k];
            if value == f64::INFINITY {
                out[i..].fill(last);
                return;
            }
            heads[k] += 1;
            cur[k] = self.merged[k].get(heads[k]).copied().unwrap_or(f64::INFINITY);
            cum += weights[k];
            last = value;
            while i < n && cum >= midpoint_level(i, n) - LEVEL_SLACK {
                out[i] = value;
                i += 1;
            }
        }
    }
}

/// Merges sorted `a` and `b` into `out` (`out.len() == a.len() + b.len()`).
#[inline]
fn merge_pair(a: &[f64], b: &[f64], out: &mut [f64]) {
    let (mut i, mut j, mut o) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        let (x, y) = (a[i], b[j]);
        let take_b = y < x;
        out[o] = if take_b { y } else { x };
        i += usize::from(!take_b);
        j += usize::from(take_b);
        o += 1;
    }
    let rest = a.len() - i;
    out[o..o + rest].copy_from_slice(&a[i..]);
    out[o + rest..].copy_from_slice(&b[j..]);
}

/// Bottom-up merge of consecutive sorted runs of length `run` in place.
fn merge_runs(v: &mut Vec<f64>, mut run: usize, buf: &mut Vec<f64>) {
    let len = v.len();
    if run == 0 || run >= len {
        return;
    }
    buf.clear();
    buf.resize(len, 0.0);
    let (mut src, mut dst): (&mut Vec<f64>, &mut Vec<f64>) = (v, buf);
    let mut swapped = false;
    while run < len {
        for (s, d) in src.chunks(2 * run).zip(dst.chunks_mut(2 * run)) {
            let mid = run.min(s.len());
            merge_pair(&s[..mid], &s[mid..], d);
        }
        std::mem::swap(&mut src, &mut dst);
        swapped = !swapped;
        run *= 2;
    }
    if swapped {
        // `src` is the caller's buffer now; copy the result back.
        dst.copy_from_slice(src);
    }
}

/// One application of T_ξ (discretises the rewards on every call; use
/// [`PdbooOperator`] to iterate).
pub fn pdboo_apply(
    table: &DistTable,
    xi: &PerturbationWeights,
    mdp: &TabularMdp,
    m_reward: usize,
) -> Result<DistTable> {
    PdbooOperator::new(mdp, m_reward)?.apply(table, xi)
}

/// Q* on mean rewards, with the number of sweeps used.
#[derive(Debug, Clone, PartialEq)]
pub struct QSolution {
    pub n_states: usize,
    pub n_actions: usize,
    pub q: Vec<f64>,
    pub iterations: usize,
}

impl QSolution {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn value(&self, s: usize) -> f64 {
        (0..self.n_actions)
            .map(|a| self.get(s, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn greedy(&self, s: usize) -> usize {
        argmax((0..self.n_actions).map(|a| self.get(s, a)))
    }
}

/// Expected-value iteration until the sup-norm change drops below `tol`.
pub fn q_value_iteration(mdp: &TabularMdp, tol: f64) -> Result<QSolution> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let (ns, na, gamma) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let means: Vec<f64> = (0..ns)
        .flat_map(|s| (0..na).map(move |a| (s, a)))
        .map(|(s, a)| mdp.reward(s, a).mean())
        .collect();
    let mut q = vec![0.0; ns * na];
    let mut v = vec![0.0; ns];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut delta: f64 = 0.0;
        let mut next = vec![0.0; ns * na];
        for s in 0..ns {
            for a in 0..na {
                let k = s * na + a;
                next[k] = if mdp.is_terminal(s) {
                    means[k]
                } else {
                    means[k]
                        + gamma
                            * mdp
                                .transition_row(s, a)
                                .iter()
                                .zip(&v)
                                .map(|(p, vv)| p * vv)
                                .sum::<f64>()
                };
                delta = delta.max((next[k] - q[k]).abs());
            }
        }
        q = next;
        for s in 0..ns {
            v[s] = (0..na).map(|a| q[s * na + a]).fold(f64::NEG_INFINITY, f64::max);
        }
        if delta < tol {
            break;
        }
    }
    Ok(QSolution {
        n_states: ns,
        n_actions: na,
        q,
        iterations,
    })
}

/// The weaker-contraction bound at iteration n:
///
/// ```text
/// Σ_{k=n}^∞ ( 2γ^{k−1}V_max + 2 Σ_{i=1}^k γ^i (Δ_{k+2−i} + Δ_{k+1−i}) )
/// ```
///
/// Swapping the order of summation gives, with T(m) = Σ_{j≥m} Δ_j,
///
/// ```text
/// 2V_max·γ^{n−1}/(1−γ)
///   + 2 Σ_{i=1}^{n} γ^i (T(n+2−i) + T(n+1−i)) + 2 γ^{n+1}/(1−γ) (T(2) + T(1))
/// ```
///
/// T is replaced by an upper bound, so the result never under-estimates.
pub fn convergence_bound(n: u64, gamma: f64, vmax: f64, schedule: &DeltaSchedule, tail_tol: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma {gamma} not in [0, 1)")));
    }
    if !schedule.is_summable() {
        return Err(Error::NotSummable("the bound needs Σ Δ_n < ∞".into()));
    }
    let geometric = 2.0 * vmax * gamma.powi((n - 1) as i32) / (1.0 - gamma);
    if schedule.delta0() == 0.0 {
        return Ok(geometric);
    }
    // tails[m] = T(m) for m in 1..=n+1
    let nn = n as usize;
    let mut tails = vec![0.0; nn + 2];
    tails[nn + 1] = schedule.tail_sum_upper(n + 1, tail_tol)?;
    for m in (1..=nn).rev() {
        tails[m] = schedule.at(m as u64)? + tails[m + 1];
    }
    let mut conv = 0.0;
    let mut g = 1.0;
    for i in 1..=nn {
        g *= gamma;
        if g == 0.0 {
            break;
        }
        conv += g * (tails[nn + 2 - i] + tails[nn + 1 - i]);
    }
    let far = gamma.powi((n + 1) as i32) / (1.0 - gamma) * (tails[2] + tails[1]);
    Ok(geometric + 2.0 * (conv + far))
}

/// Additive allowance for the per-step quantile projection bias when
/// comparing against bounds stated for exact operators.
pub fn projection_slack(vmax: f64, n: usize, m_reward: usize) -> f64 {
    4.0 * vmax * (1.0 / n as f64 + 1.0 / m_reward as f64)
}

#[derive(Debug, Clone)]
pub struct DpConfig {
    pub n_quantiles: usize,
    pub m_reward: usize,
    pub schedule: DeltaSchedule,
    pub n_iters: usize,
    pub xi_scale: XiScale,
    pub dirichlet: DirichletParams,
    pub tail_tol: f64,
    /// Z^(0); all zeros when `None`.
    pub init: Option<DistTable>,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            n_quantiles: 512,
            m_reward: 64,
            schedule: DeltaSchedule::power_law(0.5, 0.001).expect("valid"),
            n_iters: 200,
            xi_scale: XiScale::AlphaCertified,
            dirichlet: DirichletParams::default(),
            tail_tol: 1e-12,
            init: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpTraceRow {
    pub n: usize,
    pub sup_gap: f64,
    /// convergence_bound(n) plus the projection slack.
    pub bound: f64,
    pub assumption_ok: bool,
}

#[derive(Debug, Clone)]
pub struct DpRun {
    pub trace: Vec<DpTraceRow>,
    pub q_star: QSolution,
    pub final_table: DistTable,
    pub slack: f64,
}

impl DpRun {
    /// Every row with a summable schedule satisfies sup_gap ≤ bound.
    pub fn bound_holds(&self) -> bool {
        self.trace.iter().all(|r| !r.assumption_ok || r.sup_gap <= r.bound)
    }

    pub fn final_sup_gap(&self) -> f64 {
        self.trace.last().map(|r| r.sup_gap).unwrap_or(f64::NAN)
    }
}

/// Iterates Z^(n) = T_{ξ_n} Z^(n−1) with ξ_n drawn from the Δ_n ambiguity
/// set and records how far the means are from Q*.
pub fn dp_convergence_run<R: Rng + ?Sized>(mdp: &TabularMdp, config: &DpConfig, rng: &mut R) -> Result<DpRun> {
    let n = config.n_quantiles;
    let vmax = mdp.vmax();
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let q_star = q_value_iteration(mdp, 1e-12 * vmax.max(1.0))?;
    let op = PdbooOperator::new(mdp, config.m_reward)?;
    let slack = projection_slack(vmax, n, config.m_reward);
    let summable = config.schedule.is_summable();

    let mut table = match &config.init {
        Some(t) => {
            if t.n_states() != ns || t.n_actions() != na || t.n_quantiles() != n {
                return Err(Error::invalid("initial table does not match the MDP and N"));
            }
            t.clone()
        }
        None => DistTable::zeros(ns, na, n)?,
    };

    let mut trace = Vec::with_capacity(config.n_iters);
    for it in 1..=config.n_iters {
        let delta = config.schedule.at(it as u64)?;
        let x = sample_simplex(config.dirichlet, n, rng)?;
        let alpha = match config.xi_scale {
            XiScale::AlphaCertified => alpha_from_delta(delta, n, vmax)?,
            XiScale::RawDelta => delta,
        };
        let xi = make_xi(&x, alpha)?;

        // ξ_n must lie in the Δ_n ambiguity set of every entry of Z^(n−1).
        let mut in_set = true;
        for s in 0..ns {
            for a in 0..na {
                if perturbation_gap(table.row(s, a), &xi)? > delta + 1e-9 {
                    in_set = false;
                }
            }
        }

        table = op.apply(&table, &xi)?;

        let mut sup_gap: f64 = 0.0;
        for s in 0..ns {
            for a in 0..na {
                let row = table.row(s, a);
                if !row.iter().all(|v| v.is_finite()) {
                    return Err(Error::InvariantBreach {
                        n: it,
                        state: s,
                        action: a,
                        message: "non-finite quantile".into(),
                    });
                }
                let m1 = abs_first_moment(row);
                if m1 > vmax + 1e-9 {
                    return Err(Error::InvariantBreach {
                        n: it,
                        state: s,
                        action: a,
                        message: format!("first absolute moment {m1} exceeds V_max {vmax}"),
                    });
                }
                sup_gap = sup_gap.max((table.mean(s, a) - q_star.get(s, a)).abs());
            }
        }
        let bound = if summable {
            convergence_bound(it as u64, mdp.gamma(), vmax, &config.schedule, config.tail_tol)? + slack
        } else {
            f64::INFINITY
        };
        trace.push(DpTraceRow {
            n: it,
            sup_gap,
            bound,
            assumption_ok: summable && in_set,
        });
    }
    Ok(DpRun {
        trace,
        q_star,
        final_table: table,
        slack,
    })
}

/// A random MDP with Dirichlet(1) transition rows and Gaussian rewards whose
/// midpoint atoms stay inside [−rmax, rmax]. No terminal states.
pub fn random_mdp<R: Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    rmax: f64,
    rng: &mut R,
) -> Result<TabularMdp> {
    let ones = DirichletParams::new(1.0)?;
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    let mut reward = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states * n_actions {
        transition.extend(sample_simplex(ones, n_states.max(2), rng)?.into_iter().take(n_states));
        let std = rng.random_range(0.0..0.2) * rmax;
        let reach = rmax - 3.0 * std;
        let mean = rng.random_range(-reach..reach);
        reward.push(RewardDist::gaussian(mean, std));
    }
    if n_states == 1 {
        transition.iter_mut().for_each(|p| *p = 1.0);
    }
    // Renormalise rows so they sum to 1 despite the truncation above.
    for row in transition.chunks_mut(n_states) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= s);
    }
    TabularMdp::new(
        n_states,
        n_actions,
        transition,
        reward,
        gamma,
        vec![false; n_states],
        0,
        rmax,
    )
}

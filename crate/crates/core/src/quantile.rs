//! Quantile-represented return distributions.
//!
//! A distribution is stored as `N` equally weighted atoms θ₁..θ_N sitting at
//! the midpoint levels τ̂_i = (2i−1)/(2N). Locations are kept in the order
//! they were written; learning is allowed to cross quantiles, so nothing here
//! assumes they are sorted unless a statistic says so.

use crate::error::{Error, Result};
use crate::perturbation::PerturbationWeights;
use crate::stats::std_normal_inv_cdf;

/// Midpoint quantile level of the 0-based index `i` out of `n`.
#[inline]
pub fn midpoint_level(i: usize, n: usize) -> f64 {
    (2 * i + 1) as f64 / (2 * n) as f64
}

/// All `n` midpoint levels, ascending.
pub fn midpoint_levels(n: usize) -> Vec<f64> {
    (0..n).map(|i| midpoint_level(i, n)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileDist {
    locations: Vec<f64>,
}

impl QuantileDist {
    pub fn new(locations: Vec<f64>) -> Result<Self> {
        if locations.len() < 2 {
            return Err(Error::invalid(format!(
                "a quantile distribution needs at least 2 locations, got {}",
                locations.len()
            )));
        }
        if let Some(i) = locations.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("location {i} is not finite")));
        }
        Ok(Self { locations })
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    /// The midpoint quantiles of N(mu, sigma²).
    pub fn gaussian_quantiles(n: usize, mu: f64, sigma: f64) -> Result<Self> {
        Self::new(gaussian_midpoint_quantiles(n, mu, sigma))
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn into_locations(self) -> Vec<f64> {
        self.locations
    }

    pub fn mean(&self) -> f64 {
        mean_of(&self.locations)
    }

    pub fn xi_expectation(&self, xi: &PerturbationWeights) -> Result<f64> {
        xi_weighted_mean(&self.locations, xi.weights())
    }

    pub fn left_truncated_variance(&self) -> Result<f64> {
        left_truncated_variance(&self.locations)
    }

    pub fn wasserstein2_to_gaussian(&self, mu: f64, sigma: f64) -> Result<f64> {
        wasserstein2_to_gaussian(&self.locations, mu, sigma)
    }

    /// (1/N)·Σ|θ_i|, the first absolute moment.
    pub fn abs_first_moment(&self) -> f64 {
        abs_first_moment(&self.locations)
    }
}

pub fn mean_of(theta: &[f64]) -> f64 {
    theta.iter().sum::<f64>() / theta.len() as f64
}

pub fn abs_first_moment(theta: &[f64]) -> f64 {
    theta.iter().map(|v| v.abs()).sum::<f64>() / theta.len() as f64
}

/// (1/N)·Σ ξ_i θ_i. With ξ ≡ 1 this is bit-identical to [`mean_of`].
pub fn xi_weighted_mean(theta: &[f64], xi: &[f64]) -> Result<f64> {
    if theta.len() != xi.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            actual: xi.len(),
        });
    }
    let s: f64 = theta.iter().zip(xi).map(|(t, w)| w * t).sum();
    Ok(s / theta.len() as f64)
}

/// σ²₊ = (1/2N)·Σ_{i=N/2}^{N} (θ_{N/2} − θ_i)² with 1-based indices, both ends
/// inclusive, on locations as stored.
pub fn left_truncated_variance(theta: &[f64]) -> Result<f64> {
    let n = theta.len();
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::OddQuantileCount(n));
    }
    let pivot = theta[n / 2 - 1];
    let s: f64 = theta[n / 2 - 1..].iter().map(|t| (pivot - t).powi(2)).sum();
    Ok(s / (2 * n) as f64)
}

pub fn gaussian_midpoint_quantiles(n: usize, mu: f64, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|i| mu + sigma * std_normal_inv_cdf(midpoint_level(i, n)))
        .collect()
}

/// W₂ between the sorted atoms and N(mu, sigma²), discretised on the
/// midpoint levels. The discretisation error is O(sigma/N).
pub fn wasserstein2_to_gaussian(theta: &[f64], mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if theta.is_empty() {
        return Err(Error::invalid("empty quantile vector"));
    }
    let mut sorted = theta.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    let q = gaussian_midpoint_quantiles(n, mu, sigma);
    let ss: f64 = sorted.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((ss / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberParams {
    kappa: f64,
}

impl HuberParams {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::invalid(format!("kappa must be positive, got {kappa}")));
        }
        Ok(Self { kappa })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

impl Default for HuberParams {
    fn default() -> Self {
        Self { kappa: 1.0 }
    }
}

/// Outer normalisation of the quantile loss over the N predicted quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossNormalization {
    /// Σ_i (1/M)Σ_j ρ(...), the form used by the PQR update.
    #[default]
    Sum,
    /// Additionally divide by N.
    Mean,
}

impl LossNormalization {
    fn scale(self, n: usize) -> f64 {
        match self {
            LossNormalization::Sum => 1.0,
            LossNormalization::Mean => 1.0 / n as f64,
        }
    }
}

pub fn huber(x: f64, params: HuberParams) -> f64 {
    let k = params.kappa;
    if x.abs() <= k {
        0.5 * x * x
    } else {
        k * (x.abs() - 0.5 * k)
    }
}

#[inline]
fn huber_slope(x: f64, k: f64) -> f64 {
    x.clamp(-k, k)
}

/// ρ^κ_τ(x) = |τ − 1{x<0}|·L_κ(x).
pub fn quantile_huber(x: f64, tau: f64, params: HuberParams) -> f64 {
    let w = if x < 0.0 { 1.0 - tau } else { tau };
    w * huber(x, params)
}

/// Σ_i (1/M)Σ_j ρ^κ_τ̂i(target_j − θ_i).
pub fn quantile_huber_loss(pred: &[f64], targets: &[f64], params: HuberParams, norm: LossNormalization) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::EmptyTargets);
    }
    let n = pred.len();
    let m = targets.len() as f64;
    let mut total = 0.0;
    for (i, &theta) in pred.iter().enumerate() {
        let tau = midpoint_level(i, n);
        let row: f64 = targets.iter().map(|&t| quantile_huber(t - theta, tau, params)).sum();
        total += row / m;
    }
    Ok(total * norm.scale(n))
}

/// ∂loss/∂θ_i of [`quantile_huber_loss`]. The indicator's subgradient at a
/// zero residual is taken as 0.
pub fn quantile_huber_grad(
    pred: &[f64],
    targets: &[f64],
    params: HuberParams,
    norm: LossNormalization,
) -> Result<Vec<f64>> {
    if targets.is_empty() {
        return Err(Error::EmptyTargets);
    }
    let n = pred.len();
    let m = targets.len() as f64;
    let k = params.kappa;
    let scale = norm.scale(n);
    Ok(pred
        .iter()
        .enumerate()
        .map(|(i, &theta)| {
            let tau = midpoint_level(i, n);
            let s: f64 = targets
                .iter()
                .map(|&t| {
                    let u = t - theta;
                    let w = if u < 0.0 { 1.0 - tau } else { tau };
                    w * huber_slope(u, k)
                })
                .sum();
            -s / m * scale
        })
        .collect())
}

/// Targets sorted once, with prefix sums of (t − shift) and (t − shift)².
/// Reusable across predictions while the targets stay fixed.
#[derive(Debug, Default, Clone)]
pub struct PreparedTargets {
    sorted: Vec<f64>,
    p1: Vec<f64>,
    p2: Vec<f64>,
    shift: f64,
}

impl PreparedTargets {
    pub fn new(targets: &[f64]) -> Result<Self> {
        let mut p = Self::default();
        p.reset(targets)?;
        Ok(p)
    }

    pub fn reset(&mut self, targets: &[f64]) -> Result<()> {
        if targets.is_empty() {
            return Err(Error::EmptyTargets);
        }
        self.sorted.clear();
        self.sorted.extend_from_slice(targets);
        if !self.sorted.is_sorted() {
            self.sorted.sort_unstable_by(f64::total_cmp);
        }
        // Shift by the mid target so the squared prefix sums stay small.
        self.shift = self.sorted[self.sorted.len() / 2];
        self.p1.clear();
        self.p2.clear();
        self.p1.push(0.0);
        self.p2.push(0.0);
        let (mut a1, mut a2) = (0.0, 0.0);
        for &t in &self.sorted {
            let d = t - self.shift;
            a1 += d;
            a2 += d * d;
            self.p1.push(a1);
            self.p2.push(a2);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Writes ∂loss/∂θ into `grad` and returns the loss (Sum normalisation).
    /// O(N + M) when `pred` is sorted, O(N·log M) otherwise.
    pub fn loss_and_grad(&self, pred: &[f64], params: HuberParams, grad: &mut [f64]) -> Result<f64> {
        if self.sorted.is_empty() {
            return Err(Error::EmptyTargets);
        }
        if grad.len() != pred.len() {
            return Err(Error::DimensionMismatch {
                expected: pred.len(),
                actual: grad.len(),
            });
        }
        let n = pred.len();
        let m = self.sorted.len();
        let k = params.kappa;
        let sorted = &self.sorted[..];
        let (p1, p2) = (&self.p1[..], &self.p2[..]);
        let mf = m as f64;
        let monotone = pred.is_sorted();
        let (mut a, mut b, mut c) = (0, 0, 0);

        let mut loss = 0.0;
        for (i, &theta) in pred.iter().enumerate() {
            let tau = midpoint_level(i, n);
            if monotone {
                while a < m && sorted[a] < theta - k {
                    a += 1;
                }
                b = b.max(a);
                while b < m && sorted[b] < theta {
                    b += 1;
                }
                c = c.max(b);
                while c < m && sorted[c] <= theta + k {
                    c += 1;
                }
            } else {
                a = sorted.partition_point(|&t| t < theta - k);
                b = sorted.partition_point(|&t| t < theta);
                c = sorted.partition_point(|&t| t <= theta + k);
            }
            let th = theta - self.shift;

            // Sums of u = t − θ over each region.
            let sum_u = |lo: usize, hi: usize| (p1[hi] - p1[lo]) - (hi - lo) as f64 * th;
            let sum_u2 = |lo: usize, hi: usize| {
                let cnt = (hi - lo) as f64;
                let s1 = p1[hi] - p1[lo];
                let s2 = p2[hi] - p2[lo];
                (s2 - 2.0 * th * s1 + cnt * th * th).max(0.0)
            };

            let lower = k * (-sum_u(0, a) - 0.5 * k * a as f64) + 0.5 * sum_u2(a, b);
            let upper = 0.5 * sum_u2(b, c) + k * (sum_u(c, m) - 0.5 * k * (m - c) as f64);
            loss += ((1.0 - tau) * lower + tau * upper) / mf;

            let g_lower = -k * a as f64 + sum_u(a, b);
            let g_upper = sum_u(b, c) + k * (m - c) as f64;
            grad[i] = -((1.0 - tau) * g_lower + tau * g_upper) / mf;
        }
        Ok(loss)
    }
}

/// Loss and gradient in O((N + M)·log M) using sorted targets and prefix
/// sums. Agrees with the direct double loop up to rounding.
#[derive(Debug, Default, Clone)]
pub struct QuantileHuberWorkspace {
    prepared: PreparedTargets,
}

impl QuantileHuberWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Writes the gradient into `grad` and returns the loss (Sum normalisation).
    pub fn loss_and_grad(
        &mut self,
        pred: &[f64],
        targets: &[f64],
        params: HuberParams,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.prepared.reset(targets)?;
        self.prepared.loss_and_grad(pred, params, grad)
    }
}

//! Perturbations of the expectation: the ξ reweighting vector, its Dirichlet
//! construction, perturbation gaps and the Δ schedules that bound them.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::quantile::{mean_of, xi_weighted_mean};

/// Non-negative reweighting of N quantiles with (1/N)Σξ_i = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationWeights {
    weights: Vec<f64>,
}

const WEIGHT_SUM_TOL: f64 = 1e-9;

impl PerturbationWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::invalid("empty perturbation vector"));
        }
        if let Some(i) = weights.iter().position(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid(format!(
                "perturbation weight {i} is negative or not finite"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - n as f64).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!(
                "perturbation weights sum to {sum}, expected {n}"
            )));
        }
        Ok(Self { weights })
    }

    /// ξ ≡ 1, the unperturbed expectation.
    pub fn ones(n: usize) -> Self {
        Self { weights: vec![1.0; n] }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// sup_i |1 − ξ_i|.
    pub fn max_deviation(&self) -> f64 {
        self.weights.iter().map(|w| (1.0 - w).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleForm {
    /// Δ₀·t^−(1+ε)
    PowerLaw,
    /// Δ₀
    Constant,
    /// Δ₀·sqrt(ln t / t)
    SqrtLogOverT,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaSchedule {
    delta0: f64,
    epsilon: f64,
    form: ScheduleForm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummabilityReport {
    pub summable: bool,
    /// Σ_{n=1}^{horizon} Δ_n
    pub partial_sum: f64,
    /// Analytic upper bound on Σ_{n>horizon} Δ_n when the series converges.
    pub tail_bound: Option<f64>,
}

impl DeltaSchedule {
    pub fn power_law(delta0: f64, epsilon: f64) -> Result<Self> {
        Self::new(delta0, epsilon, ScheduleForm::PowerLaw)
    }

    pub fn constant(delta0: f64) -> Result<Self> {
        Self::new(delta0, 0.0, ScheduleForm::Constant)
    }

    pub fn sqrt_log_over_t(delta0: f64) -> Result<Self> {
        Self::new(delta0, 0.0, ScheduleForm::SqrtLogOverT)
    }

    pub fn new(delta0: f64, epsilon: f64, form: ScheduleForm) -> Result<Self> {
        if !(delta0 >= 0.0) || !delta0.is_finite() {
            return Err(Error::invalid(format!("delta0 must be >= 0, got {delta0}")));
        }
        if form == ScheduleForm::PowerLaw && !(epsilon > 0.0) {
            return Err(Error::invalid(format!(
                "power-law schedule needs epsilon > 0, got {epsilon}"
            )));
        }
        Ok(Self { delta0, epsilon, form })
    }

    pub fn delta0(&self) -> f64 {
        self.delta0
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn form(&self) -> ScheduleForm {
        self.form
    }

    /// Δ_t for t ≥ 1.
    pub fn at(&self, t: u64) -> Result<f64> {
        if t == 0 {
            return Err(Error::invalid("schedule is indexed from t = 1"));
        }
        Ok(self.eval(t as f64))
    }

    fn eval(&self, t: f64) -> f64 {
        match self.form {
            ScheduleForm::PowerLaw => self.delta0 * t.powf(-(1.0 + self.epsilon)),
            ScheduleForm::Constant => self.delta0,
            ScheduleForm::SqrtLogOverT => self.delta0 * (t.ln() / t).sqrt(),
        }
    }

    /// Classified analytically by form: a numeric partial sum cannot tell a
    /// slowly diverging series from a convergent one.
    pub fn is_summable(&self) -> bool {
        self.delta0 == 0.0 || self.form == ScheduleForm::PowerLaw
    }

    pub fn check_summability(&self, horizon: u64) -> Result<SummabilityReport> {
        if horizon == 0 {
            return Err(Error::invalid("horizon must be >= 1"));
        }
        let partial_sum: f64 = (1..=horizon).map(|t| self.eval(t as f64)).sum();
        let summable = self.is_summable();
        let tail_bound = summable.then(|| {
            if self.delta0 == 0.0 {
                0.0
            } else {
                // Σ_{t>H} t^−(1+ε) ≤ ∫_H^∞ t^−(1+ε) dt = H^−ε/ε
                self.delta0 * (horizon as f64).powf(-self.epsilon) / self.epsilon
            }
        });
        Ok(SummabilityReport {
            summable,
            partial_sum,
            tail_bound,
        })
    }

    /// Upper bound on Σ_{j ≥ m} Δ_j. Terms are summed explicitly until they
    /// drop below `tol` (or a fixed budget runs out) and the remainder is
    /// bounded by the integral test, so the result never under-estimates.
    pub fn tail_sum_upper(&self, m: u64, tol: f64) -> Result<f64> {
        if m == 0 {
            return Err(Error::invalid("tail index must be >= 1"));
        }
        if self.delta0 == 0.0 {
            return Ok(0.0);
        }
        if !self.is_summable() {
            return Err(Error::NotSummable(format!("{:?} schedule", self.form)));
        }
        const BUDGET: u64 = 200_000;
        let mut j = m;
        let mut s = 0.0;
        while j < m + BUDGET {
            let d = self.eval(j as f64);
            if d < tol {
                break;
            }
            s += d;
            j += 1;
        }
        // Σ_{i≥j} f(i) ≤ f(j) + ∫_j^∞ f
        let jf = j as f64;
        let rest = self.delta0 * (jf.powf(-(1.0 + self.epsilon)) + jf.powf(-self.epsilon) / self.epsilon);
        Ok(s + rest)
    }
}

/// Whether the agent uses Δ_t directly as the mixing coefficient or the
/// certified α = Δ/((N−1)V_max).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum XiScale {
    #[default]
    RawDelta,
    AlphaCertified,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletParams {
    beta: f64,
}

impl DirichletParams {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::invalid(format!("beta must be positive, got {beta}")));
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Default for DirichletParams {
    fn default() -> Self {
        Self { beta: 0.05 }
    }
}

/// ln of a Gamma(shape, 1) variate.
///
/// Marsaglia–Tsang for shape ≥ 1; smaller shapes use the boost
/// G(a) = G(a+1)·U^{1/a}, kept in log space because U^{1/a} underflows for
/// the tiny concentrations used here.
pub fn sample_ln_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u: f64 = 1.0 - rng.random::<f64>();
        return sample_ln_gamma(shape + 1.0, rng) + u.ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = 1.0 - rng.random::<f64>();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d.ln() + v.ln();
        }
    }
}

pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    sample_ln_gamma(shape, rng).exp()
}

const SIMPLEX_RETRIES: usize = 16;

/// x ~ Dir(β·1^N) by normalising N independent Gamma(β, 1) draws.
pub fn sample_simplex<R: Rng + ?Sized>(params: DirichletParams, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::invalid(format!("simplex dimension must be >= 2, got {n}")));
    }
    for _ in 0..SIMPLEX_RETRIES {
        let logs: Vec<f64> = (0..n).map(|_| sample_ln_gamma(params.beta, rng)).collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            continue;
        }
        let mut x: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = x.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            continue;
        }
        x.iter_mut().for_each(|v| *v /= sum);
        return Ok(x);
    }
    Err(Error::Sampling(format!(
        "Dirichlet(beta={}) produced degenerate draws {SIMPLEX_RETRIES} times",
        params.beta
    )))
}

/// α = Δ/((N−1)·V_max); any α at or below this keeps d(Z;ξ) ≤ Δ.
pub fn alpha_from_delta(delta: f64, n: usize, vmax: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid(format!("N must be >= 2, got {n}")));
    }
    if !(vmax > 0.0) {
        return Err(Error::invalid(format!("V_max must be positive, got {vmax}")));
    }
    if !(delta >= 0.0) {
        return Err(Error::invalid(format!("delta must be >= 0, got {delta}")));
    }
    Ok(delta / ((n - 1) as f64 * vmax))
}

/// ξ'_i = max(1 + α(N·x_i − 1), 0), then ξ = N·ξ'/Σξ'.
pub fn make_xi(x: &[f64], alpha: f64) -> Result<PerturbationWeights> {
    let n = x.len();
    if n == 0 {
        return Err(Error::invalid("empty simplex vector"));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    let nf = n as f64;
    let raw: Vec<f64> = x.iter().map(|&xi| (1.0 + alpha * (nf * xi - 1.0)).max(0.0)).collect();
    let sum: f64 = raw.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::DegenerateWeights(format!(
            "clamped weights sum to {sum} (alpha = {alpha}, N = {n})"
        )));
    }
    let weights = raw.into_iter().map(|w| nf * w / sum).collect();
    PerturbationWeights::new(weights)
}

/// d(Z;ξ) = |E[Z] − E_ξ[Z]|.
pub fn perturbation_gap(theta: &[f64], xi: &PerturbationWeights) -> Result<f64> {
    let perturbed = xi_weighted_mean(theta, xi.weights())?;
    Ok((mean_of(theta) - perturbed).abs())
}

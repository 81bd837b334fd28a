use crate::error::{Error, Result};
use crate::perturbation::PerturbationWeights;
use crate::quantile::{mean_of, xi_weighted_mean, QuantileDist};

/// Per-(state, action) quantile locations, stored contiguously as
/// `[s][a][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    n_states: usize,
    n_actions: usize,
    n_quantiles: usize,
    theta: Vec<f64>,
}

impl QuantileTable {
    pub fn zeros(n_states: usize, n_actions: usize, n_quantiles: usize) -> Result<Self> {
        Self::filled(n_states, n_actions, n_quantiles, 0.0)
    }

    pub fn filled(n_states: usize, n_actions: usize, n_quantiles: usize, value: f64) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("table needs at least one state and one action"));
        }
        if n_quantiles < 2 {
            return Err(Error::invalid(format!("need at least 2 quantiles, got {n_quantiles}")));
        }
        Ok(Self {
            n_states,
            n_actions,
            n_quantiles,
            theta: vec![value; n_states * n_actions * n_quantiles],
        })
    }

    pub fn from_dists(n_states: usize, n_actions: usize, dists: Vec<QuantileDist>) -> Result<Self> {
        if dists.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch {
                expected: n_states * n_actions,
                actual: dists.len(),
            });
        }
        let n = dists.first().map(QuantileDist::len).unwrap_or(0);
        let mut table = Self::zeros(n_states, n_actions, n)?;
        for (k, d) in dists.iter().enumerate() {
            if d.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: d.len(),
                });
            }
            table.theta[k * n..(k + 1) * n].copy_from_slice(d.locations());
        }
        Ok(table)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_quantiles(&self) -> usize {
        self.n_quantiles
    }

    #[inline]
    fn offset(&self, s: usize, a: usize) -> usize {
        (s * self.n_actions + a) * self.n_quantiles
    }

    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let o = self.offset(s, a);
        &self.theta[o..o + self.n_quantiles]
    }

    #[inline]
    pub fn row_mut(&mut self, s: usize, a: usize) -> &mut [f64] {
        let o = self.offset(s, a);
        let n = self.n_quantiles;
        &mut self.theta[o..o + n]
    }

    pub fn dist(&self, s: usize, a: usize) -> QuantileDist {
        QuantileDist::new(self.row(s, a).to_vec()).expect("table rows are valid")
    }

    pub fn mean(&self, s: usize, a: usize) -> f64 {
        mean_of(self.row(s, a))
    }

    pub fn means(&self, s: usize) -> Vec<f64> {
        (0..self.n_actions).map(|a| self.mean(s, a)).collect()
    }

    pub fn xi_expectation(&self, s: usize, a: usize, xi: &PerturbationWeights) -> Result<f64> {
        xi_weighted_mean(self.row(s, a), xi.weights())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }

    pub fn copy_from(&mut self, other: &QuantileTable) {
        debug_assert_eq!(self.theta.len(), other.theta.len());
        self.theta.copy_from_slice(&other.theta);
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dp::greedy_action;
use crate::error::{Error, Result};
use crate::perturbation::{alpha_from_delta, make_xi, sample_simplex, DirichletParams, PerturbationWeights, XiScale};
use crate::quantile::left_truncated_variance;
use crate::table::{argmax, QuantileTable};

/// argmax_a mean(θ(s, a)), lowest index on ties.
pub fn greedy_mean(table: &QuantileTable, s: usize) -> usize {
    argmax((0..table.n_actions()).map(|a| table.mean(s, a)))
}

pub fn act_eps_greedy<R: Rng + ?Sized>(table: &QuantileTable, s: usize, eps: f64, rng: &mut R) -> Result<usize> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::invalid(format!("eps must be in [0, 1], got {eps}")));
    }
    if eps > 0.0 && rng.random::<f64>() < eps {
        return Ok(rng.random_range(0..table.n_actions()));
    }
    Ok(greedy_mean(table, s))
}

/// c·sqrt(ln t / t); zero at t = 1.
pub fn dltv_coefficient(c: f64, t: u64) -> Result<f64> {
    if t == 0 {
        return Err(Error::invalid("t must be >= 1"));
    }
    let t = t as f64;
    Ok(c * (t.ln() / t).sqrt())
}

fn bonus_argmax(table: &QuantileTable, s: usize, ct: f64) -> Result<(usize, f64)> {
    let mut scores = Vec::with_capacity(table.n_actions());
    let mut bonus = Vec::with_capacity(table.n_actions());
    for a in 0..table.n_actions() {
        let b = ct * left_truncated_variance(table.row(s, a))?.sqrt();
        scores.push(table.mean(s, a) + b);
        bonus.push(b);
    }
    let a = argmax(scores);
    Ok((a, bonus[a]))
}

/// argmax_a mean(θ(s,a)) + c_t·sqrt(σ²₊(s,a)). Returns the action and the
/// bonus it received.
pub fn act_dltv(table: &QuantileTable, s: usize, c: f64, t: u64) -> Result<(usize, f64)> {
    bonus_argmax(table, s, dltv_coefficient(c, t)?)
}

/// DLTV with c_t = c·z·sqrt(ln t / t), z ~ N(0, 1) drawn per call. Returns
/// the action and the drawn c_t.
pub fn act_pdltv<R: Rng + ?Sized>(
    table: &QuantileTable,
    s: usize,
    c: f64,
    t: u64,
    rng: &mut R,
) -> Result<(usize, f64)> {
    let z: f64 = rng.sample(StandardNormal);
    let ct = z * dltv_coefficient(c, t)?;
    let (a, _) = bonus_argmax(table, s, ct)?;
    Ok((a, ct))
}

/// Greedy on the ξ-weighted expectation with ξ built from a Dirichlet draw.
pub fn act_pqr<R: Rng + ?Sized>(
    table: &QuantileTable,
    s: usize,
    delta_t: f64,
    dirichlet: DirichletParams,
    xi_scale: XiScale,
    vmax: f64,
    rng: &mut R,
) -> Result<(usize, PerturbationWeights)> {
    if !(delta_t >= 0.0) {
        return Err(Error::invalid(format!("delta_t must be >= 0, got {delta_t}")));
    }
    let n = table.n_quantiles();
    let x = sample_simplex(dirichlet, n, rng)?;
    let scale = match xi_scale {
        XiScale::RawDelta => delta_t,
        XiScale::AlphaCertified => alpha_from_delta(delta_t, n, vmax)?,
    };
    let xi = make_xi(&x, scale)?;
    Ok((greedy_action(table, s, &xi)?, xi))
}

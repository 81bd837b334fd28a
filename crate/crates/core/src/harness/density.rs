use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Scott's rule n^(−1/5)·s with the sample (n − 1) standard deviation.
/// Constant samples get max(1e-6, |mean|·1e-3) instead of zero.
pub fn scott_bandwidth(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::invalid("KDE needs at least 2 values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let h = n.powf(-0.2) * var.sqrt();
    Ok(if h > 0.0 { h } else { (mean.abs() * 1e-3).max(1e-6) })
}

/// n evenly spaced points from lo to hi inclusive.
pub fn grid(lo: f64, hi: f64, n_points: usize) -> Result<Vec<f64>> {
    if !(lo < hi) || n_points < 2 {
        return Err(Error::invalid(format!("bad grid ({lo}, {hi}, {n_points})")));
    }
    let step = (hi - lo) / (n_points - 1) as f64;
    Ok((0..n_points).map(|i| lo + step * i as f64).collect())
}

/// Gaussian KDE of `values` on a grid; Scott bandwidth when `bandwidth` is
/// `None`. Returns (x, density) pairs.
pub fn emit_density(
    values: &[f64],
    lo: f64,
    hi: f64,
    n_points: usize,
    bandwidth: Option<f64>,
) -> Result<Vec<(f64, f64)>> {
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::invalid(format!("bandwidth must be positive, got {h}"))),
        None => scott_bandwidth(values)?,
    };
    if values.len() < 2 {
        return Err(Error::invalid("KDE needs at least 2 values"));
    }
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * PI).sqrt());
    Ok(grid(lo, hi, n_points)?
        .into_iter()
        .map(|x| {
            let d: f64 = values.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum();
            (x, d * norm)
        })
        .collect())
}

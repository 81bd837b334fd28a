// Standard normal helpers shared by the quantile and MDP code.

use statrs::function::erf::erfc_inv;

pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub(crate) fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Φ⁻¹(p) for p in (0, 1).
pub(crate) fn std_normal_inv_cdf(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert!((std_normal_inv_cdf(0.75) - 0.674_489_750_196_081_7).abs() < 1e-13);
        assert!(std_normal_inv_cdf(0.5).abs() < 1e-15);
        assert!((std_normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-14);
    }

    #[test]
    fn inverse_round_trips() {
        for i in 1..200 {
            let p = i as f64 / 200.0;
            assert!((std_normal_cdf(std_normal_inv_cdf(p)) - p).abs() < 1e-13);
        }
    }
}

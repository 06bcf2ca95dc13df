use super::params::ListaVmParams;
use crate::error::{Error, Result};

/// Largest step multiplier accepted by the constructions.
pub const GAMMA_MAX: f64 = 1.5;

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= GAMMA_MAX {
        Ok(())
    } else {
        Err(Error::domain(format!("gamma must lie in (0, {GAMMA_MAX}], got {gamma}")))
    }
}

fn check_sigma(sigma_d: f64) -> Result<()> {
    if sigma_d > 0.0 && sigma_d.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("sigma_d must be positive, got {sigma_d}")))
    }
}

/// `M_k = γ·(2/σ_d²)·I`, `θ_k = γ·μ̂·b_β·ρ^(k−1)`.
pub fn theory_params(
    d: usize,
    sigma_d: f64,
    gamma: f64,
    b_beta: f64,
    mu_hat: f64,
    rho: f64,
    k: usize,
) -> Result<ListaVmParams> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::domain(format!("decay rho must lie in (0, 1], got {rho}")));
    }
    if !(b_beta >= 0.0 && mu_hat >= 0.0) {
        return Err(Error::domain("b_beta and mu_hat must be non-negative"));
    }
    let thetas = (0..k).map(|i| gamma * mu_hat * b_beta * rho.powi(i as i32)).collect();
    theory_params_with_schedule(d, sigma_d, gamma, thetas)
}

/// `M_k = γ·(2/σ_d²)·I` with an explicit threshold schedule.
pub fn theory_params_with_schedule(
    d: usize,
    sigma_d: f64,
    gamma: f64,
    thetas: Vec<f64>,
) -> Result<ListaVmParams> {
    check_gamma(gamma)?;
    check_sigma(sigma_d)?;
    if thetas.is_empty() {
        return Err(Error::domain("K must be at least 1"));
    }
    let scale = gamma * 2.0 / (sigma_d * sigma_d);
    ListaVmParams::new(vec![ndarray::Array2::eye(d) * scale; thetas.len()], thetas)
}

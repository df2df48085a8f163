//! Client-side penalty terms and their gradients.

use crate::error::{Error, Result};
use crate::params::FlatParams;

fn check_conflict(current: &FlatParams, conflict: &[f64]) -> Result<()> {
    if conflict.len() != current.dim() {
        return Err(Error::Dimension(format!(
            "{} conflict scores for {} parameters",
            conflict.len(),
            current.dim()
        )));
    }
    Ok(())
}

/// `λ · Σ_d C_d · (φ[d] − φ_global[d])²`
pub fn pcr_penalty(current: &FlatParams, global_prev: &FlatParams, conflict: &[f64], lambda_reg: f64) -> Result<f64> {
    current.check_same_layout(global_prev)?;
    check_conflict(current, conflict)?;
    let mut acc = 0.0;
    for ((p, g), c) in current.values().iter().zip(global_prev.values()).zip(conflict) {
        let d = p - g;
        acc += c * d * d;
    }
    Ok(lambda_reg * acc)
}

/// Gradient of [`pcr_penalty`]: `2·λ·C_d·(φ[d] − φ_global[d])`.
pub fn pcr_grad(current: &FlatParams, global_prev: &FlatParams, conflict: &[f64], lambda_reg: f64) -> Result<FlatParams> {
    current.check_same_layout(global_prev)?;
    check_conflict(current, conflict)?;
    let values = current
        .values()
        .iter()
        .zip(global_prev.values())
        .zip(conflict)
        .map(|((p, g), c)| 2.0 * lambda_reg * c * (p - g))
        .collect();
    current.with_values(values)
}

/// `μ/2 · ‖φ − φ_global‖²`
pub fn fedprox_penalty(current: &FlatParams, global_prev: &FlatParams, mu: f64) -> Result<f64> {
    Ok(0.5 * mu * current.sub(global_prev)?.norm_sq())
}

/// Gradient of [`fedprox_penalty`]: `μ·(φ[d] − φ_global[d])`.
pub fn fedprox_grad(current: &FlatParams, global_prev: &FlatParams, mu: f64) -> Result<FlatParams> {
    current.zip_with(global_prev, |p, g| mu * (p - g))
}

//! Misfit functionals between model eigenvalues `f(p)` and data.

use crate::error::{Error, Result};

use super::noise::NoisyData;

/// `‖f − Λ‖₂²`.
pub fn cost_exact(model: &[f64], data: &[f64]) -> f64 {
    assert_eq!(model.len(), data.len());
    model.iter().zip(data).map(|(f, l)| (f - l).powi(2)).sum()
}

/// Negative log-likelihood of multiplicative Gaussian noise, up to constants:
/// `Σ (f_i − Λ_i^δ)² / (f_i² δ²) + log f_i`.
pub fn cost_mle(model: &[f64], data: &NoisyData) -> Result<f64> {
    assert_eq!(model.len(), data.len());
    if !(data.delta > 0.0) {
        return Err(Error::Config("the likelihood cost needs a positive noise level".into()));
    }
    let d2 = data.delta * data.delta;
    let mut total = 0.0;
    for (i, (&f, &l)) in model.iter().zip(&data.values).enumerate() {
        if !(f > 0.0) {
            return Err(Error::ZeroEigenvalueInModel { index: i, value: f });
        }
        total += (f - l).powi(2) / (f * f * d2) + f.ln();
    }
    Ok(total)
}

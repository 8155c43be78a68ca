//! Multiplicative Gaussian measurement noise `Λ^δ = (1 + ζ) Λ`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyData {
    /// Perturbed eigenvalues `Λ^δ`.
    pub values: Vec<f64>,
    /// Realized relative perturbations `ζ`.
    pub zeta: Vec<f64>,
    pub delta: f64,
    pub seed: u64,
}

impl NoisyData {
    /// Noise-free data: `Λ^δ = Λ`, `δ = 0`.
    pub fn exact(values: &[f64]) -> Self {
        Self {
            values: values.to_vec(),
            zeta: vec![0.0; values.len()],
            delta: 0.0,
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Absolute perturbations `ζ_i Λ_i`, reconstructed from the data.
    pub fn absolute_noise(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.zeta)
            .map(|(v, z)| v / (1.0 + z) * z)
            .collect()
    }
}

/// Draws `ζ_i ~ N(0, δ²)` i.i.d. from a generator seeded with `seed`.
pub fn add_multiplicative_noise(lambda: &[f64], delta: f64, seed: u64) -> Result<NoisyData> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::Config(format!("noise level must be non-negative, got {delta}")));
    }
    if delta == 0.0 {
        return Ok(NoisyData {
            seed,
            ..NoisyData::exact(lambda)
        });
    }
    let normal = Normal::new(0.0, delta).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zeta: Vec<f64> = lambda.iter().map(|_| normal.sample(&mut rng)).collect();
    let values = lambda.iter().zip(&zeta).map(|(l, z)| (1.0 + z) * l).collect();
    Ok(NoisyData {
        values,
        zeta,
        delta,
        seed,
    })
}

//! Recovery of core elastic constants from eigenvalue data.

pub mod cost;
pub mod eki;
pub mod lsq;
pub mod noise;
pub mod unknowns;

pub use cost::{cost_exact, cost_mle};
pub use eki::{eki_run, eki_step, ensemble_update, EkiOutcome, EkiSettings, EkiStatus, Ensemble};
pub use lsq::{lsq_recover, LsqOutcome, LsqSettings, LsqStatus};
pub use noise::{add_multiplicative_noise, NoisyData};
pub use unknowns::{ForwardModel, RotorProblem, UnknownSet};

use crate::error::{Error, Result};

/// `|p_true − p̂| / |p_true|` per entry.
pub fn relative_error(estimate: &[f64], truth: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(estimate.len(), truth.len());
    estimate
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(i, (e, t))| {
            if *t == 0.0 {
                Err(Error::ZeroTruth(i))
            } else {
                Ok(((t - e) / t).abs())
            }
        })
        .collect()
}

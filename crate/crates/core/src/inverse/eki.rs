//! Ensemble Kalman inversion with perturbed observations.
//!
//! The update is computed in coordinates whitened by `Γ^{-1/2}` so that the
//! matrix to invert is `C̃ᴳᴳ + αI`. All random draws come from a counter-based
//! stream keyed by `(purpose, iteration, member)`, which makes results
//! independent of the evaluation schedule.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::noise::NoisyData;
use super::unknowns::ForwardModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EkiSettings {
    pub ensemble_size: usize,
    pub max_iter: usize,
    pub tol_c: f64,
    pub tol_v: f64,
    /// Relative noise level standing in for `δ` in `Γ` when the data are exact.
    pub gamma_noiseless: f64,
    pub alpha: f64,
    /// Initial members are drawn uniformly from `[init_low, init_high]·p_ref`.
    pub init_low: f64,
    pub init_high: f64,
    pub seed: u64,
}

impl Default for EkiSettings {
    fn default() -> Self {
        Self {
            ensemble_size: 60,
            max_iter: 200,
            tol_c: 1e-8,
            tol_v: 1e-10,
            gamma_noiseless: 1e-8,
            alpha: 1.0,
            init_low: 0.5,
            init_high: 1.5,
            seed: 1,
        }
    }
}

const STREAM_INIT: u64 = 1;
const STREAM_ETA: u64 = 2;

/// Generator for one `(purpose, iteration, member)` triple.
fn stream(seed: u64, purpose: u64, iteration: usize, member: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(((iteration as u64) << 32) | member as u64);
    rng
}

/// Standard normal draws for the perturbation of `member` at `iteration`,
/// in whitened coordinates (so `Γ^{1/2} η̃ ~ N(0, Γ)`).
pub fn whitened_perturbation(seed: u64, iteration: usize, member: usize, len: usize) -> Vec<f64> {
    let mut rng = stream(seed, STREAM_ETA, iteration, member);
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Ensemble mean and sample covariances `C^{pG}`, `C^{GG}` (normalized by `J − 1`).
pub fn ensemble_moments(
    members: &[DVector<f64>],
    outputs: &[DVector<f64>],
) -> (DVector<f64>, DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let j = members.len() as f64;
    let pbar = members.iter().fold(DVector::zeros(members[0].len()), |a, p| a + p) / j;
    let gbar = outputs.iter().fold(DVector::zeros(outputs[0].len()), |a, g| a + g) / j;
    let mut cpg = DMatrix::zeros(pbar.len(), gbar.len());
    let mut cgg = DMatrix::zeros(gbar.len(), gbar.len());
    for (p, g) in members.iter().zip(outputs) {
        let dp = p - &pbar;
        let dg = g - &gbar;
        cpg += &dp * dg.transpose();
        cgg += &dg * dg.transpose();
    }
    let norm = 1.0 / (j - 1.0);
    (pbar, gbar, cpg * norm, cgg * norm)
}

/// Whether the update needed the pseudo-inverse fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateSolve {
    Cholesky,
    PseudoInverse,
}

/// One perturbed-observation update:
/// `p ← p + C^{pG}(C^{GG} + αΓ)^{-1}(y + √α η − G)`.
///
/// `gamma` is the diagonal of `Γ`; `eta` holds whitened perturbations
/// (`η = Γ^{1/2} η̃`). When `Γ` has non-positive entries or the whitened
/// system is not positive definite, a pseudo-inverse is used instead.
pub fn ensemble_update(
    members: &[DVector<f64>],
    outputs: &[DVector<f64>],
    data: &DVector<f64>,
    gamma: &[f64],
    alpha: f64,
    eta: &[DVector<f64>],
) -> Result<(Vec<DVector<f64>>, UpdateSolve)> {
    if members.len() < 2 || members.len() != outputs.len() || eta.len() != members.len() {
        return Err(Error::SingularUpdate(format!(
            "need at least two members with matching outputs and perturbations (got {})",
            members.len()
        )));
    }
    let (_, _, cpg, cgg) = ensemble_moments(members, outputs);
    let n = data.len();
    let whitenable = gamma.iter().all(|g| *g > 0.0 && g.is_finite());
    let sqrt_alpha = alpha.sqrt();

    if whitenable {
        let s: DVector<f64> = DVector::from_iterator(n, gamma.iter().map(|g| g.sqrt()));
        let sinv = s.map(|v| 1.0 / v);
        // C̃ = S⁻¹ C S⁻¹, C̃^{pG} = C^{pG} S⁻¹
        let mut ct = cgg.clone();
        for i in 0..n {
            for k in 0..n {
                ct[(i, k)] *= sinv[i] * sinv[k];
            }
            ct[(i, i)] += alpha;
        }
        let mut cpgt = cpg.clone();
        for k in 0..n {
            cpgt.column_mut(k).scale_mut(sinv[k]);
        }
        if let Some(chol) = ct.clone().cholesky() {
            let out = members
                .iter()
                .zip(outputs)
                .zip(eta)
                .map(|((p, g), e)| {
                    let innov = (data - g).component_mul(&sinv) + e * sqrt_alpha;
                    p + &cpgt * chol.solve(&innov)
                })
                .collect();
            return Ok((out, UpdateSolve::Cholesky));
        }
    }

    log::warn!("ensemble update: falling back to a pseudo-inverse");
    let mut a = cgg.clone();
    for i in 0..n {
        a[(i, i)] += alpha * gamma[i];
    }
    let eps = 1e-14 * a.amax().max(f64::MIN_POSITIVE);
    let pinv = a
        .pseudo_inverse(eps)
        .map_err(|e| Error::SingularUpdate(e.to_string()))?;
    let sg = DVector::from_iterator(n, gamma.iter().map(|g| g.max(0.0).sqrt()));
    let out = members
        .iter()
        .zip(outputs)
        .zip(eta)
        .map(|((p, g), e)| {
            let innov = data - g + e.component_mul(&sg) * sqrt_alpha;
            p + &cpg * (&pinv * innov)
        })
        .collect();
    Ok((out, UpdateSolve::PseudoInverse))
}

/// Members live in scaled coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<DVector<f64>>,
    pub iteration: usize,
}

impl Ensemble {
    pub fn new(members: Vec<DVector<f64>>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::Config("an ensemble needs at least two members".into()));
        }
        Ok(Self {
            members,
            iteration: 0,
        })
    }

    /// Members drawn uniformly from the box `[low·r, high·r]` around the
    /// physical reference `r` (mapped through `to_scaled`), rejecting draws
    /// the model deems inadmissible.
    pub fn uniform_around<M: ForwardModel + ?Sized>(
        model: &M,
        reference: &[f64],
        to_scaled: impl Fn(&[f64]) -> Vec<f64>,
        settings: &EkiSettings,
    ) -> Result<Self> {
        let mut members = Vec::with_capacity(settings.ensemble_size);
        for j in 0..settings.ensemble_size {
            let mut rng = stream(settings.seed, STREAM_INIT, 0, j);
            let mut found = None;
            for _ in 0..1000 {
                let phys: Vec<f64> = reference
                    .iter()
                    .map(|r| r * rng.random_range(settings.init_low..settings.init_high))
                    .collect();
                let mut x = to_scaled(&phys);
                clip(&mut x, &model.scaled_bounds());
                if model.admissible(&x) {
                    found = Some(x);
                    break;
                }
            }
            let x = found.ok_or_else(|| Error::InadmissibleStart(format!("no admissible draw for member {j}")))?;
            members.push(DVector::from_vec(x));
        }
        Self::new(members)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.members.iter().fold(DVector::zeros(self.members[0].len()), |a, p| a + p) / self.len() as f64
    }
}

fn clip(x: &mut [f64], bounds: &[(f64, f64)]) -> usize {
    let mut moved = 0;
    for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
        let c = v.clamp(*lo, *hi);
        if c != *v {
            *v = c;
            moved += 1;
        }
    }
    moved
}

fn evaluate_all<M: ForwardModel + ?Sized>(model: &M, members: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    members
        .par_iter()
        .map(|p| model.evaluate(p.as_slice()).map(DVector::from_vec))
        .collect()
}

/// `diag(Γ)`: `δ² (Λ^δ)²`, or `γ² (Λ^δ)²` for exact data.
pub fn noise_covariance(data: &NoisyData, gamma_noiseless: f64) -> Vec<f64> {
    let s = if data.delta > 0.0 { data.delta } else { gamma_noiseless };
    data.values.iter().map(|l| (s * l).powi(2)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    /// Member coordinates moved onto the bounds.
    pub clipped: usize,
    /// Members pulled back towards their previous position for admissibility.
    pub backtracked: usize,
    pub pseudo_inverse: bool,
}

/// One synchronized update of all members given their current outputs.
/// Updated members are clipped to the bounds and, if inadmissible, moved back
/// towards their previous position by halving.
pub fn eki_step<M: ForwardModel + ?Sized>(
    ens: &Ensemble,
    outputs: &[DVector<f64>],
    data: &NoisyData,
    model: &M,
    settings: &EkiSettings,
) -> Result<(Ensemble, StepReport)> {
    let gamma = noise_covariance(data, settings.gamma_noiseless);
    let y = DVector::from_vec(data.values.clone());
    // exact data carry no perturbation: η ~ N(0, δ²Λ²) vanishes at δ = 0
    let eta: Vec<DVector<f64>> = (0..ens.len())
        .map(|j| {
            if data.delta > 0.0 {
                DVector::from_vec(whitened_perturbation(settings.seed, ens.iteration, j, y.len()))
            } else {
                DVector::zeros(y.len())
            }
        })
        .collect();
    let (updated, solve) = ensemble_update(&ens.members, outputs, &y, &gamma, settings.alpha, &eta)?;
    let bounds = model.scaled_bounds();
    let mut report = StepReport {
        pseudo_inverse: solve == UpdateSolve::PseudoInverse,
        ..StepReport::default()
    };
    let mut members = Vec::with_capacity(updated.len());
    for (old, new) in ens.members.iter().zip(updated) {
        let mut x = new.as_slice().to_vec();
        report.clipped += clip(&mut x, &bounds);
        if !model.admissible(&x) {
            report.backtracked += 1;
            let mut t = 0.5;
            let mut candidate = old.as_slice().to_vec();
            for _ in 0..40 {
                let trial: Vec<f64> = old.iter().zip(&x).map(|(a, b)| a + t * (b - a)).collect();
                if model.admissible(&trial) {
                    candidate = trial;
                    break;
                }
                t *= 0.5;
            }
            x = candidate;
        }
        members.push(DVector::from_vec(x));
    }
    if report.clipped > 0 {
        log::debug!("iteration {}: {} coordinates clipped to bounds", ens.iteration, report.clipped);
    }
    Ok((
        Ensemble {
            members,
            iteration: ens.iteration + 1,
        },
        report,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EkiStatus {
    /// Change and variance tolerances met (exact data).
    Converged,
    /// Discrepancy principle met (noisy data).
    Discrepancy,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EkiIterate {
    pub iteration: usize,
    /// Ensemble mean in scaled coordinates.
    pub mean: Vec<f64>,
    /// `max_k var_j(p_k^{(j)} / p̄_k)` in physical coordinates.
    pub variance: f64,
    /// `max_j ‖r^{(j)}‖` with `r^{(j)} = |p_n − p_{n−1}| / p_{n−1}` elementwise.
    pub change: f64,
    /// `‖Γ^{-1/2}(Λ^δ − f(p̄_n))‖`.
    pub misfit: f64,
    pub clipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EkiOutcome {
    /// Final ensemble mean, scaled coordinates.
    pub mean: Vec<f64>,
    pub status: EkiStatus,
    pub iterations: usize,
    pub evaluations: usize,
    pub trace: Vec<EkiIterate>,
}

/// Maps scaled coordinates to physical ones for the change and variance tests.
pub type ToPhysical<'a> = &'a (dyn Fn(&[f64]) -> Vec<f64> + Sync);

fn physical_variance(members: &[Vec<f64>]) -> f64 {
    let j = members.len() as f64;
    let d = members[0].len();
    (0..d)
        .map(|k| {
            let mean = members.iter().map(|m| m[k]).sum::<f64>() / j;
            let ratios: Vec<f64> = members.iter().map(|m| m[k] / mean).collect();
            let rm = ratios.iter().sum::<f64>() / j;
            ratios.iter().map(|r| (r - rm).powi(2)).sum::<f64>() / (j - 1.0)
        })
        .fold(0.0, f64::max)
}

fn max_relative_change(prev: &[Vec<f64>], next: &[Vec<f64>]) -> f64 {
    prev.iter()
        .zip(next)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(x, y)| ((y - x) / x).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Iterates [`eki_step`] until the stopping rule for `data` holds:
/// change/variance tolerances for exact data, the discrepancy principle
/// `‖Γ^{-1/2}(Λ^δ − f(p̄))‖ ≤ ‖ζ/δ‖` for noisy data.
pub fn eki_run<M: ForwardModel + ?Sized>(
    init: Ensemble,
    data: &NoisyData,
    model: &M,
    to_physical: ToPhysical<'_>,
    settings: &EkiSettings,
) -> Result<EkiOutcome> {
    for (j, m) in init.members.iter().enumerate() {
        if !model.admissible(m.as_slice()) {
            return Err(Error::InadmissibleStart(format!("initial member {j} is inadmissible")));
        }
    }
    let gamma = noise_covariance(data, settings.gamma_noiseless);
    let noisy = data.delta > 0.0;
    let threshold = data.zeta.iter().map(|z| (z / data.delta).powi(2)).sum::<f64>().sqrt();
    let misfit_of = |f: &[f64]| -> f64 {
        f.iter()
            .zip(&data.values)
            .zip(&gamma)
            .map(|((f, l), g)| (l - f).powi(2) / g)
            .sum::<f64>()
            .sqrt()
    };

    let mut ens = init;
    let mut evaluations = 0;
    let mut trace = Vec::new();
    let mut prev_phys: Option<Vec<Vec<f64>>> = None;
    let mut clipped = 0;
    loop {
        let outputs = evaluate_all(model, &ens.members)?;
        evaluations += ens.len();
        let mean = ens.mean();
        let misfit = match model.evaluate(mean.as_slice()) {
            Ok(f) => {
                evaluations += 1;
                misfit_of(&f)
            }
            Err(_) => f64::INFINITY,
        };
        let phys: Vec<Vec<f64>> = ens.members.iter().map(|m| to_physical(m.as_slice())).collect();
        let variance = physical_variance(&phys);
        let change = prev_phys.as_ref().map_or(f64::INFINITY, |p| max_relative_change(p, &phys));
        trace.push(EkiIterate {
            iteration: ens.iteration,
            mean: mean.as_slice().to_vec(),
            variance,
            change,
            misfit,
            clipped,
        });
        let status = if noisy {
            (misfit <= threshold).then_some(EkiStatus::Discrepancy)
        } else {
            (change <= settings.tol_c && variance <= settings.tol_v).then_some(EkiStatus::Converged)
        };
        let status = status.or((ens.iteration >= settings.max_iter).then_some(EkiStatus::MaxIterations));
        if let Some(status) = status {
            return Ok(EkiOutcome {
                mean: mean.as_slice().to_vec(),
                status,
                iterations: ens.iteration,
                evaluations,
                trace,
            });
        }
        let (next, report) = eki_step(&ens, &outputs, data, model, settings)?;
        clipped = report.clipped;
        prev_phys = Some(phys);
        ens = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_vec(v.to_vec())
    }

    #[test]
    fn hand_oracle_scalar() {
        let members: Vec<_> = [1.0, 2.0, 3.0].iter().map(|v| dv(&[*v])).collect();
        let eta = vec![dv(&[0.0]); 3];
        let (out, solve) = ensemble_update(&members, &members, &dv(&[2.0]), &[1.0], 1.0, &eta).unwrap();
        assert_eq!(solve, UpdateSolve::Cholesky);
        let got: Vec<f64> = out.iter().map(|v| v[0]).collect();
        assert_eq!(got, vec![1.5, 2.0, 2.5]);
    }

    #[test]
    fn zero_spread_is_fixed() {
        let members = vec![dv(&[0.7, 1.1]); 4];
        let outputs = vec![dv(&[3.0]); 4];
        let eta: Vec<_> = (0..4).map(|j| dv(&[j as f64])).collect();
        let (out, _) = ensemble_update(&members, &outputs, &dv(&[5.0]), &[0.5], 1.0, &eta).unwrap();
        assert_eq!(out, members);
    }

    #[test]
    fn singular_gamma_uses_pseudo_inverse() {
        let members = vec![dv(&[1.0]), dv(&[1.0])];
        let eta = vec![dv(&[0.0]); 2];
        let (out, solve) = ensemble_update(&members, &members, &dv(&[2.0]), &[0.0], 1.0, &eta).unwrap();
        assert_eq!(solve, UpdateSolve::PseudoInverse);
        assert_eq!(out, members);
    }

    #[test]
    fn perturbation_streams_are_keyed() {
        let a = whitened_perturbation(9, 3, 5, 4);
        assert_eq!(a, whitened_perturbation(9, 3, 5, 4));
        assert_ne!(a, whitened_perturbation(9, 3, 6, 4));
        assert_ne!(a, whitened_perturbation(9, 4, 5, 4));
    }

    #[test]
    fn variance_and_change_measures() {
        let m = vec![vec![1.0, 10.0], vec![3.0, 10.0]];
        // ratios to the mean: 0.5, 1.5 → sample variance 0.5
        assert!((physical_variance(&m) - 0.5).abs() < 1e-15);
        let n = vec![vec![1.1, 10.0], vec![3.0, 10.0]];
        assert!((max_relative_change(&m, &n) - 0.1).abs() < 1e-12);
    }
}

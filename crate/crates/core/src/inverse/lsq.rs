//! Bound-constrained least squares by projected Levenberg–Marquardt with a
//! forward-difference Jacobian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::cost::{cost_exact, cost_mle};
use super::noise::NoisyData;
use super::unknowns::ForwardModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LsqSettings {
    pub max_iter: usize,
    /// Finite-difference step relative to `max(|x|, 1)` in scaled coordinates.
    pub fd_step: f64,
    /// Converged when a step moves the scaled point by less than this.
    pub step_tol: f64,
    /// Converged when the projected gradient falls below this fraction of
    /// its starting value.
    pub grad_tol: f64,
    pub initial_damping: f64,
}

impl Default for LsqSettings {
    fn default() -> Self {
        Self {
            max_iter: 100,
            fd_step: 1e-6,
            step_tol: 1e-12,
            grad_tol: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LsqStatus {
    Converged,
    MaxIterations,
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsqIterate {
    pub iteration: usize,
    pub x: Vec<f64>,
    pub cost: f64,
    pub step_norm: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsqOutcome {
    /// Final scaled point.
    pub x: Vec<f64>,
    pub cost: f64,
    pub status: LsqStatus,
    pub iterations: usize,
    pub evaluations: usize,
    pub trace: Vec<LsqIterate>,
}

impl LsqOutcome {
    pub fn converged(&self) -> bool {
        self.status == LsqStatus::Converged
    }

    /// The outcome as an error when the solver did not converge.
    pub fn into_result(self) -> Result<Self> {
        match self.status {
            LsqStatus::Converged => Ok(self),
            LsqStatus::MaxIterations => Err(Error::MaxIterations(self.iterations)),
            LsqStatus::Stalled => Err(Error::Stalled(format!(
                "no decrease from cost {:.6e} at iteration {}",
                self.cost, self.iterations
            ))),
        }
    }
}

/// Residual form of the two costs: `cost = ‖r‖² + Σ extra`, with the
/// Jacobian of `r` and the gradient of `extra` with respect to `f`.
struct Objective<'a> {
    data: &'a NoisyData,
}

impl Objective<'_> {
    fn likelihood(&self) -> bool {
        self.data.delta > 0.0
    }

    fn cost(&self, f: &[f64]) -> Result<f64> {
        if self.likelihood() {
            cost_mle(f, self.data)
        } else {
            Ok(cost_exact(f, &self.data.values))
        }
    }

    /// `(r, ∂r/∂f diagonal, ∂extra/∂f)`.
    fn linearize(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let l = &self.data.values;
        if self.likelihood() {
            let d = self.data.delta;
            let r = f.iter().zip(l).map(|(f, l)| (f - l) / (f * d)).collect();
            let dr = f.iter().zip(l).map(|(f, l)| l / (f * f * d)).collect();
            let dlog = f.iter().map(|f| 1.0 / f).collect();
            (r, dr, dlog)
        } else {
            let r = f.iter().zip(l).map(|(f, l)| f - l).collect();
            (r, vec![1.0; f.len()], vec![0.0; f.len()])
        }
    }
}

fn jacobian<M: ForwardModel + ?Sized>(
    model: &M,
    x: &[f64],
    f0: &[f64],
    bounds: &[(f64, f64)],
    rel_step: f64,
    evaluations: &mut usize,
) -> Result<DMatrix<f64>> {
    let mut j = DMatrix::zeros(f0.len(), x.len());
    for k in 0..x.len() {
        let h = rel_step * x[k].abs().max(1.0);
        let mut xp = x.to_vec();
        // one-sided towards the interior when the forward point leaves the box
        let h = if x[k] + h > bounds[k].1 { -h } else { h };
        xp[k] += h;
        if !model.admissible(&xp) {
            xp[k] = x[k] - h;
            if !model.admissible(&xp) {
                return Err(Error::InadmissibleParameters(
                    "no admissible finite-difference step".into(),
                ));
            }
        }
        let hk = xp[k] - x[k];
        let fp = model.evaluate(&xp)?;
        *evaluations += 1;
        for i in 0..f0.len() {
            j[(i, k)] = (fp[i] - f0[i]) / hk;
        }
    }
    Ok(j)
}

/// Projected gradient: components pushing against an active bound vanish.
fn projected_gradient(g: &DVector<f64>, x: &[f64], bounds: &[(f64, f64)]) -> DVector<f64> {
    let mut pg = g.clone();
    for k in 0..x.len() {
        let (lo, hi) = bounds[k];
        if (x[k] <= lo && g[k] > 0.0) || (x[k] >= hi && g[k] < 0.0) {
            pg[k] = 0.0;
        }
    }
    pg
}

/// Minimizes `cost_exact` (noise-free data) or `cost_mle` (`δ > 0`) over the
/// scaled box of `model`, starting at `x0`.
pub fn lsq_recover<M: ForwardModel + ?Sized>(
    model: &M,
    data: &NoisyData,
    x0: &[f64],
    settings: &LsqSettings,
) -> Result<LsqOutcome> {
    let bounds = model.scaled_bounds();
    let inside = x0.iter().zip(&bounds).all(|(x, (lo, hi))| x >= lo && x <= hi);
    if !inside || !model.admissible(x0) {
        return Err(Error::InadmissibleStart(format!("{x0:?} is outside the feasible set")));
    }
    let obj = Objective { data };
    let mut evaluations = 0;
    let mut x = x0.to_vec();
    let mut f = model
        .evaluate(&x)
        .map_err(|e| Error::InadmissibleStart(e.to_string()))?;
    evaluations += 1;
    let mut cost = obj.cost(&f)?;
    let mut damping = settings.initial_damping;
    let mut trace = vec![LsqIterate {
        iteration: 0,
        x: x.clone(),
        cost,
        step_norm: 0.0,
        damping,
    }];
    let mut g0_norm = None;

    for iter in 1..=settings.max_iter {
        if cost == 0.0 && !obj.likelihood() {
            return Ok(finish(x, cost, LsqStatus::Converged, iter - 1, evaluations, trace));
        }
        let jf = jacobian(model, &x, &f, &bounds, settings.fd_step, &mut evaluations)?;
        let (r, dr, dextra) = obj.linearize(&f);
        let mut jr = jf.clone();
        for (i, d) in dr.iter().enumerate() {
            jr.row_mut(i).scale_mut(*d);
        }
        let r = DVector::from_vec(r);
        let g = 2.0 * jr.transpose() * &r + jf.transpose() * DVector::from_vec(dextra);
        let h = 2.0 * jr.transpose() * &jr;
        let pg = projected_gradient(&g, &x, &bounds);
        let pg_norm = pg.amax();
        let g0 = *g0_norm.get_or_insert(pg_norm);
        if pg_norm == 0.0 || pg_norm <= settings.grad_tol * g0 {
            return Ok(finish(x, cost, LsqStatus::Converged, iter - 1, evaluations, trace));
        }

        let hscale = h.diagonal().amax().max(f64::MIN_POSITIVE);
        let mut accepted = None;
        while damping < 1e16 {
            let mut a = h.clone();
            for k in 0..x.len() {
                a[(k, k)] += damping * h[(k, k)].max(1e-12 * hscale);
            }
            let Some(chol) = a.cholesky() else {
                damping *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            let mut xt: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            for (v, (lo, hi)) in xt.iter_mut().zip(&bounds) {
                *v = v.clamp(*lo, *hi);
            }
            if !model.admissible(&xt) {
                damping *= 10.0;
                continue;
            }
            let ft = match model.evaluate(&xt) {
                Ok(ft) => ft,
                Err(Error::InadmissibleParameters(_)) | Err(Error::NotEnoughModes(_)) => {
                    evaluations += 1;
                    damping *= 10.0;
                    continue;
                }
                Err(e) => return Err(e),
            };
            evaluations += 1;
            let ct = obj.cost(&ft)?;
            if ct < cost {
                accepted = Some((xt, ft, ct));
                break;
            }
            damping *= 10.0;
        }
        let Some((xt, ft, ct)) = accepted else {
            return Ok(finish(x, cost, LsqStatus::Stalled, iter, evaluations, trace));
        };
        let step_norm = xt.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = xt;
        f = ft;
        cost = ct;
        damping = (damping / 3.0).max(1e-12);
        trace.push(LsqIterate {
            iteration: iter,
            x: x.clone(),
            cost,
            step_norm,
            damping,
        });
        if step_norm <= settings.step_tol * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
            return Ok(finish(x, cost, LsqStatus::Converged, iter, evaluations, trace));
        }
    }
    let n = settings.max_iter;
    Ok(finish(x, cost, LsqStatus::MaxIterations, n, evaluations, trace))
}

fn finish(
    x: Vec<f64>,
    cost: f64,
    status: LsqStatus,
    iterations: usize,
    evaluations: usize,
    trace: Vec<LsqIterate>,
) -> LsqOutcome {
    LsqOutcome {
        x,
        cost,
        status,
        iterations,
        evaluations,
        trace,
    }
}

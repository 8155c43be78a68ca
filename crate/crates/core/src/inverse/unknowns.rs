//! The unknown subspace and its scaled coordinates.
//!
//! Moduli are handled as `log₁₀` values and the Poisson ratio as is; the
//! known constants stay frozen at their reference values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{forward_map, DataSetSpec, ForwardContext};
use crate::tensor::{admissible_interval_ex, check_admissible, MaterialParams, Param};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnknownSet {
    pub params: Vec<Param>,
    /// Physical `[lo, hi]` per unknown.
    pub bounds: Vec<(f64, f64)>,
}

/// Default search window around the reference value of a modulus.
pub const MODULUS_WINDOW: (f64, f64) = (0.25, 4.0);
/// Default Poisson ratio bounds.
pub const POISSON_BOUNDS: (f64, f64) = (0.05, 0.49);

impl UnknownSet {
    pub fn new(params: Vec<Param>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Config("the unknown set is empty".into()));
        }
        if params.len() != bounds.len() {
            return Err(Error::Config("one bound pair per unknown is required".into()));
        }
        for (i, p) in params.iter().enumerate() {
            if params[..i].contains(p) {
                return Err(Error::Config(format!("{} listed twice", p.label())));
            }
            let (lo, hi) = bounds[i];
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!("bad bounds [{lo}, {hi}] for {}", p.label())));
            }
            if p.is_modulus() && !(lo > 0.0) {
                return Err(Error::Config(format!("{} bounds must be positive", p.label())));
            }
        }
        Ok(Self { params, bounds })
    }

    /// Default bounds around `reference`: moduli within [`MODULUS_WINDOW`]
    /// (with `E_x` additionally kept inside its admissible interval), the
    /// Poisson ratio within [`POISSON_BOUNDS`].
    pub fn with_default_bounds(params: Vec<Param>, reference: &MaterialParams) -> Result<Self> {
        let bounds = params
            .iter()
            .map(|&p| {
                if !p.is_modulus() {
                    return Ok(POISSON_BOUNDS);
                }
                let v = reference.get(p);
                let (mut lo, mut hi) = (MODULUS_WINDOW.0 * v, MODULUS_WINDOW.1 * v);
                if p == Param::Ex {
                    let (a, b) = admissible_interval_ex(reference)?;
                    lo = lo.max(a * 1.001);
                    hi = hi.min(b * 0.999);
                }
                Ok((lo, hi))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(params, bounds)
    }

    pub fn parse_list(s: &str) -> Result<Vec<Param>> {
        s.split(',').filter(|t| !t.trim().is_empty()).map(Param::parse).collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn labels(&self) -> Vec<&'static str> {
        self.params.iter().map(|p| p.label()).collect()
    }

    fn to_scaled_one(p: Param, v: f64) -> f64 {
        if p.is_modulus() {
            v.log10()
        } else {
            v
        }
    }

    fn from_scaled_one(p: Param, x: f64) -> f64 {
        if p.is_modulus() {
            10f64.powf(x)
        } else {
            x
        }
    }

    /// Scaled coordinates of the unknown entries of `p`.
    pub fn to_scaled(&self, p: &MaterialParams) -> Vec<f64> {
        self.params.iter().map(|&q| Self::to_scaled_one(q, p.get(q))).collect()
    }

    /// `base` with the unknown entries replaced by the scaled point `x`.
    pub fn from_scaled(&self, x: &[f64], base: &MaterialParams) -> MaterialParams {
        let mut p = *base;
        for (&q, &xi) in self.params.iter().zip(x) {
            p = p.with(q, Self::from_scaled_one(q, xi));
        }
        p
    }

    /// Physical values of the unknowns in `p`.
    pub fn values(&self, p: &MaterialParams) -> Vec<f64> {
        self.params.iter().map(|&q| p.get(q)).collect()
    }

    pub fn scaled_bounds(&self) -> Vec<(f64, f64)> {
        self.params
            .iter()
            .zip(&self.bounds)
            .map(|(&q, &(lo, hi))| (Self::to_scaled_one(q, lo), Self::to_scaled_one(q, hi)))
            .collect()
    }

    /// Clamps a scaled point into the bounds; returns how many entries moved.
    pub fn clip_scaled(&self, x: &mut [f64]) -> usize {
        let mut moved = 0;
        for (xi, (lo, hi)) in x.iter_mut().zip(self.scaled_bounds()) {
            let c = xi.clamp(lo, hi);
            if c != *xi {
                moved += 1;
                *xi = c;
            }
        }
        moved
    }

    pub fn contains_scaled(&self, x: &[f64]) -> bool {
        x.iter().zip(self.scaled_bounds()).all(|(xi, (lo, hi))| *xi >= lo && *xi <= hi)
    }
}

/// A forward model on scaled coordinates, as seen by the solvers.
pub trait ForwardModel: Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn admissible(&self, x: &[f64]) -> bool;
    fn scaled_bounds(&self) -> Vec<(f64, f64)>;
}

/// The rotor forward map restricted to an unknown set.
pub struct RotorProblem<'a> {
    pub ctx: &'a ForwardContext,
    pub spec: DataSetSpec,
    pub unknowns: &'a UnknownSet,
    /// Values of the known constants.
    pub base: MaterialParams,
}

impl RotorProblem<'_> {
    pub fn params(&self, x: &[f64]) -> MaterialParams {
        self.unknowns.from_scaled(x, &self.base)
    }
}

impl ForwardModel for RotorProblem<'_> {
    fn dim(&self) -> usize {
        self.unknowns.len()
    }

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        forward_map(&self.params(x), self.spec, self.ctx)
    }

    fn admissible(&self, x: &[f64]) -> bool {
        x.iter().all(|v| v.is_finite()) && check_admissible(&self.params(x)).admissible
    }

    fn scaled_bounds(&self) -> Vec<(f64, f64)> {
        self.unknowns.scaled_bounds()
    }
}

//! Elasticity tensors for isotropic and transversely isotropic materials.
//!
//! Voigt ordering is `(11, 22, 33, 23, 13, 12)` and the shear entries are
//! *tensor* strains, i.e. `ε̄₄ = ε₂₃` without the engineering factor 2. With
//! that convention the shear diagonal of the compliance reads `1/(2G)` and the
//! strain energy density is `½ ε̄ᵀ W C̄ ε̄` with `W = diag(1, 1, 1, 2, 2, 2)`.
//!
//! The material symmetry axis is `z`; the plane of isotropy is `xy`.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the condition number accepted by [`stiffness_from_compliance`].
pub const DEFAULT_CONDITION_CAP: f64 = 1e14;

/// Relative slack applied to the admissibility inequalities.
pub const ADMISSIBILITY_SLACK: f64 = 1e-12;

/// Relative tolerance below which the denominator of `K(p)` counts as zero.
const DEGENERATE_TOL: f64 = 1e-13;

/// Weights turning a tensor-strain Voigt product into the full contraction `σ:ε`.
pub const VOIGT_WEIGHTS: [f64; 6] = [1.0, 1.0, 1.0, 2.0, 2.0, 2.0];

/// Voigt index pairs, in storage order.
pub const VOIGT_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsotropicMaterial {
    /// Young's modulus [Pa].
    pub youngs_modulus: f64,
    /// Poisson ratio.
    pub poisson_ratio: f64,
    /// Mass density [kg/m³].
    pub density: f64,
}

impl IsotropicMaterial {
    pub fn new(youngs_modulus: f64, poisson_ratio: f64, density: f64) -> Result<Self> {
        let m = Self {
            youngs_modulus,
            poisson_ratio,
            density,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.youngs_modulus > 0.0 && self.youngs_modulus.is_finite()) {
            return Err(Error::InvalidMaterial(format!(
                "Young's modulus must be positive, got {}",
                self.youngs_modulus
            )));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::InvalidMaterial(format!(
                "density must be positive, got {}",
                self.density
            )));
        }
        if !(self.poisson_ratio > -1.0 && self.poisson_ratio < 0.5) {
            return Err(Error::InvalidMaterial(format!(
                "Poisson ratio must lie in (-1, 0.5), got {}",
                self.poisson_ratio
            )));
        }
        Ok(())
    }

    /// Shear modulus `G = E / (2(1+ν))`.
    pub fn shear_modulus(&self) -> f64 {
        self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))
    }

    /// Lamé's first parameter `λ = E ν / ((1−2ν)(1+ν))`.
    pub fn lame_lambda(&self) -> f64 {
        let nu = self.poisson_ratio;
        self.youngs_modulus / (1.0 - 2.0 * nu) * nu / (1.0 + nu)
    }

    /// The transversely isotropic parameter vector describing the same material.
    pub fn as_transverse(&self) -> MaterialParams {
        MaterialParams::isotropic(self.youngs_modulus, self.poisson_ratio)
    }
}

/// Index of one of the five transversely isotropic constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Param {
    #[serde(rename = "Ex")]
    Ex,
    #[serde(rename = "Ez")]
    Ez,
    #[serde(rename = "Gxy")]
    Gxy,
    #[serde(rename = "Gxz")]
    Gxz,
    #[serde(rename = "nu")]
    NuXz,
}

impl Param {
    pub const ALL: [Param; 5] = [Param::Ex, Param::Ez, Param::Gxy, Param::Gxz, Param::NuXz];

    pub fn index(self) -> usize {
        match self {
            Param::Ex => 0,
            Param::Ez => 1,
            Param::Gxy => 2,
            Param::Gxz => 3,
            Param::NuXz => 4,
        }
    }

    /// Moduli are positive and live on a log scale; the Poisson ratio does not.
    pub fn is_modulus(self) -> bool {
        !matches!(self, Param::NuXz)
    }

    pub fn label(self) -> &'static str {
        match self {
            Param::Ex => "E_x",
            Param::Ez => "E_z",
            Param::Gxy => "G_xy",
            Param::Gxz => "G_xz",
            Param::NuXz => "nu_xz",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "").as_str() {
            "ex" => Ok(Param::Ex),
            "ez" => Ok(Param::Ez),
            "gxy" => Ok(Param::Gxy),
            "gxz" => Ok(Param::Gxz),
            "nu" | "nuxz" => Ok(Param::NuXz),
            other => Err(Error::Config(format!("unknown parameter name '{other}'"))),
        }
    }
}

/// The five elastic constants `[E_x, E_z, G_xy, G_xz, ν_xz]` of a transversely
/// isotropic material. `ν_zx` is implied by `ν_zx / E_x = ν_xz / E_z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub ex: f64,
    pub ez: f64,
    pub gxy: f64,
    pub gxz: f64,
    pub nu_xz: f64,
}

impl MaterialParams {
    pub fn new(ex: f64, ez: f64, gxy: f64, gxz: f64, nu_xz: f64) -> Self {
        Self {
            ex,
            ez,
            gxy,
            gxz,
            nu_xz,
        }
    }

    /// Reference constants used throughout the experiments [Pa, Pa, Pa, Pa, -].
    pub fn reference() -> Self {
        Self::new(2e11, 2e8, 7.6923e10, 5e8, 0.3)
    }

    /// Isotropic limit: `E_x = E_z = E`, `G_xy = G_xz = E/(2(1+ν))`, `ν_xz = ν`.
    pub fn isotropic(e: f64, nu: f64) -> Self {
        let g = e / (2.0 * (1.0 + nu));
        Self::new(e, e, g, g, nu)
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.ex, self.ez, self.gxy, self.gxz, self.nu_xz]
    }

    pub fn get(&self, p: Param) -> f64 {
        self.to_array()[p.index()]
    }

    pub fn with(&self, p: Param, value: f64) -> Self {
        let mut a = self.to_array();
        a[p.index()] = value;
        Self::from_array(a)
    }

    /// `ν_zx` from the symmetry relation.
    pub fn nu_zx(&self) -> f64 {
        self.nu_xz * self.ex / self.ez
    }

    fn check_positive(&self) -> Result<()> {
        for p in [Param::Ex, Param::Ez, Param::Gxy, Param::Gxz] {
            let v = self.get(p);
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidMaterial(format!(
                    "{} must be positive, got {v}",
                    p.label()
                )));
            }
        }
        if !self.nu_xz.is_finite() {
            return Err(Error::InvalidMaterial("nu_xz is not finite".into()));
        }
        Ok(())
    }

    /// `K(p) = G_xy / (E_x² − 4 G_xy (E_x − ν_xz² E_z))`.
    pub fn k_factor(&self) -> Result<f64> {
        let den = self.k_denominator();
        let scale = self.ex * self.ex + 4.0 * self.gxy * (self.ex + self.nu_xz.powi(2) * self.ez);
        if den.abs() <= DEGENERATE_TOL * scale {
            return Err(Error::DegenerateTensor(den.abs()));
        }
        Ok(self.gxy / den)
    }

    fn k_denominator(&self) -> f64 {
        self.ex * self.ex - 4.0 * self.gxy * (self.ex - self.nu_xz * self.nu_xz * self.ez)
    }
}

/// A symmetric 6×6 matrix in the tensor-strain Voigt convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voigt6Matrix(pub Matrix6<f64>);

impl Voigt6Matrix {
    pub fn identity() -> Self {
        Self(Matrix6::identity())
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let scale = self.0.amax().max(f64::MIN_POSITIVE);
        (self.0 - self.0.transpose()).amax() <= rel_tol * scale
    }

    pub fn eigenvalues(&self) -> [f64; 6] {
        let e = SymmetricEigen::new(self.0).eigenvalues;
        let mut v = [0.0; 6];
        v.copy_from_slice(e.as_slice());
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn is_positive_definite(&self) -> bool {
        self.0.cholesky().is_some()
    }

    /// Largest entrywise difference relative to the largest entry of `other`.
    pub fn max_relative_deviation(&self, other: &Self) -> f64 {
        let scale = other.0.amax().max(f64::MIN_POSITIVE);
        (self.0 - other.0).amax() / scale
    }

    /// Largest entrywise deviation, each entry measured relative to its own
    /// magnitude (absolute below `floor` times the largest entry).
    pub fn max_entrywise_relative_deviation(&self, other: &Self, floor: f64) -> f64 {
        let scale = other.0.amax().max(f64::MIN_POSITIVE);
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs() / b.abs().max(floor * scale))
            .fold(0.0, f64::max)
    }

    pub fn apply(&self, v: &[f64; 6]) -> [f64; 6] {
        let mut out = [0.0; 6];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..6).map(|j| self.0[(i, j)] * v[j]).sum();
        }
        out
    }
}

/// Flattens a symmetric 3×3 tensor into Voigt order (no shear factor).
pub fn to_voigt(t: &Matrix3<f64>) -> [f64; 6] {
    let mut v = [0.0; 6];
    for (k, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
        v[k] = 0.5 * (t[(i, j)] + t[(j, i)]);
    }
    v
}

pub fn from_voigt(v: &[f64; 6]) -> Matrix3<f64> {
    let mut t = Matrix3::zeros();
    for (k, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
        t[(i, j)] = v[k];
        t[(j, i)] = v[k];
    }
    t
}

pub fn compliance_isotropic(m: &IsotropicMaterial) -> Result<Voigt6Matrix> {
    m.validate()?;
    let e = m.youngs_modulus;
    let nu = m.poisson_ratio;
    let mut s = Matrix6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            s[(i, j)] = if i == j { 1.0 } else { -nu };
        }
        s[(i + 3, i + 3)] = 1.0 + nu;
    }
    Ok(Voigt6Matrix(s / e))
}

/// Closed-form isotropic stiffness: `λ + 2G` on the normal diagonal, `λ` off
/// it, `2G` on the shear diagonal.
pub fn stiffness_isotropic(m: &IsotropicMaterial) -> Result<Voigt6Matrix> {
    m.validate()?;
    let g = m.shear_modulus();
    let lambda = m.lame_lambda();
    let mut c = Matrix6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            c[(i, j)] = lambda;
        }
        c[(i, i)] += 2.0 * g;
        c[(i + 3, i + 3)] = 2.0 * g;
    }
    Ok(Voigt6Matrix(c))
}

/// Compliance of a transversely isotropic material with symmetry axis `z`.
///
/// The normal-normal coupling between the isotropy plane and the axis is
/// `−ν_xz / E_x`, the form whose inverse is the closed-form stiffness of
/// [`stiffness_transversely_isotropic`] and whose positive definiteness is
/// characterised by [`check_admissible`].
pub fn compliance_transversely_isotropic(p: &MaterialParams) -> Result<Voigt6Matrix> {
    p.check_positive()?;
    let in_plane = 1.0 / p.ex - 1.0 / (2.0 * p.gxy);
    let coupling = -p.nu_xz / p.ex;
    let mut s = Matrix6::zeros();
    s[(0, 0)] = 1.0 / p.ex;
    s[(1, 1)] = 1.0 / p.ex;
    s[(2, 2)] = 1.0 / p.ez;
    s[(0, 1)] = in_plane;
    s[(1, 0)] = in_plane;
    s[(0, 2)] = coupling;
    s[(1, 2)] = coupling;
    s[(2, 0)] = coupling;
    s[(2, 1)] = coupling;
    s[(3, 3)] = 1.0 / (2.0 * p.gxz);
    s[(4, 4)] = 1.0 / (2.0 * p.gxz);
    s[(5, 5)] = 1.0 / (2.0 * p.gxy);
    Ok(Voigt6Matrix(s))
}

/// Numerical inverse of a compliance matrix, refusing matrices whose
/// condition number exceeds `condition_cap`.
pub fn stiffness_from_compliance(s: &Voigt6Matrix, condition_cap: f64) -> Result<Voigt6Matrix> {
    let eig = s.eigenvalues();
    let max = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= condition_cap) {
        return Err(Error::SingularCompliance {
            condition,
            cap: condition_cap,
        });
    }
    let inv = s.0.try_inverse().ok_or(Error::SingularCompliance {
        condition,
        cap: condition_cap,
    })?;
    // Inversion leaves asymmetry at rounding level.
    Ok(Voigt6Matrix((inv + inv.transpose()) * 0.5))
}

/// The four independent normal-block stiffness coefficients
/// `(C₁₁, C₁₂, C₁₃, C₃₃)` from the closed-form inverse of the upper block.
fn normal_block(p: &MaterialParams) -> Result<(f64, f64, f64, f64)> {
    let k = p.k_factor()?;
    let (ex, ez, g, nu) = (p.ex, p.ez, p.gxy, p.nu_xz);
    let c11 = k * 4.0 * g * (nu * nu * ez - ex);
    let c12 = k * (-4.0 * g * nu * nu * ez + 4.0 * g * ex - 2.0 * ex * ex);
    let c13 = k * (-2.0 * nu * ex * ez);
    let c33 = k * (ex * ex / g * ez - 4.0 * ex * ez);
    Ok((c11, c12, c13, c33))
}

/// Closed-form stiffness assembled from the inverse blocks of the compliance.
pub fn stiffness_transversely_isotropic(p: &MaterialParams) -> Result<Voigt6Matrix> {
    p.check_positive()?;
    let (c11, c12, c13, c33) = normal_block(p)?;
    let mut c = Matrix6::zeros();
    c[(0, 0)] = c11;
    c[(1, 1)] = c11;
    c[(0, 1)] = c12;
    c[(1, 0)] = c12;
    c[(0, 2)] = c13;
    c[(2, 0)] = c13;
    c[(1, 2)] = c13;
    c[(2, 1)] = c13;
    c[(2, 2)] = c33;
    c[(3, 3)] = 2.0 * p.gxz;
    c[(4, 4)] = 2.0 * p.gxz;
    c[(5, 5)] = 2.0 * p.gxy;
    Ok(Voigt6Matrix(c))
}

/// Either kind of material handled by the stress/strain maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elasticity {
    Isotropic(IsotropicMaterial),
    Transverse(MaterialParams),
}

impl Elasticity {
    pub fn stiffness(&self) -> Result<Voigt6Matrix> {
        match self {
            Elasticity::Isotropic(m) => stiffness_isotropic(m),
            Elasticity::Transverse(p) => stiffness_transversely_isotropic(p),
        }
    }

    pub fn compliance(&self) -> Result<Voigt6Matrix> {
        match self {
            Elasticity::Isotropic(m) => compliance_isotropic(m),
            Elasticity::Transverse(p) => compliance_transversely_isotropic(p),
        }
    }
}

/// Stiffness-form Hooke's law written tensorially.
///
/// Isotropic: `σ = 2Gε + λ tr(ε) I`. Transversely isotropic: in-plane
/// normal/shear components follow `2G_xy ε + (C₁₂ tr ε + (C₁₃ − C₁₂) ε₃₃) I₂`,
/// the axial normal stress is `C₁₃ tr ε + (C₃₃ − C₁₃) ε₃₃` and the
/// out-of-plane shears are `2G_xz ε_{α3}`.
pub fn stress_from_strain(material: &Elasticity, eps: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let eps = (eps + eps.transpose()) * 0.5;
    let tr = eps.trace();
    match material {
        Elasticity::Isotropic(m) => {
            m.validate()?;
            Ok(eps * (2.0 * m.shear_modulus()) + Matrix3::identity() * (m.lame_lambda() * tr))
        }
        Elasticity::Transverse(p) => {
            p.check_positive()?;
            let (_, c12, c13, c33) = normal_block(p)?;
            let mut s = Matrix3::zeros();
            let iso = c12 * tr + (c13 - c12) * eps[(2, 2)];
            for a in 0..2 {
                for b in 0..2 {
                    s[(a, b)] = 2.0 * p.gxy * eps[(a, b)];
                }
                s[(a, a)] += iso;
                s[(a, 2)] = 2.0 * p.gxz * eps[(a, 2)];
                s[(2, a)] = s[(a, 2)];
            }
            s[(2, 2)] = c13 * tr + (c33 - c13) * eps[(2, 2)];
            Ok(s)
        }
    }
}

/// Compliance-form Hooke's law written tensorially.
///
/// Isotropic: `ε = (σ − λ/(3λ+2G) tr(σ) I) / (2G)`. Transversely isotropic:
/// the block-diagonal split `σ_D` of the stress (in-plane 2×2 block and the
/// axial entry) carries the in-plane and axial compliances while the
/// off-block shears see `1/(2G_xz)`.
pub fn strain_from_stress(material: &Elasticity, sigma: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let sigma = (sigma + sigma.transpose()) * 0.5;
    let tr = sigma.trace();
    match material {
        Elasticity::Isotropic(m) => {
            m.validate()?;
            let g = m.shear_modulus();
            let lambda = m.lame_lambda();
            Ok((sigma - Matrix3::identity() * (lambda / (3.0 * lambda + 2.0 * g) * tr)) / (2.0 * g))
        }
        Elasticity::Transverse(p) => {
            p.check_positive()?;
            let (ex, ez, g, gz, nu) = (p.ex, p.ez, p.gxy, p.gxz, p.nu_xz);
            let mut sigma_d = Matrix3::zeros();
            sigma_d
                .fixed_view_mut::<2, 2>(0, 0)
                .copy_from(&sigma.fixed_view::<2, 2>(0, 0));
            sigma_d[(2, 2)] = sigma[(2, 2)];
            let scale = Matrix3::from_diagonal(&nalgebra::Vector3::new(
                1.0 / g,
                1.0 / g,
                2.0 * (ex + ez * nu) / (ex * ez),
            ));
            let plane = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, 0.0));
            let trace_coeff = Matrix3::from_diagonal(&nalgebra::Vector3::new(
                1.0 / (2.0 * g) - 1.0 / ex,
                1.0 / (2.0 * g) - 1.0 / ex,
                nu / ex,
            ));
            let eps = scale * sigma_d * 0.5 + (sigma - sigma_d) / (2.0 * gz)
                - plane * (sigma[(2, 2)] * ((1.0 + nu) / ex - 1.0 / (2.0 * g)))
                - trace_coeff * tr;
            Ok(eps)
        }
    }
}

/// Outcome of [`check_admissible`].
#[derive(Debug, Clone, PartialEq)]
pub struct Admissibility {
    pub admissible: bool,
    pub violations: Vec<String>,
}

/// Positive semidefiniteness constraints of the transversely isotropic
/// compliance:
///
/// ```text
/// E_x − ν_xz² E_z ≥ E_x |E_x/(2G_xy) − 1| + ν_xz² E_z
/// E_x − 4 G_xy ≤ 0
/// ```
///
/// plus positivity of the four moduli. Inequalities are non-strict with a
/// relative slack of [`ADMISSIBILITY_SLACK`].
pub fn check_admissible(p: &MaterialParams) -> Admissibility {
    let mut violations = Vec::new();
    for q in [Param::Ex, Param::Ez, Param::Gxy, Param::Gxz] {
        let v = p.get(q);
        if !(v > 0.0 && v.is_finite()) {
            violations.push(format!("{} = {v} is not positive", q.label()));
        }
    }
    if !p.nu_xz.is_finite() {
        violations.push("nu_xz is not finite".into());
    }
    if violations.is_empty() {
        let nu2ez = p.nu_xz * p.nu_xz * p.ez;
        let lhs = p.ex - nu2ez;
        let rhs = p.ex * (p.ex / (2.0 * p.gxy) - 1.0).abs() + nu2ez;
        if lhs < rhs - ADMISSIBILITY_SLACK * lhs.abs().max(rhs.abs()) {
            violations.push(format!(
                "E_x - nu^2 E_z >= E_x |E_x/(2 G_xy) - 1| + nu^2 E_z violated ({lhs:.6e} < {rhs:.6e})"
            ));
        }
        if p.ex > 4.0 * p.gxy * (1.0 + ADMISSIBILITY_SLACK) {
            violations.push(format!(
                "E_x - 4 G_xy <= 0 violated (E_x = {:.6e} > 4 G_xy = {:.6e})",
                p.ex,
                4.0 * p.gxy
            ));
        }
    }
    Admissibility {
        admissible: violations.is_empty(),
        violations,
    }
}

/// The closed interval of `E_x` values satisfying [`check_admissible`] with
/// the other four constants held fixed.
///
/// Below `2G_xy` the first constraint reduces to `E_x² ≥ 4 G_xy ν² E_z`;
/// above it to `E_x² − 4G_xy E_x + 4 G_xy ν² E_z ≤ 0`. The second constraint
/// caps `E_x` at `4G_xy`.
pub fn admissible_interval_ex(p: &MaterialParams) -> Result<(f64, f64)> {
    p.with(Param::Ex, 1.0).check_positive()?;
    let g = p.gxy;
    let nu2ez = p.nu_xz * p.nu_xz * p.ez;
    let disc = g * (g - nu2ez);
    if disc < 0.0 {
        return Err(Error::EmptyInterval(format!(
            "nu_xz^2 E_z = {nu2ez:.4e} exceeds G_xy = {g:.4e}"
        )));
    }
    let lo = 2.0 * (g * nu2ez).sqrt();
    let hi = (2.0 * g + 2.0 * disc.sqrt()).min(4.0 * g);
    if lo > hi {
        return Err(Error::EmptyInterval(format!("lower end {lo:.4e} above upper end {hi:.4e}")));
    }
    Ok((lo, hi))
}

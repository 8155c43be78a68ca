//! Lowest eigenpairs of the generalized problem `K u = Λ M u`.
//!
//! Small systems are reduced with a Cholesky factor of `M` and solved densely.
//! Larger ones use shift-invert block Lanczos on the banded matrices with a
//! negative shift, so that `K − σM` is positive definite even though `K` is
//! singular for a free-free structure.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::band::SymBandMatrix;
use crate::error::{Error, Result};
use crate::fem::AssembledSystem;

/// An eigenvalue is rigid when it is below this fraction of the first
/// eigenvalue that follows the rigid cluster.
pub const RIGID_GAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EigSettings {
    /// Systems with at most this many DOFs are solved densely.
    pub dense_threshold: usize,
    /// `σ = −shift_factor · trace(K) / trace(M)`.
    pub shift_factor: f64,
    pub block_size: usize,
    /// Residual tolerance relative to `max(|Λ|, |σ|)·‖M u‖`.
    pub tolerance: f64,
    pub max_basis: usize,
    pub seed: u64,
}

impl Default for EigSettings {
    fn default() -> Self {
        Self {
            dense_threshold: 150,
            shift_factor: 1e-6,
            block_size: 6,
            tolerance: 1e-10,
            max_basis: 600,
            seed: 0x5eed,
        }
    }
}

impl EigSettings {
    pub fn dense() -> Self {
        Self {
            dense_threshold: usize::MAX,
            ..Self::default()
        }
    }

    pub fn iterative() -> Self {
        Self {
            dense_threshold: 0,
            ..Self::default()
        }
    }
}

/// Ascending eigenvalues with `M`-orthonormal eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `f = √Λ / 2π` in Hz; negative round-off values map to zero.
    pub fn frequencies_hz(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|l| l.max(0.0).sqrt() / (2.0 * std::f64::consts::PI))
            .collect()
    }

    /// Size of the leading cluster of near-zero eigenvalues: the largest `k`
    /// such that `|Λ_i| < gap·Λ_{k+1}` for every `i ≤ k`.
    pub fn rigid_count(&self, gap: f64) -> usize {
        let l = &self.eigenvalues;
        let mut best = 0;
        let mut head = 0.0f64;
        for k in 1..l.len() {
            head = head.max(l[k - 1].abs());
            if l[k] > 0.0 && head < gap * l[k] {
                best = k;
            }
        }
        best
    }

    /// `max_i ‖K u_i − Λ_i M u_i‖ / (‖K‖ ‖u_i‖)` with the infinity norm of `K`.
    pub fn max_relative_residual(&self, sys: &AssembledSystem) -> f64 {
        let kn = sys.stiffness.norm_inf();
        self.eigenvalues
            .iter()
            .zip(&self.eigenvectors)
            .map(|(&l, u)| {
                let ku = sys.stiffness.mul_vec_alloc(u);
                let mu = sys.mass.mul_vec_alloc(u);
                let r = norm(&ku.iter().zip(&mu).map(|(a, b)| a - l * b).collect::<Vec<_>>());
                r / (kn * norm(u))
            })
            .fold(0.0, f64::max)
    }

    /// `max_ij |u_iᵀ M u_j − δ_ij|`.
    pub fn max_orthonormality_error(&self, mass: &SymBandMatrix) -> f64 {
        let mu: Vec<Vec<f64>> = self.eigenvectors.iter().map(|u| mass.mul_vec_alloc(u)).collect();
        let mut worst = 0.0f64;
        for (i, ui) in self.eigenvectors.iter().enumerate() {
            for (j, muj) in mu.iter().enumerate() {
                let d = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(ui, muj) - d).abs());
            }
        }
        worst
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn fix_sign(u: &mut [f64]) {
    let mut imax = 0;
    for (i, v) in u.iter().enumerate() {
        if v.abs() > u[imax].abs() {
            imax = i;
        }
    }
    if u.get(imax).is_some_and(|v| *v < 0.0) {
        u.iter_mut().for_each(|v| *v = -*v);
    }
}

/// The `m` smallest eigenpairs of `sys`.
pub fn smallest_eigenpairs(sys: &AssembledSystem, m: usize, settings: &EigSettings) -> Result<Spectrum> {
    let n = sys.dim();
    if m > n || m == 0 {
        return Err(Error::DimensionTooSmall {
            requested: m,
            dimension: n,
        });
    }
    let mut spec = if n <= settings.dense_threshold {
        dense_eigenpairs(&sys.stiffness, &sys.mass, m)?
    } else {
        block_lanczos(&sys.stiffness, &sys.mass, m, settings)?
    };
    spec.eigenvectors.iter_mut().for_each(|u| fix_sign(u));
    Ok(spec)
}

fn dense_eigenpairs(k: &SymBandMatrix, mass: &SymBandMatrix, m: usize) -> Result<Spectrum> {
    let kd = k.to_dense();
    let chol = mass
        .to_dense()
        .cholesky()
        .ok_or_else(|| Error::ConvergenceFailure("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let lk = l
        .solve_lower_triangular(&kd)
        .ok_or_else(|| Error::ConvergenceFailure("singular mass factor".into()))?;
    let a = l
        .solve_lower_triangular(&lk.transpose())
        .ok_or_else(|| Error::ConvergenceFailure("singular mass factor".into()))?;
    let a = (&a + a.transpose()) * 0.5;
    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lt = l.transpose();
    let mut values = Vec::with_capacity(m);
    let mut vectors = Vec::with_capacity(m);
    for &i in order.iter().take(m) {
        let y: DVector<f64> = eig.eigenvectors.column(i).into_owned();
        let u = lt
            .solve_upper_triangular(&y)
            .ok_or_else(|| Error::ConvergenceFailure("singular mass factor".into()))?;
        values.push(eig.eigenvalues[i]);
        vectors.push(u.as_slice().to_vec());
    }
    Ok(Spectrum {
        eigenvalues: values,
        eigenvectors: vectors,
    })
}

/// `M`-orthonormal Krylov basis with cached `M v` and `K v`.
struct Basis {
    v: Vec<Vec<f64>>,
    mv: Vec<Vec<f64>>,
    kv: Vec<Vec<f64>>,
}

impl Basis {
    /// Two passes of classical Gram–Schmidt in the `M` inner product.
    /// Returns the `M`-norm of what is left together with `M w`.
    fn orthogonalize(&self, w: &mut [f64], mass: &SymBandMatrix) -> (f64, Vec<f64>) {
        for _ in 0..2 {
            let coeffs: Vec<f64> = self.mv.iter().map(|mv| dot(mv, w)).collect();
            for (c, v) in coeffs.iter().zip(&self.v) {
                w.iter_mut().zip(v).for_each(|(a, b)| *a -= c * b);
            }
        }
        let mw = mass.mul_vec_alloc(w);
        (dot(w, &mw).max(0.0).sqrt(), mw)
    }

    /// Appends `w` if it has a component outside the span. Returns whether
    /// it was accepted.
    fn push(&mut self, mut w: Vec<f64>, k: &SymBandMatrix, mass: &SymBandMatrix) -> bool {
        let before = mass.quad_form(&w).max(0.0).sqrt();
        let (after, mut mw) = self.orthogonalize(&mut w, mass);
        if !(after > 1e-10 * before) || after == 0.0 {
            return false;
        }
        let s = 1.0 / after;
        w.iter_mut().for_each(|x| *x *= s);
        mw.iter_mut().for_each(|x| *x *= s);
        self.kv.push(k.mul_vec_alloc(&w));
        self.v.push(w);
        self.mv.push(mw);
        true
    }

    fn len(&self) -> usize {
        self.v.len()
    }
}

fn block_lanczos(k: &SymBandMatrix, mass: &SymBandMatrix, m: usize, s: &EigSettings) -> Result<Spectrum> {
    let n = k.dim();
    let b = s.block_size.max(1);
    let sigma = -s.shift_factor * k.trace() / mass.trace();
    let mut shifted = k.clone();
    shifted.axpy(-sigma, mass);
    let factor = shifted
        .cholesky()
        .ok_or_else(|| Error::ConvergenceFailure(format!("K − σM not positive definite at σ = {sigma:.3e}")))?;
    let knorm = k.norm_inf();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let random = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(rng)).collect() };

    let mut basis = Basis {
        v: Vec::new(),
        mv: Vec::new(),
        kv: Vec::new(),
    };
    let mut block: Vec<usize> = Vec::new();
    while block.len() < b.min(n) {
        if basis.push(random(&mut rng), k, mass) {
            block.push(basis.len() - 1);
        }
    }
    let limit = s.max_basis.min(n);
    let mut projected = DMatrix::<f64>::zeros(0, 0);

    loop {
        let size = basis.len();
        let old = projected.nrows();
        let mut grown = DMatrix::<f64>::zeros(size, size);
        grown.view_mut((0, 0), (old, old)).copy_from(&projected);
        for j in old..size {
            for i in 0..=j {
                let v = dot(&basis.v[i], &basis.kv[j]);
                grown[(i, j)] = v;
                grown[(j, i)] = v;
            }
        }
        projected = grown;

        if size >= m {
            if let Some(spec) = rayleigh_ritz(&projected, &basis, m, sigma, knorm, s.tolerance, size == n) {
                return Ok(spec);
            }
        }
        if size >= limit {
            return Err(Error::ConvergenceFailure(format!(
                "{m} eigenpairs not converged with a basis of {size} vectors"
            )));
        }

        let mut next = Vec::with_capacity(block.len());
        for &j in &block {
            let mut w = basis.mv[j].clone();
            factor.solve_in_place(&mut w);
            if basis.len() < limit && basis.push(w, k, mass) {
                next.push(basis.len() - 1);
            }
        }
        // a deflated direction is replaced by a fresh random one
        let mut attempts = 0;
        while next.len() < block.len() && basis.len() < limit && attempts < 4 * b {
            attempts += 1;
            if basis.push(random(&mut rng), k, mass) {
                next.push(basis.len() - 1);
            }
        }
        if next.is_empty() && basis.len() < limit {
            return Err(Error::ConvergenceFailure("Krylov space exhausted".into()));
        }
        block = next;
    }
}

/// Ritz pairs from the current basis; `None` while any of the lowest `m`
/// residuals is above tolerance.
fn rayleigh_ritz(
    projected: &DMatrix<f64>,
    basis: &Basis,
    m: usize,
    sigma: f64,
    knorm: f64,
    tol: f64,
    complete: bool,
) -> Option<Spectrum> {
    let n = basis.v[0].len();
    let eig = projected.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut values = Vec::with_capacity(m);
    let mut vectors = Vec::with_capacity(m);
    for &c in order.iter().take(m) {
        let theta = eig.eigenvalues[c];
        let y = eig.eigenvectors.column(c);
        let mut u = vec![0.0; n];
        let mut r = vec![0.0; n];
        for (q, &yq) in y.iter().enumerate() {
            let (v, kv, mv) = (&basis.v[q], &basis.kv[q], &basis.mv[q]);
            for i in 0..n {
                u[i] += yq * v[i];
                r[i] += yq * (kv[i] - theta * mv[i]);
            }
        }
        if !complete {
            let mu_norm: f64 = norm(&basis_mass_apply(basis, y.as_slice()));
            let res = norm(&r);
            let bound = (tol * theta.abs().max(sigma.abs()) * mu_norm).max(1e-12 * knorm * norm(&u));
            if !(res <= bound) {
                return None;
            }
        }
        values.push(theta);
        vectors.push(u);
    }
    Some(Spectrum {
        eigenvalues: values,
        eigenvectors: vectors,
    })
}

fn basis_mass_apply(basis: &Basis, y: &[f64]) -> Vec<f64> {
    let n = basis.v[0].len();
    let mut out = vec![0.0; n];
    for (yq, mv) in y.iter().zip(&basis.mv) {
        out.iter_mut().zip(mv).for_each(|(o, a)| *o += yq * a);
    }
    out
}

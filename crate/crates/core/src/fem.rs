//! Stiffness and mass assembly for 8-node trilinear hexahedra.
//!
//! Strains in the B-matrix are tensor strains (`ε₂₃ = ½(∂u₂/∂x₃ + ∂u₃/∂x₂)`),
//! matching the Voigt convention of [`crate::tensor`]. The element stiffness
//! is `∫ Bᵀ W C̄ B dV` with `W = diag(1,1,1,2,2,2)`.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, SMatrix};
use rayon::prelude::*;

use crate::band::SymBandMatrix;
use crate::error::{Error, Result};
use crate::mesh::{Region, RotorMesh};
use crate::tensor::{Elasticity, MaterialParams, Voigt6Matrix, VOIGT_WEIGHTS};

pub type ElementMatrix = SMatrix<f64, 24, 24>;

/// Shape functions and quadrature for the trilinear hexahedron.
pub mod hex8 {
    use nalgebra::Matrix3;

    pub const CORNER_SIGNS: [[f64; 3]; 8] = [
        [-1.0, -1.0, -1.0],
        [1.0, -1.0, -1.0],
        [1.0, 1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
        [1.0, -1.0, 1.0],
        [1.0, 1.0, 1.0],
        [-1.0, 1.0, 1.0],
    ];

    /// Gauss–Legendre points and weights on `[-1, 1]`.
    pub fn gauss_1d(order: usize) -> (Vec<f64>, Vec<f64>) {
        match order {
            1 => (vec![0.0], vec![2.0]),
            2 => {
                let a = 1.0 / 3f64.sqrt();
                (vec![-a, a], vec![1.0, 1.0])
            }
            3 => {
                let a = (0.6f64).sqrt();
                (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
            }
            _ => panic!("unsupported Gauss order {order}"),
        }
    }

    /// Tensor-product rule: `(ξ, weight)` pairs.
    pub fn gauss_3d(order: usize) -> Vec<([f64; 3], f64)> {
        let (pts, wts) = gauss_1d(order);
        let mut out = Vec::with_capacity(order.pow(3));
        for (k, &z) in pts.iter().enumerate() {
            for (j, &y) in pts.iter().enumerate() {
                for (i, &x) in pts.iter().enumerate() {
                    out.push(([x, y, z], wts[i] * wts[j] * wts[k]));
                }
            }
        }
        out
    }

    pub fn shape(xi: &[f64; 3]) -> [f64; 8] {
        let mut n = [0.0; 8];
        for (a, s) in CORNER_SIGNS.iter().enumerate() {
            n[a] = 0.125 * (1.0 + s[0] * xi[0]) * (1.0 + s[1] * xi[1]) * (1.0 + s[2] * xi[2]);
        }
        n
    }

    /// Derivatives of the shape functions with respect to `ξ`.
    pub fn shape_derivatives(xi: &[f64; 3]) -> [[f64; 3]; 8] {
        let mut d = [[0.0; 3]; 8];
        for (a, s) in CORNER_SIGNS.iter().enumerate() {
            let f = [1.0 + s[0] * xi[0], 1.0 + s[1] * xi[1], 1.0 + s[2] * xi[2]];
            d[a] = [
                0.125 * s[0] * f[1] * f[2],
                0.125 * s[1] * f[0] * f[2],
                0.125 * s[2] * f[0] * f[1],
            ];
        }
        d
    }

    /// `J[i][j] = ∂x_i/∂ξ_j`.
    pub fn jacobian(x: &[[f64; 3]; 8], d: &[[f64; 3]; 8]) -> Matrix3<f64> {
        let mut j = Matrix3::zeros();
        for a in 0..8 {
            for r in 0..3 {
                for c in 0..3 {
                    j[(r, c)] += x[a][r] * d[a][c];
                }
            }
        }
        j
    }

    /// Physical gradients of the shape functions and `det J` at `ξ`.
    pub fn gradients(x: &[[f64; 3]; 8], xi: &[f64; 3]) -> Option<([[f64; 3]; 8], f64)> {
        let d = shape_derivatives(xi);
        let j = jacobian(x, &d);
        let det = j.determinant();
        if !(det > 0.0) {
            return None;
        }
        let jinv_t = j.try_inverse()?.transpose();
        let mut g = [[0.0; 3]; 8];
        for a in 0..8 {
            let v = jinv_t * nalgebra::Vector3::new(d[a][0], d[a][1], d[a][2]);
            g[a] = [v[0], v[1], v[2]];
        }
        Some((g, det))
    }

    pub fn min_jacobian_det(x: &[[f64; 3]; 8]) -> f64 {
        gauss_3d(2)
            .iter()
            .map(|(xi, _)| jacobian(x, &shape_derivatives(xi)).determinant())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Strain-displacement matrix (tensor shear strains) for given gradients.
pub fn b_matrix(grad: &[[f64; 3]; 8]) -> SMatrix<f64, 6, 24> {
    let mut b = SMatrix::<f64, 6, 24>::zeros();
    for (a, g) in grad.iter().enumerate() {
        let c = 3 * a;
        b[(0, c)] = g[0];
        b[(1, c + 1)] = g[1];
        b[(2, c + 2)] = g[2];
        b[(3, c + 1)] = 0.5 * g[2];
        b[(3, c + 2)] = 0.5 * g[1];
        b[(4, c)] = 0.5 * g[2];
        b[(4, c + 2)] = 0.5 * g[0];
        b[(5, c)] = 0.5 * g[1];
        b[(5, c + 1)] = 0.5 * g[0];
    }
    b
}

/// Energy-conjugate material matrix `W C̄`. For the block-diagonal materials
/// used here it is symmetric; the symmetric part is taken regardless.
fn energy_matrix(c: &Voigt6Matrix) -> SMatrix<f64, 6, 6> {
    let mut d = *c.matrix();
    for i in 0..6 {
        for j in 0..6 {
            d[(i, j)] *= VOIGT_WEIGHTS[i];
        }
    }
    (d + d.transpose()) * 0.5
}

pub fn element_stiffness_with_order(
    x: &[[f64; 3]; 8],
    c: &Voigt6Matrix,
    order: usize,
) -> Result<ElementMatrix> {
    let d = energy_matrix(c);
    let mut k = ElementMatrix::zeros();
    for (xi, w) in hex8::gauss_3d(order) {
        let (g, det) = hex8::gradients(x, &xi).ok_or(Error::DegenerateElement {
            element: usize::MAX,
            det: hex8::min_jacobian_det(x),
        })?;
        let b = b_matrix(&g);
        k += b.transpose() * (d * b) * (det * w);
    }
    Ok((k + k.transpose()) * 0.5)
}

/// 24×24 element stiffness, 2×2×2 Gauss quadrature.
pub fn element_stiffness(x: &[[f64; 3]; 8], c: &Voigt6Matrix) -> Result<ElementMatrix> {
    element_stiffness_with_order(x, c, 2)
}

pub fn element_mass_with_order(x: &[[f64; 3]; 8], rho: f64, order: usize) -> Result<ElementMatrix> {
    let mut m = ElementMatrix::zeros();
    for (xi, w) in hex8::gauss_3d(order) {
        let d = hex8::shape_derivatives(&xi);
        let det = hex8::jacobian(x, &d).determinant();
        if !(det > 0.0) {
            return Err(Error::DegenerateElement {
                element: usize::MAX,
                det,
            });
        }
        let n = hex8::shape(&xi);
        for a in 0..8 {
            for b in 0..8 {
                let v = rho * n[a] * n[b] * det * w;
                for comp in 0..3 {
                    m[(3 * a + comp, 3 * b + comp)] += v;
                }
            }
        }
    }
    Ok(m)
}

/// 24×24 consistent mass matrix, 2×2×2 Gauss quadrature.
pub fn element_mass(x: &[[f64; 3]; 8], rho: f64) -> Result<ElementMatrix> {
    element_mass_with_order(x, rho, 2)
}

/// Elastic law and density of one region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionMaterial {
    pub elasticity: Elasticity,
    pub density: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaterialMap {
    pub regions: BTreeMap<Region, RegionMaterial>,
}

impl MaterialMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, region: Region, elasticity: Elasticity, density: f64) -> Self {
        self.regions.insert(region, RegionMaterial { elasticity, density });
        self
    }

    pub fn get(&self, region: Region) -> Result<&RegionMaterial> {
        self.regions
            .get(&region)
            .ok_or_else(|| Error::MissingMaterial(region.name().into()))
    }
}

/// Global stiffness and mass, 3 interleaved DOFs `(u_x, u_y, u_z)` per node.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub stiffness: SymBandMatrix,
    pub mass: SymBandMatrix,
}

impl AssembledSystem {
    pub fn dim(&self) -> usize {
        self.stiffness.dim()
    }

    pub fn dof(node: usize, component: usize) -> usize {
        3 * node + component
    }
}

fn scatter(target: &mut SymBandMatrix, conn: &[usize; 8], ke: &ElementMatrix) {
    for a in 0..8 {
        for ca in 0..3 {
            let i = 3 * conn[a] + ca;
            for b in 0..8 {
                for cb in 0..3 {
                    let j = 3 * conn[b] + cb;
                    if i >= j {
                        target.add(i, j, ke[(3 * a + ca, 3 * b + cb)]);
                    }
                }
            }
        }
    }
}

fn check_elements(mesh: &RotorMesh) -> Result<()> {
    for e in 0..mesh.n_elements() {
        let det = hex8::min_jacobian_det(&mesh.element_coords(e));
        if !(det > 0.0) {
            return Err(Error::DegenerateElement { element: e, det });
        }
    }
    Ok(())
}

/// Scatter-adds element stiffness and mass over the whole mesh.
pub fn assemble(mesh: &RotorMesh, materials: &MaterialMap) -> Result<AssembledSystem> {
    check_elements(mesh)?;
    let n = mesh.n_dofs();
    let kd = mesh.dof_bandwidth();
    let mut stiffnesses = BTreeMap::new();
    for r in mesh.region_set() {
        let m = materials.get(r)?;
        stiffnesses.insert(r, m.elasticity.stiffness()?);
    }
    let blocks: Vec<(ElementMatrix, ElementMatrix)> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let x = mesh.element_coords(e);
            let r = mesh.regions[e];
            let ke = element_stiffness(&x, &stiffnesses[&r])?;
            let me = element_mass(&x, materials.get(r)?.density)?;
            Ok((ke, me))
        })
        .collect::<Result<_>>()?;
    let mut k = SymBandMatrix::zeros(n, kd);
    let mut m = SymBandMatrix::zeros(n, kd);
    for (e, (ke, me)) in blocks.iter().enumerate() {
        scatter(&mut k, &mesh.elements[e], ke);
        scatter(&mut m, &mesh.elements[e], me);
    }
    Ok(AssembledSystem {
        stiffness: k,
        mass: m,
    })
}

/// Number of independent stiffness coefficients of a transversely isotropic
/// material: `C₁₁, C₁₂, C₁₃, C₃₃, C₄₄ = 2G_xz, C₆₆ = 2G_xy`.
pub const TRANSVERSE_BASIS: usize = 6;

fn transverse_basis_matrix(k: usize) -> Voigt6Matrix {
    let mut c = nalgebra::Matrix6::zeros();
    let entries: &[(usize, usize)] = match k {
        0 => &[(0, 0), (1, 1)],
        1 => &[(0, 1), (1, 0)],
        2 => &[(0, 2), (2, 0), (1, 2), (2, 1)],
        3 => &[(2, 2)],
        4 => &[(3, 3), (4, 4)],
        5 => &[(5, 5)],
        _ => unreachable!(),
    };
    for &(i, j) in entries {
        c[(i, j)] = 1.0;
    }
    Voigt6Matrix(c)
}

/// Coordinates of a transversely isotropic stiffness in the basis used by
/// [`ParametricAssembly`].
pub fn transverse_coefficients(p: &MaterialParams) -> Result<[f64; TRANSVERSE_BASIS]> {
    let c = crate::tensor::stiffness_transversely_isotropic(p)?;
    Ok([
        c.get(0, 0),
        c.get(0, 1),
        c.get(0, 2),
        c.get(2, 2),
        c.get(3, 3),
        c.get(5, 5),
    ])
}

/// Assembly split into a fixed part and a part linear in the core stiffness
/// coefficients, so the global stiffness for new core constants is a sum of
/// seven banded matrices instead of a full re-integration.
#[derive(Debug, Clone)]
pub struct ParametricAssembly {
    fixed_stiffness: SymBandMatrix,
    core_basis: Vec<SymBandMatrix>,
    pub mass: SymBandMatrix,
}

impl ParametricAssembly {
    /// `materials` must cover every region except [`Region::Core`], whose
    /// elastic law is supplied per call; `core_density` fixes its mass.
    pub fn new(mesh: &RotorMesh, materials: &MaterialMap, core_density: f64) -> Result<Self> {
        check_elements(mesh)?;
        if !(core_density > 0.0) {
            return Err(Error::InvalidMaterial(format!(
                "core density must be positive, got {core_density}"
            )));
        }
        let n = mesh.n_dofs();
        let kd = mesh.dof_bandwidth();
        let mut fixed = SymBandMatrix::zeros(n, kd);
        let mut mass = SymBandMatrix::zeros(n, kd);
        let mut basis: Vec<SymBandMatrix> =
            (0..TRANSVERSE_BASIS).map(|_| SymBandMatrix::zeros(n, kd)).collect();
        let unit: Vec<Voigt6Matrix> = (0..TRANSVERSE_BASIS).map(transverse_basis_matrix).collect();
        for e in 0..mesh.n_elements() {
            let x = mesh.element_coords(e);
            let conn = &mesh.elements[e];
            let r = mesh.regions[e];
            if r == Region::Core {
                for (b, c) in basis.iter_mut().zip(&unit) {
                    scatter(b, conn, &element_stiffness(&x, c)?);
                }
                scatter(&mut mass, conn, &element_mass(&x, core_density)?);
            } else {
                let m = materials.get(r)?;
                scatter(&mut fixed, conn, &element_stiffness(&x, &m.elasticity.stiffness()?)?);
                scatter(&mut mass, conn, &element_mass(&x, m.density)?);
            }
        }
        Ok(Self {
            fixed_stiffness: fixed,
            core_basis: basis,
            mass,
        })
    }

    pub fn dim(&self) -> usize {
        self.mass.dim()
    }

    pub fn stiffness(&self, core: &MaterialParams) -> Result<SymBandMatrix> {
        let coeffs = transverse_coefficients(core)?;
        let mut k = self.fixed_stiffness.clone();
        for (c, b) in coeffs.iter().zip(&self.core_basis) {
            k.axpy(*c, b);
        }
        Ok(k)
    }

    pub fn system(&self, core: &MaterialParams) -> Result<AssembledSystem> {
        Ok(AssembledSystem {
            stiffness: self.stiffness(core)?,
            mass: self.mass.clone(),
        })
    }
}

/// The six rigid-body displacement fields of the mesh (three translations,
/// three linearized rotations about the axes through the origin).
pub fn rigid_body_modes(mesh: &RotorMesh) -> Vec<Vec<f64>> {
    let n = mesh.n_dofs();
    let mut modes = vec![vec![0.0; n]; 6];
    for (a, p) in mesh.nodes.iter().enumerate() {
        for c in 0..3 {
            modes[c][3 * a + c] = 1.0;
        }
        let (x, y, z) = (p[0], p[1], p[2]);
        // ω × r for ω = e_x, e_y, e_z
        let rot = [[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]];
        for (k, r) in rot.iter().enumerate() {
            for c in 0..3 {
                modes[3 + k][3 * a + c] = r[c];
            }
        }
    }
    modes
}

/// Strain of a displacement field at a reference point of one element.
pub fn element_strain(x: &[[f64; 3]; 8], u: &[f64; 24], xi: &[f64; 3]) -> Option<Matrix3<f64>> {
    let (g, _) = hex8::gradients(x, xi)?;
    let mut h = Matrix3::zeros();
    for a in 0..8 {
        for i in 0..3 {
            for j in 0..3 {
                h[(i, j)] += u[3 * a + i] * g[a][j];
            }
        }
    }
    Some((h + h.transpose()) * 0.5)
}

//! Structured hexahedral mesh of a three-segment stepped rotor.
//!
//! The rotor axis is `z`. A left shaft, the core and a right shaft follow each
//! other along `z`; all cross-sections are squares centred on the axis. The
//! cross-section grid of the core contains the shaft grid as its central
//! block, so shaft and core meshes share nodes on the interface planes.
//!
//! Hexahedron corner order (reference coordinates `ξ, η, ζ`):
//!
//! ```text
//! 0 (-,-,-)  1 (+,-,-)  2 (+,+,-)  3 (-,+,-)
//! 4 (-,-,+)  5 (+,-,+)  6 (+,+,+)  7 (-,+,+)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::hex8;

/// Material region of an element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    Steel,
    Copper,
    Core,
}

impl Region {
    pub fn name(self) -> &'static str {
        match self {
            Region::Steel => "steel",
            Region::Copper => "copper",
            Region::Core => "core",
        }
    }
}

fn default_refinement() -> u32 {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotorGeometry {
    /// Segment lengths along the axis [m].
    pub l_shaft_left: f64,
    pub l_core: f64,
    pub l_shaft_right: f64,
    /// Half-widths of the square cross-sections [m].
    pub a_shaft: f64,
    pub a_core: f64,
    /// Elements across the shaft width.
    pub n_shaft: usize,
    /// Elements across the core overhang `a_core - a_shaft`, on each side.
    pub n_ring: usize,
    /// Elements along the axis per segment.
    pub n_z_left: usize,
    pub n_z_core: usize,
    pub n_z_right: usize,
    /// Uniform refinement level: every count is multiplied by `2^refinement`.
    #[serde(default = "default_refinement")]
    pub refinement: u32,
    /// Tag the outer element layer of the core as copper.
    #[serde(default)]
    pub copper_shell: bool,
    /// Continue the steel shaft through the core segment.
    #[serde(default)]
    pub shaft_through_core: bool,
}

impl RotorGeometry {
    /// Uniform prismatic bar: all three segments share the same section.
    pub fn uniform_bar(length: f64, half_width: f64, n_across: usize, n_along: usize) -> Self {
        let third = n_along / 3;
        Self {
            l_shaft_left: length / 3.0,
            l_core: length / 3.0,
            l_shaft_right: length / 3.0,
            a_shaft: half_width,
            a_core: half_width,
            n_shaft: n_across,
            n_ring: 0,
            n_z_left: third,
            n_z_core: n_along - 2 * third,
            n_z_right: third,
            refinement: 0,
            copper_shell: false,
            shaft_through_core: false,
        }
    }

    pub fn refined(&self, levels: u32) -> Self {
        let mut g = self.clone();
        g.refinement += levels;
        g
    }

    pub fn total_length(&self) -> f64 {
        self.l_shaft_left + self.l_core + self.l_shaft_right
    }

    fn factor(&self) -> usize {
        1usize << self.refinement
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGeometry(m));
        for (name, v) in [
            ("l_shaft_left", self.l_shaft_left),
            ("l_core", self.l_core),
            ("l_shaft_right", self.l_shaft_right),
            ("a_shaft", self.a_shaft),
            ("a_core", self.a_core),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.a_core < self.a_shaft {
            return bad(format!(
                "a_core ({}) must not be smaller than a_shaft ({})",
                self.a_core, self.a_shaft
            ));
        }
        for (name, v) in [
            ("n_shaft", self.n_shaft),
            ("n_z_left", self.n_z_left),
            ("n_z_core", self.n_z_core),
            ("n_z_right", self.n_z_right),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        let stepped = self.a_core > self.a_shaft;
        if stepped && self.n_ring == 0 {
            return bad("n_ring must be at least 1 when a_core > a_shaft".into());
        }
        if !stepped && self.n_ring != 0 {
            return bad("n_ring must be 0 when a_core == a_shaft".into());
        }
        if self.copper_shell && !stepped {
            return bad("copper_shell needs a core wider than the shaft".into());
        }
        if self.refinement > 8 {
            return bad(format!("refinement {} is unreasonably large", self.refinement));
        }
        Ok(())
    }

    /// Grid lines across the section (shared by `x` and `y`).
    fn section_lines(&self) -> Vec<f64> {
        let f = self.factor();
        let ring = self.n_ring * f;
        let shaft = self.n_shaft * f;
        let mut xs = Vec::with_capacity(2 * ring + shaft + 1);
        for k in 0..ring {
            xs.push(-self.a_core + (self.a_core - self.a_shaft) * k as f64 / ring as f64);
        }
        for k in 0..shaft {
            xs.push(-self.a_shaft + 2.0 * self.a_shaft * k as f64 / shaft as f64);
        }
        for k in 0..ring {
            xs.push(self.a_shaft + (self.a_core - self.a_shaft) * k as f64 / ring as f64);
        }
        xs.push(self.a_core);
        xs
    }

    fn axial_lines(&self) -> (Vec<f64>, [usize; 3]) {
        let f = self.factor();
        let counts = [self.n_z_left * f, self.n_z_core * f, self.n_z_right * f];
        let lengths = [self.l_shaft_left, self.l_core, self.l_shaft_right];
        let mut zs = vec![0.0];
        let mut start = 0.0;
        for (n, l) in counts.iter().zip(lengths) {
            for k in 1..=*n {
                zs.push(if k == *n { start + l } else { start + l * k as f64 / *n as f64 });
            }
            start += l;
        }
        (zs, counts)
    }
}

#[derive(Debug, Clone)]
pub struct RotorMesh {
    pub nodes: Vec<[f64; 3]>,
    pub elements: Vec<[usize; 8]>,
    pub regions: Vec<Region>,
    /// Axial grid-plane index of every node.
    pub node_layer: Vec<usize>,
    /// `z` coordinate of every axial grid plane.
    pub layer_z: Vec<f64>,
}

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

pub fn build_rotor_mesh(g: &RotorGeometry) -> Result<RotorMesh> {
    g.validate()?;
    let xs = g.section_lines();
    let (zs, counts) = g.axial_lines();
    let nx = xs.len() - 1;
    let nz = zs.len() - 1;
    let f = g.factor();
    let ring = g.n_ring * f;
    let central = ring..ring + g.n_shaft * f;

    let region_of = |i: usize, j: usize, k: usize| -> Option<Region> {
        let in_core = k >= counts[0] && k < counts[0] + counts[1];
        let is_central = central.contains(&i) && central.contains(&j);
        if !in_core {
            return is_central.then_some(Region::Steel);
        }
        if g.shaft_through_core && is_central {
            return Some(Region::Steel);
        }
        // one base-level cell layer, so refinement keeps the shell volume
        if g.copper_shell && (i < f || j < f || i >= nx - f || j >= nx - f) {
            return Some(Region::Copper);
        }
        Some(Region::Core)
    };

    let grid_id = |i: usize, j: usize, k: usize| (k * (nx + 1) + j) * (nx + 1) + i;
    let mut used = vec![false; (nx + 1) * (nx + 1) * (nz + 1)];
    let mut cells = Vec::new();
    for k in 0..nz {
        for j in 0..nx {
            for i in 0..nx {
                if let Some(r) = region_of(i, j, k) {
                    cells.push((i, j, k, r));
                    for c in CORNERS {
                        used[grid_id(i + c[0], j + c[1], k + c[2])] = true;
                    }
                }
            }
        }
    }

    let mut node_of = vec![usize::MAX; used.len()];
    let mut nodes = Vec::new();
    let mut node_layer = Vec::new();
    for k in 0..=nz {
        for j in 0..=nx {
            for i in 0..=nx {
                let gid = grid_id(i, j, k);
                if used[gid] {
                    node_of[gid] = nodes.len();
                    nodes.push([xs[i], xs[j], zs[k]]);
                    node_layer.push(k);
                }
            }
        }
    }

    let mut elements = Vec::with_capacity(cells.len());
    let mut regions = Vec::with_capacity(cells.len());
    for (i, j, k, r) in cells {
        let mut conn = [0usize; 8];
        for (a, c) in CORNERS.iter().enumerate() {
            conn[a] = node_of[grid_id(i + c[0], j + c[1], k + c[2])];
        }
        elements.push(conn);
        regions.push(r);
    }

    Ok(RotorMesh {
        nodes,
        elements,
        regions,
        node_layer,
        layer_z: zs,
    })
}

impl RotorMesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_dofs(&self) -> usize {
        3 * self.nodes.len()
    }

    pub fn element_coords(&self, e: usize) -> [[f64; 3]; 8] {
        let mut x = [[0.0; 3]; 8];
        for (a, &n) in self.elements[e].iter().enumerate() {
            x[a] = self.nodes[n];
        }
        x
    }

    /// Distinct region tags present, in order.
    pub fn region_set(&self) -> Vec<Region> {
        let mut r: Vec<Region> = self.regions.clone();
        r.sort();
        r.dedup();
        r
    }

    /// Half bandwidth of the DOF numbering (3 DOFs per node, interleaved).
    pub fn dof_bandwidth(&self) -> usize {
        self.elements
            .iter()
            .map(|conn| {
                let lo = conn.iter().min().unwrap();
                let hi = conn.iter().max().unwrap();
                3 * (hi - lo) + 2
            })
            .max()
            .unwrap_or(0)
    }

    /// Smallest Jacobian determinant over all elements and 2×2×2 Gauss points.
    pub fn min_jacobian_det(&self) -> f64 {
        (0..self.n_elements())
            .map(|e| hex8::min_jacobian_det(&self.element_coords(e)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Copy of the mesh with node `n` renamed to `perm[n]`.
    pub fn renumbered(&self, perm: &[usize]) -> RotorMesh {
        assert_eq!(perm.len(), self.n_nodes());
        let mut nodes = vec![[0.0; 3]; self.n_nodes()];
        let mut node_layer = vec![0; self.n_nodes()];
        for (old, &new) in perm.iter().enumerate() {
            nodes[new] = self.nodes[old];
            node_layer[new] = self.node_layer[old];
        }
        let elements = self
            .elements
            .iter()
            .map(|conn| {
                let mut c = *conn;
                c.iter_mut().for_each(|n| *n = perm[*n]);
                c
            })
            .collect();
        RotorMesh {
            nodes,
            elements,
            regions: self.regions.clone(),
            node_layer,
            layer_z: self.layer_z.clone(),
        }
    }

    /// Plain text dump: node block followed by element block.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "nodes {}", self.n_nodes());
        for p in &self.nodes {
            let _ = writeln!(s, "{:.9e} {:.9e} {:.9e}", p[0], p[1], p[2]);
        }
        let _ = writeln!(s, "elements {}", self.n_elements());
        for (conn, r) in self.elements.iter().zip(&self.regions) {
            let ids: Vec<String> = conn.iter().map(|n| n.to_string()).collect();
            let _ = writeln!(s, "{} {}", ids.join(" "), r.name());
        }
        s
    }
}

/// Element box volume (elements are axis-aligned boxes).
fn box_volume(x: &[[f64; 3]; 8]) -> f64 {
    (x[6][0] - x[0][0]) * (x[6][1] - x[0][1]) * (x[6][2] - x[0][2])
}

/// Volume per region [m³].
pub fn mesh_volume(mesh: &RotorMesh) -> BTreeMap<Region, f64> {
    let mut out = BTreeMap::new();
    for e in 0..mesh.n_elements() {
        *out.entry(mesh.regions[e]).or_insert(0.0) += box_volume(&mesh.element_coords(e));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube(n: usize) -> RotorGeometry {
        RotorGeometry {
            l_shaft_left: 1.0 / 3.0,
            l_core: 1.0 / 3.0,
            l_shaft_right: 1.0 / 3.0,
            a_shaft: 0.5,
            a_core: 0.5,
            n_shaft: n,
            n_ring: 0,
            n_z_left: 1,
            n_z_core: 1,
            n_z_right: 1,
            refinement: 0,
            copper_shell: false,
            shaft_through_core: false,
        }
    }

    pub(crate) fn reference() -> RotorGeometry {
        RotorGeometry {
            l_shaft_left: 0.2,
            l_core: 0.4,
            l_shaft_right: 0.2,
            a_shaft: 0.025,
            a_core: 0.075,
            n_shaft: 2,
            n_ring: 1,
            n_z_left: 2,
            n_z_core: 4,
            n_z_right: 2,
            refinement: 0,
            copper_shell: false,
            shaft_through_core: false,
        }
    }

    #[test]
    fn three_unit_segments() {
        let g = RotorGeometry {
            l_shaft_left: 1.0,
            l_core: 1.0,
            l_shaft_right: 1.0,
            a_shaft: 0.5,
            a_core: 0.5,
            n_shaft: 1,
            n_ring: 0,
            n_z_left: 1,
            n_z_core: 1,
            n_z_right: 1,
            refinement: 0,
            copper_shell: false,
            shaft_through_core: false,
        };
        let m = build_rotor_mesh(&g).unwrap();
        assert_eq!(m.n_elements(), 3);
        assert_eq!(m.n_nodes(), 16);
        assert_eq!(m.regions, vec![Region::Steel, Region::Core, Region::Steel]);
    }

    #[test]
    fn refinement_multiplies_elements_by_eight() {
        let g = reference();
        let a = build_rotor_mesh(&g).unwrap();
        let b = build_rotor_mesh(&g.refined(1)).unwrap();
        assert_eq!(b.n_elements(), 8 * a.n_elements());
        // core: 4x4 section x 4 layers, shafts 2x2 x 2 layers each
        assert_eq!(a.n_elements(), 16 * 4 + 2 * 4 * 2);
    }

    #[test]
    fn node_count_matches_grid_formula() {
        let a = build_rotor_mesh(&reference()).unwrap();
        // shaft-only planes: 3x3 nodes; planes touching the core: 5x5
        let shaft_planes = 2 + 2;
        let core_planes = 5;
        assert_eq!(a.n_nodes(), shaft_planes * 9 + core_planes * 25);
    }

    #[test]
    fn jacobians_positive() {
        for g in [reference(), reference().refined(1), unit_cube(2)] {
            let m = build_rotor_mesh(&g).unwrap();
            assert!(m.min_jacobian_det() > 0.0);
        }
    }

    #[test]
    fn unit_cube_volume() {
        for n in [1, 2] {
            let m = build_rotor_mesh(&unit_cube(n)).unwrap();
            let total: f64 = mesh_volume(&m).values().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_volume_is_analytic_and_refinement_invariant() {
        let g = reference();
        let shaft = (g.l_shaft_left + g.l_shaft_right) * (2.0 * g.a_shaft).powi(2);
        let core = g.l_core * (2.0 * g.a_core).powi(2);
        for level in 0..3 {
            let v = mesh_volume(&build_rotor_mesh(&g.refined(level)).unwrap());
            assert!((v[&Region::Steel] - shaft).abs() < 1e-12 * shaft);
            assert!((v[&Region::Core] - core).abs() < 1e-12 * core);
        }
    }

    #[test]
    fn region_tags() {
        let mut g = reference();
        assert_eq!(build_rotor_mesh(&g).unwrap().region_set(), vec![Region::Steel, Region::Core]);
        g.copper_shell = true;
        let m = build_rotor_mesh(&g).unwrap();
        assert_eq!(m.region_set(), vec![Region::Steel, Region::Copper, Region::Core]);
        let v = mesh_volume(&m);
        let inner = 2.0 * g.a_core - 2.0 * (g.a_core - g.a_shaft) / g.n_ring as f64;
        let expected_cu = g.l_core * ((2.0 * g.a_core).powi(2) - inner * inner);
        assert!((v[&Region::Copper] - expected_cu).abs() < 1e-12);
        g.copper_shell = false;
        g.shaft_through_core = true;
        let v = mesh_volume(&build_rotor_mesh(&g).unwrap());
        let steel = g.total_length() * (2.0 * g.a_shaft).powi(2);
        assert!((v[&Region::Steel] - steel).abs() < 1e-12);
    }

    #[test]
    fn invalid_geometries() {
        let mut g = reference();
        g.a_core = 0.01;
        assert!(matches!(build_rotor_mesh(&g), Err(Error::InvalidGeometry(_))));
        let mut g = reference();
        g.n_z_core = 0;
        assert!(build_rotor_mesh(&g).is_err());
        let mut g = reference();
        g.n_ring = 0;
        assert!(build_rotor_mesh(&g).is_err());
        let mut g = unit_cube(1);
        g.copper_shell = true;
        assert!(build_rotor_mesh(&g).is_err());
        let mut g = reference();
        g.l_core = -1.0;
        assert!(build_rotor_mesh(&g).is_err());
    }

    #[test]
    fn shared_interface_nodes() {
        // every node is referenced by at least one element and coordinates are unique
        let m = build_rotor_mesh(&reference()).unwrap();
        let mut seen = vec![false; m.n_nodes()];
        for c in &m.elements {
            for &n in c {
                seen[n] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        let mut keys: Vec<[i64; 3]> = m
            .nodes
            .iter()
            .map(|p| [(p[0] * 1e9) as i64, (p[1] * 1e9) as i64, (p[2] * 1e9) as i64])
            .collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), m.n_nodes());
    }

    #[test]
    fn text_dump_has_blocks() {
        let m = build_rotor_mesh(&unit_cube(1)).unwrap();
        let s = m.to_text();
        assert!(s.starts_with("nodes 16\n"));
        assert!(s.contains("elements 3\n"));
        assert!(s.trim_end().ends_with("steel"));
    }
}

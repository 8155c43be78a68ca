//! Forward map from the core elastic constants to labelled rotor eigenvalues.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::eig::{smallest_eigenpairs, EigSettings, Spectrum, RIGID_GAP};
use crate::error::{Error, Result};
use crate::fem::{AssembledSystem, MaterialMap, ParametricAssembly};
use crate::mesh::{build_rotor_mesh, RotorGeometry, RotorMesh};
use crate::tensor::{check_admissible, MaterialParams};

/// Which eigenvalues make up one observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DataSetSpec {
    #[serde(rename = "2bp")]
    TwoBendingPairs,
    #[serde(rename = "3bp")]
    ThreeBendingPairs,
    #[serde(rename = "3bp1t")]
    ThreeBendingPairsPlusTorsional,
}

impl DataSetSpec {
    pub const ALL: [DataSetSpec; 3] = [
        DataSetSpec::TwoBendingPairs,
        DataSetSpec::ThreeBendingPairs,
        DataSetSpec::ThreeBendingPairsPlusTorsional,
    ];

    pub fn bending_pairs(self) -> usize {
        match self {
            DataSetSpec::TwoBendingPairs => 2,
            _ => 3,
        }
    }

    pub fn torsional(self) -> usize {
        match self {
            DataSetSpec::ThreeBendingPairsPlusTorsional => 1,
            _ => 0,
        }
    }

    pub fn len(self) -> usize {
        2 * self.bending_pairs() + self.torsional()
    }

    pub fn tag(self) -> &'static str {
        match self {
            DataSetSpec::TwoBendingPairs => "2bp",
            DataSetSpec::ThreeBendingPairs => "3bp",
            DataSetSpec::ThreeBendingPairsPlusTorsional => "3bp1t",
        }
    }
}

impl fmt::Display for DataSetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for DataSetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DataSetSpec::ALL
            .into_iter()
            .find(|d| d.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown data set '{s}' (expected 2bp, 3bp or 3bp1t)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModeLabel {
    Rigid,
    Bending,
    Torsional,
    Axial,
    Other,
}

/// Cross-section kinetic energies of one mode: transverse translation,
/// rotation about the axis and axial translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeIndicators {
    pub bending: f64,
    pub torsional: f64,
    pub axial: f64,
}

impl ModeIndicators {
    fn ranked(&self) -> [(ModeLabel, f64); 3] {
        let mut r = [
            (ModeLabel::Bending, self.bending),
            (ModeLabel::Torsional, self.torsional),
            (ModeLabel::Axial, self.axial),
        ];
        r.sort_by(|a, b| b.1.total_cmp(&a.1));
        r
    }
}

/// Two indicators closer than this fraction of the largest mark a mode as
/// ambiguous.
pub const AMBIGUITY_MARGIN: f64 = 0.1;

/// A mode whose largest indicator carries less than this share of its
/// (unit) kinetic energy deforms the cross-section and is labelled Other.
pub const DOMINANCE_FLOOR: f64 = 0.5;

/// Relative gap below which two consecutive bending eigenvalues form a pair.
pub const PAIR_GAP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ModalResult {
    pub spectrum: Spectrum,
    pub labels: Vec<ModeLabel>,
    /// `None` for rigid modes.
    pub indicators: Vec<Option<ModeIndicators>>,
    /// Index pairs of near-degenerate consecutive bending modes.
    pub bending_pairs: Vec<(usize, usize)>,
    /// Modes labelled [`ModeLabel::Other`] because two indicators tied.
    pub ambiguous: Vec<usize>,
}

impl ModalResult {
    pub fn count(&self, label: ModeLabel) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }

    pub fn eigenvalues_with(&self, label: ModeLabel) -> Vec<f64> {
        self.labels
            .iter()
            .zip(&self.spectrum.eigenvalues)
            .filter(|(l, _)| **l == label)
            .map(|(_, v)| *v)
            .collect()
    }

    /// The data set values: bending eigenvalues ascending, then the torsional
    /// one. `None` when too few modes carry the required labels.
    pub fn select(&self, spec: DataSetSpec) -> Option<Vec<f64>> {
        let bending = self.eigenvalues_with(ModeLabel::Bending);
        let torsional = self.eigenvalues_with(ModeLabel::Torsional);
        let nb = 2 * spec.bending_pairs();
        if bending.len() < nb || torsional.len() < spec.torsional() {
            return None;
        }
        let mut out = bending[..nb].to_vec();
        out.extend_from_slice(&torsional[..spec.torsional()]);
        Some(out)
    }
}

/// Lumped nodal masses (row sums of the consistent mass, `x` component).
pub fn nodal_masses(mass: &crate::band::SymBandMatrix) -> Vec<f64> {
    let n = mass.dim();
    let mut ex = vec![0.0; n];
    for i in (0..n).step_by(3) {
        ex[i] = 1.0;
    }
    let rows = mass.mul_vec_alloc(&ex);
    rows.into_iter().step_by(3).collect()
}

/// Labels every mode of `spectrum` computed on `mesh`. Rigid modes are
/// found from the eigenvalue gap; the rest by the largest cross-section
/// kinetic energy.
pub fn classify_modes(spectrum: Spectrum, mesh: &RotorMesh, nodal_mass: &[f64]) -> ModalResult {
    let rigid = spectrum.rigid_count(RIGID_GAP);
    let n_layers = mesh.layer_z.len();
    let mut labels = Vec::with_capacity(spectrum.len());
    let mut indicators = Vec::with_capacity(spectrum.len());
    let mut ambiguous = Vec::new();

    for (idx, u) in spectrum.eigenvectors.iter().enumerate() {
        if idx < rigid {
            labels.push(ModeLabel::Rigid);
            indicators.push(None);
            continue;
        }
        // per layer: Σm, Σm u, Σm r², Σm (x u_y − y u_x)
        let mut acc = vec![[0.0f64; 6]; n_layers];
        for (a, x) in mesh.nodes.iter().enumerate() {
            let m = nodal_mass[a];
            let l = &mut acc[mesh.node_layer[a]];
            let (ux, uy, uz) = (u[3 * a], u[3 * a + 1], u[3 * a + 2]);
            l[0] += m;
            l[1] += m * ux;
            l[2] += m * uy;
            l[3] += m * uz;
            l[4] += m * (x[0] * x[0] + x[1] * x[1]);
            l[5] += m * (x[0] * uy - x[1] * ux);
        }
        let mut ind = ModeIndicators {
            bending: 0.0,
            torsional: 0.0,
            axial: 0.0,
        };
        for l in acc.iter().filter(|l| l[0] > 0.0) {
            ind.bending += (l[1] * l[1] + l[2] * l[2]) / l[0];
            ind.axial += l[3] * l[3] / l[0];
            if l[4] > 0.0 {
                ind.torsional += l[5] * l[5] / l[4];
            }
        }
        let ranked = ind.ranked();
        let label = if ranked[0].1 < DOMINANCE_FLOOR {
            ModeLabel::Other
        } else if ranked[1].1 >= (1.0 - AMBIGUITY_MARGIN) * ranked[0].1 {
            ambiguous.push(idx);
            ModeLabel::Other
        } else {
            ranked[0].0
        };
        labels.push(label);
        indicators.push(Some(ind));
    }

    let values = &spectrum.eigenvalues;
    let mut bending_pairs = Vec::new();
    let mut i = 0;
    while i + 1 < labels.len() {
        if labels[i] == ModeLabel::Bending
            && labels[i + 1] == ModeLabel::Bending
            && (values[i + 1] - values[i]).abs() < PAIR_GAP * values[i + 1].abs()
        {
            bending_pairs.push((i, i + 1));
            i += 2;
        } else {
            i += 1;
        }
    }

    ModalResult {
        spectrum,
        labels,
        indicators,
        bending_pairs,
        ambiguous,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForwardSettings {
    pub eig: EigSettings,
    /// Eigenpairs requested on the first attempt.
    pub n_solve: usize,
    /// Eigenpairs requested when the first attempt lacks labelled modes.
    pub n_solve_retry: usize,
    pub cache: bool,
}

impl Default for ForwardSettings {
    fn default() -> Self {
        Self {
            eig: EigSettings::default(),
            n_solve: 13,
            n_solve_retry: 24,
            cache: true,
        }
    }
}

/// Everything the forward map needs besides the core constants: the mesh,
/// the parametric assembly with fixed materials, solver settings and a cache.
#[derive(Debug)]
pub struct ForwardContext {
    pub mesh: RotorMesh,
    pub assembly: ParametricAssembly,
    pub settings: ForwardSettings,
    nodal_mass: Vec<f64>,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl ForwardContext {
    /// `materials` covers the non-core regions.
    pub fn new(
        geometry: &RotorGeometry,
        materials: &MaterialMap,
        core_density: f64,
        settings: ForwardSettings,
    ) -> Result<Self> {
        let mesh = build_rotor_mesh(geometry)?;
        let assembly = ParametricAssembly::new(&mesh, materials, core_density)?;
        let nodal_mass = nodal_masses(&assembly.mass);
        Ok(Self {
            mesh,
            assembly,
            settings,
            nodal_mass,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn system(&self, p: &MaterialParams) -> Result<AssembledSystem> {
        self.assembly.system(p)
    }

    /// Solves for `m` eigenpairs and labels them.
    pub fn modal(&self, p: &MaterialParams, m: usize) -> Result<ModalResult> {
        ensure_admissible(p)?;
        let sys = self.system(p)?;
        let m = m.min(sys.dim());
        let spectrum = smallest_eigenpairs(&sys, m, &self.settings.eig)?;
        Ok(classify_modes(spectrum, &self.mesh, &self.nodal_mass))
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().map(|c| c.len()).unwrap_or(0)
    }

    pub fn clear_cache(&self) {
        if let Ok(mut c) = self.cache.lock() {
            c.clear();
        }
    }
}

fn ensure_admissible(p: &MaterialParams) -> Result<()> {
    let adm = check_admissible(p);
    if adm.admissible {
        Ok(())
    } else {
        Err(Error::InadmissibleParameters(adm.violations.join("; ")))
    }
}

/// Cache key: the data set and the exact bit patterns of the constants, so a
/// hit never depends on which nearby point was evaluated first.
pub fn cache_key(p: &MaterialParams, spec: DataSetSpec) -> String {
    let mut key = spec.tag().to_string();
    for v in p.to_array() {
        key.push_str(&format!("|{:016x}", v.to_bits()));
    }
    key
}

/// `f(p)`: the eigenvalues [rad²/s²] of data set `spec`, rigid modes excluded.
pub fn forward_map(p: &MaterialParams, spec: DataSetSpec, ctx: &ForwardContext) -> Result<Vec<f64>> {
    ensure_admissible(p)?;
    let key = ctx.settings.cache.then(|| cache_key(p, spec));
    if let Some(k) = &key {
        if let Some(hit) = ctx.cache.lock().ok().and_then(|c| c.get(k).cloned()) {
            return Ok(hit);
        }
    }
    let mut attempts = vec![ctx.settings.n_solve];
    if ctx.settings.n_solve_retry > ctx.settings.n_solve {
        attempts.push(ctx.settings.n_solve_retry);
    }
    let mut last = None;
    for m in attempts {
        let modal = ctx.modal(p, m)?;
        if let Some(values) = modal.select(spec) {
            if let (Some(k), Ok(mut c)) = (key, ctx.cache.lock()) {
                c.insert(k, values.clone());
            }
            return Ok(values);
        }
        last = Some(modal);
    }
    let modal = last.expect("at least one attempt");
    Err(Error::NotEnoughModes(format!(
        "{spec} needs {} bending and {} torsional modes; found {} and {} among {} eigenpairs",
        2 * spec.bending_pairs(),
        spec.torsional(),
        modal.count(ModeLabel::Bending),
        modal.count(ModeLabel::Torsional),
        modal.spectrum.len()
    )))
}

//! Declarative experiment configuration (TOML).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fem::MaterialMap;
use crate::forward::{DataSetSpec, ForwardContext, ForwardSettings};
use crate::inverse::{EkiSettings, LsqSettings, UnknownSet};
use crate::mesh::{Region, RotorGeometry};
use crate::tensor::{check_admissible, Elasticity, IsotropicMaterial, MaterialParams, Param};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lsq,
    Eki,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Lsq => "lsq",
            Method::Eki => "eki",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lsq" => Ok(Method::Lsq),
            "eki" => Ok(Method::Eki),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Materials of the regions that are not inverted for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedMaterials {
    pub steel: IsotropicMaterial,
    pub copper: IsotropicMaterial,
    /// Density of the laminated core [kg/m³].
    pub core_density: f64,
}

impl FixedMaterials {
    pub fn material_map(&self) -> MaterialMap {
        MaterialMap::new()
            .with(Region::Steel, Elasticity::Isotropic(self.steel), self.steel.density)
            .with(Region::Copper, Elasticity::Isotropic(self.copper), self.copper.density)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableConfig {
    pub unknown_sets: Vec<Vec<Param>>,
    pub datasets: Vec<DataSetSpec>,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub unknowns: Vec<Param>,
    pub dataset: DataSetSpec,
    pub deltas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub method: Method,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    /// Least squares starts from `lsq_start_factor · p_true` (clipped to the bounds).
    pub lsq_start_factor: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self { lsq_start_factor: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundOverride {
    pub param: Param,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    /// Random admissible samples for the closed-form stiffness check.
    pub tensor_samples: usize,
    pub tensor_seed: u64,
    pub beam_length: f64,
    pub beam_half_width: f64,
    /// Coarsest beam mesh; each further level halves every element.
    pub beam_n_across: usize,
    pub beam_n_along: usize,
    pub beam_levels: u32,
    /// Refinement levels of the rotor used for the convergence study.
    pub rotor_levels: u32,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            tensor_samples: 100,
            tensor_seed: 7,
            beam_length: 0.6,
            beam_half_width: 0.01,
            beam_n_across: 1,
            beam_n_along: 24,
            beam_levels: 3,
            rotor_levels: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub geometry: RotorGeometry,
    pub materials: FixedMaterials,
    pub p_true: MaterialParams,
    #[serde(default)]
    pub forward: ForwardSettings,
    pub table: TableConfig,
    pub sweep: SweepConfig,
    #[serde(default)]
    pub eki: EkiSettings,
    #[serde(default)]
    pub lsq: LsqSettings,
    #[serde(default)]
    pub recovery: RecoveryConfig,
    #[serde(default)]
    pub validation: ValidationConfig,
    #[serde(default)]
    pub bounds: Vec<BoundOverride>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical serialization, as lowercase hex.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml_string()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.geometry.validate().map_err(|e| Error::Config(e.to_string()))?;
        for m in [self.materials.steel, self.materials.copper] {
            m.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(self.materials.core_density > 0.0) {
            return bad("core density must be positive".into());
        }
        let adm = check_admissible(&self.p_true);
        if !adm.admissible {
            return bad(format!("p_true is not admissible: {adm:?}"));
        }
        if self.table.unknown_sets.iter().any(Vec::is_empty) || self.sweep.unknowns.is_empty() {
            return bad("the unknown set is empty".into());
        }
        if self.table.datasets.is_empty() || self.table.methods.is_empty() {
            return bad("the table needs at least one data set and one method".into());
        }
        if self.sweep.seeds.is_empty() || self.sweep.deltas.is_empty() {
            return bad("the sweep needs at least one noise level and one seed".into());
        }
        if self.sweep.deltas.iter().chain([&self.table.delta]).any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return bad("noise levels must be non-negative".into());
        }
        if self.eki.ensemble_size < 2 {
            return bad("the ensemble needs at least two members".into());
        }
        if !(self.recovery.lsq_start_factor > 0.0) {
            return bad("lsq_start_factor must be positive".into());
        }
        for set in self.table.unknown_sets.iter().chain([&self.sweep.unknowns]) {
            self.unknown_set(set)?;
        }
        Ok(())
    }

    /// Default bounds around `p_true`, with any configured overrides.
    pub fn unknown_set(&self, params: &[Param]) -> Result<UnknownSet> {
        let mut set = UnknownSet::with_default_bounds(params.to_vec(), &self.p_true)?;
        for o in &self.bounds {
            if let Some(i) = set.params.iter().position(|p| *p == o.param) {
                set.bounds[i] = (o.lo, o.hi);
            }
        }
        UnknownSet::new(set.params, set.bounds)
    }

    pub fn forward_context(&self) -> Result<ForwardContext> {
        self.forward_context_for(&self.geometry)
    }

    pub fn forward_context_for(&self, geometry: &RotorGeometry) -> Result<ForwardContext> {
        ForwardContext::new(
            geometry,
            &self.materials.material_map(),
            self.materials.core_density,
            self.forward,
        )
    }
}

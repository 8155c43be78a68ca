#![allow(dead_code)]

use std::path::PathBuf;

use rotor_eig_inv::config::ExperimentConfig;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn reference_config() -> ExperimentConfig {
    ExperimentConfig::load(&config_path("reference.toml")).expect("reference config parses")
}

/// Largest `|a − b| / |b|` over paired entries.
pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| ((x - y) / y).abs()).fold(0.0, f64::max)
}

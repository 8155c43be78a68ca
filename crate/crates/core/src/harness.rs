//! Experiment drivers: recovery tables, noise sweeps and the validation suite,
//! with CSV output carrying provenance comments and a TOML sidecar.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Method};
use crate::eig::{smallest_eigenpairs, EigSettings, RIGID_GAP};
use crate::error::{Error, Result};
use crate::fem::{assemble, MaterialMap};
use crate::forward::{forward_map, DataSetSpec, ForwardContext, ModeLabel};
use crate::inverse::{
    add_multiplicative_noise, eki_run, lsq_recover, relative_error, EkiStatus, Ensemble,
    RotorProblem,
};
use crate::mesh::{build_rotor_mesh, Region, RotorGeometry};
use crate::tensor::{
    check_admissible, compliance_transversely_isotropic, stiffness_from_compliance, stiffness_isotropic,
    stiffness_transversely_isotropic, Elasticity, IsotropicMaterial, MaterialParams, Param, DEFAULT_CONDITION_CAP,
};

/// Short name of an error, used in place of a number in failed cells.
pub fn failure_kind(e: &Error) -> &'static str {
    match e {
        Error::MaxIterations(_) => "max-iterations",
        Error::Stalled(_) => "stalled",
        Error::InadmissibleStart(_) | Error::InadmissibleParameters(_) => "inadmissible",
        Error::NotEnoughModes(_) => "not-enough-modes",
        Error::SingularUpdate(_) => "singular-update",
        Error::ConvergenceFailure(_) => "eigensolver-failure",
        _ => "error",
    }
}

/// One recovery problem: which constants are unknown, the data and the method.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryTask {
    pub unknowns: Vec<Param>,
    pub dataset: DataSetSpec,
    pub method: Method,
    pub delta: f64,
    pub seed: u64,
}

/// Per-iteration trace in tabular form.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovered {
    /// Physical values of the unknowns.
    pub estimate: Vec<f64>,
    pub errors: Vec<f64>,
    pub status: String,
    pub iterations: usize,
    pub evaluations: usize,
    pub trace: Trace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryRun {
    pub task: RecoveryTask,
    /// The recovered values, or the failure kind.
    pub outcome: std::result::Result<Recovered, String>,
}

impl RecoveryRun {
    /// Relative error per unknown, `None` for a failed run.
    pub fn errors(&self) -> Option<&[f64]> {
        self.outcome.as_ref().ok().map(|r| r.errors.as_slice())
    }

    pub fn status(&self) -> &str {
        match &self.outcome {
            Ok(r) => &r.status,
            Err(kind) => kind,
        }
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v:.6e}")
}

/// Ensemble seed for a run: the configured seed shifted by the run seed so
/// that repeated seeds in a sweep also draw fresh ensembles.
fn eki_seed(cfg: &ExperimentConfig, seed: u64) -> u64 {
    cfg.eki.seed.wrapping_mul(0x1000_0000_01b3).wrapping_add(seed)
}

/// Runs one recovery; solver failures are captured as the outcome.
pub fn recover(cfg: &ExperimentConfig, ctx: &ForwardContext, task: &RecoveryTask) -> Result<RecoveryRun> {
    let unknowns = cfg.unknown_set(&task.unknowns)?;
    let truth = unknowns.values(&cfg.p_true);
    let outcome = recover_inner(cfg, ctx, task, &unknowns, &truth).map_err(|e| {
        log::warn!("{} {} {:?}: {e}", task.method, task.dataset, task.unknowns);
        failure_kind(&e).to_string()
    });
    Ok(RecoveryRun {
        task: task.clone(),
        outcome,
    })
}

fn recover_inner(
    cfg: &ExperimentConfig,
    ctx: &ForwardContext,
    task: &RecoveryTask,
    unknowns: &crate::inverse::UnknownSet,
    truth: &[f64],
) -> Result<Recovered> {
    let clean = forward_map(&cfg.p_true, task.dataset, ctx)?;
    let data = add_multiplicative_noise(&clean, task.delta, task.seed)?;
    let problem = RotorProblem {
        ctx,
        spec: task.dataset,
        unknowns,
        base: cfg.p_true,
    };
    let labels = unknowns.labels();
    let physical = |x: &[f64]| unknowns.values(&unknowns.from_scaled(x, &cfg.p_true));
    match task.method {
        Method::Eki => {
            let settings = crate::inverse::EkiSettings {
                seed: eki_seed(cfg, task.seed),
                ..cfg.eki
            };
            let to_scaled = |v: &[f64]| {
                let mut p = cfg.p_true;
                for (&q, &x) in unknowns.params.iter().zip(v) {
                    p = p.with(q, x);
                }
                unknowns.to_scaled(&p)
            };
            let init = Ensemble::uniform_around(&problem, truth, to_scaled, &settings)?;
            let out = eki_run(init, &data, &problem, &physical, &settings)?;
            let estimate = physical(&out.mean);
            let mut header: Vec<String> = vec!["iteration".into()];
            header.extend(labels.iter().map(|l| l.to_string()));
            header.extend(["variance", "change", "misfit", "clipped"].map(String::from));
            let rows = out
                .trace
                .iter()
                .map(|it| {
                    let mut row = vec![it.iteration.to_string()];
                    row.extend(physical(&it.mean).into_iter().map(fmt_num));
                    row.extend([fmt_num(it.variance), fmt_num(it.change), fmt_num(it.misfit)]);
                    row.push(it.clipped.to_string());
                    row
                })
                .collect();
            let status = match out.status {
                EkiStatus::Converged => "converged",
                EkiStatus::Discrepancy => "discrepancy",
                EkiStatus::MaxIterations => "max-iterations",
            };
            Ok(Recovered {
                errors: relative_error(&estimate, truth)?,
                estimate,
                status: status.into(),
                iterations: out.iterations,
                evaluations: out.evaluations,
                trace: Trace { header, rows },
            })
        }
        Method::Lsq => {
            let start = cfg
                .p_true
                .to_array()
                .map(|v| v * cfg.recovery.lsq_start_factor);
            let mut x0 = unknowns.to_scaled(&MaterialParams::from_array(start));
            unknowns.clip_scaled(&mut x0);
            let out = lsq_recover(&problem, &data, &x0, &cfg.lsq)?;
            let mut header: Vec<String> = vec!["iteration".into()];
            header.extend(labels.iter().map(|l| l.to_string()));
            header.extend(["cost", "step_norm", "damping"].map(String::from));
            let rows = out
                .trace
                .iter()
                .map(|it| {
                    let mut row = vec![it.iteration.to_string()];
                    row.extend(physical(&it.x).into_iter().map(fmt_num));
                    row.extend([fmt_num(it.cost), fmt_num(it.step_norm), fmt_num(it.damping)]);
                    row
                })
                .collect();
            let (iterations, evaluations) = (out.iterations, out.evaluations);
            let x = out.into_result()?.x;
            let estimate = physical(&x);
            Ok(Recovered {
                errors: relative_error(&estimate, truth)?,
                estimate,
                status: "converged".into(),
                iterations,
                evaluations,
                trace: Trace { header, rows },
            })
        }
    }
}

fn unknowns_tag(params: &[Param]) -> String {
    params.iter().map(|p| p.label()).collect::<Vec<_>>().join("+")
}

/// Table rows for one method, in configuration order.
pub fn run_table_experiment(cfg: &ExperimentConfig, ctx: &ForwardContext, method: Method) -> Result<Vec<RecoveryRun>> {
    let tasks: Vec<RecoveryTask> = cfg
        .table
        .unknown_sets
        .iter()
        .flat_map(|u| {
            cfg.table.datasets.iter().map(move |&dataset| RecoveryTask {
                unknowns: u.clone(),
                dataset,
                method,
                delta: cfg.table.delta,
                seed: cfg.table.seed,
            })
        })
        .collect();
    tasks.par_iter().map(|t| recover(cfg, ctx, t)).collect()
}

/// CSV of a table: one row per unknown set and data set, one column per constant.
pub fn table_csv(runs: &[RecoveryRun]) -> Csv {
    let mut header: Vec<String> = ["unknowns", "dataset", "status", "iterations", "evaluations"]
        .map(String::from)
        .to_vec();
    header.extend(Param::ALL.iter().map(|p| p.label().to_string()));
    let rows = runs
        .iter()
        .map(|run| {
            let mut row = vec![
                unknowns_tag(&run.task.unknowns),
                run.task.dataset.tag().to_string(),
                run.status().to_string(),
            ];
            match &run.outcome {
                Ok(r) => row.extend([r.iterations.to_string(), r.evaluations.to_string()]),
                Err(_) => row.extend([String::new(), String::new()]),
            }
            for p in Param::ALL {
                let cell = match (run.task.unknowns.iter().position(|q| *q == p), &run.outcome) {
                    (None, _) => String::new(),
                    (Some(i), Ok(r)) => fmt_num(r.errors[i]),
                    (Some(_), Err(kind)) => kind.clone(),
                };
                row.push(cell);
            }
            row
        })
        .collect();
    Csv { header, rows }
}

/// Sweep results per noise level: one run per seed plus per-constant medians.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepLevel {
    pub delta: f64,
    pub runs: Vec<RecoveryRun>,
    /// Failed runs count as infinite error.
    pub median: Vec<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn run_noise_sweep(cfg: &ExperimentConfig, ctx: &ForwardContext) -> Result<Vec<SweepLevel>> {
    let sweep = &cfg.sweep;
    let tasks: Vec<RecoveryTask> = sweep
        .deltas
        .iter()
        .flat_map(|&delta| {
            sweep.seeds.iter().map(move |&seed| RecoveryTask {
                unknowns: sweep.unknowns.clone(),
                dataset: sweep.dataset,
                method: sweep.method,
                delta,
                seed,
            })
        })
        .collect();
    let runs: Vec<RecoveryRun> = tasks.par_iter().map(|t| recover(cfg, ctx, t)).collect::<Result<_>>()?;
    let per_level = sweep.seeds.len();
    Ok(sweep
        .deltas
        .iter()
        .zip(runs.chunks(per_level))
        .map(|(&delta, chunk)| {
            let median = (0..sweep.unknowns.len())
                .map(|i| {
                    let v: Vec<f64> = chunk
                        .iter()
                        .map(|r| r.errors().map_or(f64::INFINITY, |e| e[i]))
                        .collect();
                    median(&v)
                })
                .collect();
            SweepLevel {
                delta,
                runs: chunk.to_vec(),
                median,
            }
        })
        .collect())
}

pub fn sweep_csv(levels: &[SweepLevel], unknowns: &[Param]) -> Csv {
    let mut header: Vec<String> = ["delta", "seed", "status", "iterations"].map(String::from).to_vec();
    header.extend(unknowns.iter().map(|p| p.label().to_string()));
    let mut rows = Vec::new();
    for level in levels {
        for run in &level.runs {
            let mut row = vec![
                format!("{:.1e}", level.delta),
                run.task.seed.to_string(),
                run.status().to_string(),
            ];
            match &run.outcome {
                Ok(r) => {
                    row.push(r.iterations.to_string());
                    row.extend(r.errors.iter().map(|e| fmt_num(*e)));
                }
                Err(kind) => {
                    row.push(String::new());
                    row.extend(unknowns.iter().map(|_| kind.clone()));
                }
            }
            rows.push(row);
        }
        let mut row = vec![format!("{:.1e}", level.delta), "median".into(), String::new(), String::new()];
        row.extend(level.median.iter().map(|m| fmt_num(*m)));
        rows.push(row);
    }
    Csv { header, rows }
}

/// One line of the validation report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(
                s,
                "{verdict} {}: measured {:.3e}, tolerance {:.3e}. {}",
                c.name, c.measured, c.tolerance, c.detail
            );
        }
        s
    }
}

/// Largest entrywise relative deviation between the closed-form stiffness
/// and the numerical inverse of the compliance over random admissible draws.
/// Entries below `1e-12` of the largest are compared in absolute terms.
pub fn tensor_cross_check(samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut taken = 0;
    while taken < samples {
        let mut modulus = || 10f64.powf(rng.random_range(8.0..12.0));
        let p = MaterialParams::new(modulus(), modulus(), modulus(), modulus(), rng.random_range(0.0..0.5));
        if !check_admissible(&p).admissible {
            continue;
        }
        let closed = stiffness_transversely_isotropic(&p)?;
        let Ok(numeric) = stiffness_from_compliance(&compliance_transversely_isotropic(&p)?, DEFAULT_CONDITION_CAP)
        else {
            continue;
        };
        let scale = numeric.0.amax();
        for (a, b) in closed.0.iter().zip(numeric.0.iter()) {
            let d = if b.abs() > 1e-12 * scale {
                ((a - b) / b).abs()
            } else {
                (a - b).abs() / scale
            };
            worst = worst.max(d);
        }
        taken += 1;
    }
    Ok(worst)
}

/// Largest entrywise deviation, relative to the largest entry, between the
/// transversely isotropic stiffness at its isotropic limit and the isotropic one.
pub fn isotropic_limit_deviation(samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let e = 10f64.powf(rng.random_range(8.0..12.0));
        let nu = rng.random_range(0.0..0.49);
        let iso = stiffness_isotropic(&IsotropicMaterial::new(e, nu, 1.0)?)?;
        let ti = stiffness_transversely_isotropic(&MaterialParams::isotropic(e, nu))?;
        let scale = iso.0.amax();
        worst = worst.max((iso.0 - ti.0).amax() / scale);
    }
    Ok(worst)
}

/// Euler–Bernoulli free-free fundamental frequency [Hz] of a square bar.
pub fn beam_fundamental_hz(length: f64, half_width: f64, material: &IsotropicMaterial) -> f64 {
    let side = 2.0 * half_width;
    let inertia = side.powi(4) / 12.0;
    let area = side * side;
    let beta_l: f64 = 4.7300;
    beta_l.powi(2) / (2.0 * std::f64::consts::PI * length * length)
        * (material.youngs_modulus * inertia / (material.density * area)).sqrt()
}

/// First flexible frequency [Hz] of the uniform bar at each refinement level.
pub fn beam_frequencies(cfg: &ExperimentConfig) -> Result<Vec<(usize, f64)>> {
    let v = &cfg.validation;
    let steel = cfg.materials.steel;
    let map = MaterialMap::new()
        .with(Region::Steel, Elasticity::Isotropic(steel), steel.density)
        .with(Region::Core, Elasticity::Isotropic(steel), steel.density);
    let base = RotorGeometry::uniform_bar(v.beam_length, v.beam_half_width, v.beam_n_across, v.beam_n_along);
    (0..v.beam_levels)
        .map(|level| {
            let mesh = build_rotor_mesh(&base.refined(level))?;
            let sys = assemble(&mesh, &map)?;
            let spectrum = smallest_eigenpairs(&sys, 8, &EigSettings::default())?;
            let rigid = spectrum.rigid_count(RIGID_GAP);
            let f = spectrum.frequencies_hz();
            let first = *f.get(rigid).ok_or_else(|| Error::NotEnoughModes("beam has no flexible mode".into()))?;
            Ok((sys.dim(), first))
        })
        .collect()
}

pub fn run_validation_suite(cfg: &ExperimentConfig) -> Result<ValidationReport> {
    let v = &cfg.validation;
    let mut checks = Vec::new();

    let dev = tensor_cross_check(v.tensor_samples, v.tensor_seed)?;
    checks.push(Check {
        name: "closed-form stiffness vs inverted compliance".into(),
        measured: dev,
        tolerance: 1e-9,
        passed: dev < 1e-9,
        detail: format!("{} random admissible parameter sets", v.tensor_samples),
    });

    let iso = isotropic_limit_deviation(50, v.tensor_seed)?;
    checks.push(Check {
        name: "isotropic limit".into(),
        measured: iso,
        tolerance: 1e-12,
        passed: iso < 1e-12,
        detail: "50 random isotropic materials".into(),
    });

    let ctx = cfg.forward_context()?;
    let modal = ctx.modal(&cfg.p_true, ctx.settings.n_solve)?;
    let rigid = modal.spectrum.rigid_count(RIGID_GAP);
    let ratio = modal.spectrum.eigenvalues[..rigid.min(6)]
        .iter()
        .map(|l| l.abs())
        .fold(0.0, f64::max)
        / modal.spectrum.eigenvalues.get(6).copied().unwrap_or(f64::NAN);
    checks.push(Check {
        name: "rigid body modes of the rotor".into(),
        measured: ratio,
        tolerance: RIGID_GAP,
        passed: rigid == 6 && modal.count(ModeLabel::Rigid) == 6 && ratio < RIGID_GAP,
        detail: format!("{rigid} rigid modes detected, {} DOF", ctx.assembly.dim()),
    });

    let analytic = beam_fundamental_hz(v.beam_length, v.beam_half_width, &cfg.materials.steel);
    let beam = beam_frequencies(cfg)?;
    let errors: Vec<f64> = beam.iter().map(|(_, f)| (f / analytic - 1.0).abs()).collect();
    let finest = *errors.last().unwrap_or(&f64::INFINITY);
    let monotone = errors.windows(2).all(|w| w[1] < w[0]);
    checks.push(Check {
        name: "beam fundamental frequency".into(),
        measured: finest,
        tolerance: 0.05,
        passed: finest < 0.05 && monotone && errors.len() >= 3,
        detail: format!(
            "analytic {analytic:.4} Hz; levels {}; monotone {monotone}",
            beam.iter()
                .map(|(n, f)| format!("{n} DOF {f:.4} Hz"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    });

    let mut rotor = Vec::new();
    for level in 0..v.rotor_levels {
        let ctx = cfg.forward_context_for(&cfg.geometry.refined(level))?;
        let m = ctx.modal(&cfg.p_true, 8)?;
        let rigid = m.spectrum.rigid_count(RIGID_GAP);
        rotor.push((ctx.assembly.dim(), m.spectrum.eigenvalues[rigid]));
    }
    let decreasing = rotor.windows(2).all(|w| w[1].1 <= w[0].1);
    let change = match rotor.as_slice() {
        [.., a, b] => (a.1 - b.1).abs() / b.1,
        _ => 0.0,
    };
    checks.push(Check {
        name: "rotor mesh convergence".into(),
        measured: change,
        tolerance: f64::INFINITY,
        passed: decreasing,
        detail: format!(
            "first flexible eigenvalue from above: {}",
            rotor
                .iter()
                .map(|(n, l)| format!("{n} DOF {l:.6e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    });

    Ok(ValidationReport { checks })
}

/// A CSV body: one header row and string cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn render(&self, provenance: &Provenance) -> String {
        let mut s = String::new();
        for (k, v) in provenance.lines() {
            let _ = writeln!(s, "# {k}: {v}");
        }
        let _ = writeln!(s, "{}", self.header.join(","));
        for row in &self.rows {
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }
}

impl From<Trace> for Csv {
    fn from(t: Trace) -> Self {
        Csv {
            header: t.header,
            rows: t.rows,
        }
    }
}

/// Where a result file came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub code: String,
    pub config_sha256: String,
    pub refinement: u32,
    pub dof: usize,
    pub kind: String,
}

impl Provenance {
    pub fn new(cfg: &ExperimentConfig, ctx: &ForwardContext, kind: &str) -> Result<Self> {
        Ok(Self {
            code: code_version(),
            config_sha256: cfg.hash()?,
            refinement: cfg.geometry.refinement,
            dof: ctx.assembly.dim(),
            kind: kind.into(),
        })
    }

    fn lines(&self) -> [(&'static str, String); 5] {
        [
            ("kind", self.kind.clone()),
            ("code", self.code.clone()),
            ("config_sha256", self.config_sha256.clone()),
            ("refinement", self.refinement.to_string()),
            ("dof", self.dof.to_string()),
        ]
    }
}

/// `git describe` of the source tree, or the crate version outside a checkout.
pub fn code_version() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

/// Writes `name.csv` and its `name.meta.toml` sidecar into `dir`.
pub fn write_csv(dir: &Path, name: &str, csv: &Csv, provenance: &Provenance) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}.csv"));
    std::fs::write(&path, csv.render(provenance))?;
    let meta = toml::to_string(provenance).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join(format!("{name}.meta.toml")), meta)?;
    Ok(path)
}

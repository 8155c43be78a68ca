//! Whole-rotor checks of the assembled model, the eigensolver and the
//! forward map at the reference configuration.

mod common;

use common::{max_rel, reference_config};
use rotor_eig_inv::eig::{smallest_eigenpairs, EigSettings, RIGID_GAP};
use rotor_eig_inv::fem::rigid_body_modes;
use rotor_eig_inv::forward::{cache_key, forward_map, DataSetSpec, ForwardContext, ModeLabel};
use rotor_eig_inv::inverse::cost_exact;
use rotor_eig_inv::mesh::mesh_volume;
use rotor_eig_inv::tensor::{MaterialParams, Param};

fn context() -> (rotor_eig_inv::config::ExperimentConfig, ForwardContext) {
    let cfg = reference_config();
    let ctx = cfg.forward_context().unwrap();
    (cfg, ctx)
}

const MODULI: [Param; 4] = [Param::Ex, Param::Ez, Param::Gxy, Param::Gxz];

#[test]
fn six_rigid_modes_and_accurate_pairs() {
    let (cfg, ctx) = context();
    let sys = ctx.system(&cfg.p_true).unwrap();
    let spectrum = smallest_eigenpairs(&sys, 13, &EigSettings::default()).unwrap();
    assert_eq!(spectrum.rigid_count(RIGID_GAP), 6);
    for l in &spectrum.eigenvalues[..6] {
        assert!(l.abs() < RIGID_GAP * spectrum.eigenvalues[6]);
    }
    assert!(spectrum.max_relative_residual(&sys) < 1e-8);
    assert!(spectrum.max_orthonormality_error(&sys.mass) < 1e-10);
}

#[test]
fn analytic_rigid_motions_have_zero_energy() {
    let (cfg, ctx) = context();
    let sys = ctx.system(&cfg.p_true).unwrap();
    let scale = sys.stiffness.norm_inf();
    for v in rigid_body_modes(&ctx.mesh) {
        let mut kv = vec![0.0; v.len()];
        sys.stiffness.mul_vec(&v, &mut kv);
        let energy: f64 = kv.iter().zip(&v).map(|(a, b)| a * b).sum();
        let norm2: f64 = v.iter().map(|x| x * x).sum();
        assert!(energy.abs() < 1e-10 * scale * norm2, "energy {energy:e}");
    }
}

#[test]
fn dense_and_iterative_paths_agree_on_the_rotor() {
    let (cfg, ctx) = context();
    let sys = ctx.system(&cfg.p_true).unwrap();
    let dense = smallest_eigenpairs(&sys, 13, &EigSettings::dense()).unwrap();
    let lanczos = smallest_eigenpairs(&sys, 13, &EigSettings::iterative()).unwrap();
    assert!(max_rel(&lanczos.eigenvalues[6..], &dense.eigenvalues[6..]) < 1e-9);
}

#[test]
fn refinement_preserves_region_volumes() {
    let cfg = reference_config();
    let coarse = mesh_volume(&cfg.forward_context().unwrap().mesh);
    let fine = mesh_volume(&cfg.forward_context_for(&cfg.geometry.refined(1)).unwrap().mesh);
    for (region, v) in &coarse {
        assert!((fine[region] / v - 1.0).abs() < 1e-12, "{region:?}");
    }
}

#[test]
fn mode_labels_at_reference() {
    let (cfg, ctx) = context();
    let modal = ctx.modal(&cfg.p_true, 16).unwrap();
    assert_eq!(modal.count(ModeLabel::Rigid), 6);
    assert!(modal.count(ModeLabel::Bending) >= 6);
    assert_eq!(modal.count(ModeLabel::Torsional), 1);
    assert!(modal.ambiguous.is_empty(), "{:?}", modal.ambiguous);
    assert_eq!(forward_map(&cfg.p_true, DataSetSpec::ThreeBendingPairsPlusTorsional, &ctx).unwrap().len(), 7);
}

#[test]
fn bending_pairs_stay_degenerate() {
    let (cfg, ctx) = context();
    let factors = [0.7, 0.85, 1.0, 1.2, 1.35];
    for (k, q) in MODULI.iter().enumerate() {
        for (i, f) in factors.iter().enumerate() {
            let g = factors[(i + k) % factors.len()];
            let p = cfg.p_true.with(*q, cfg.p_true.get(*q) * f).with(Param::NuXz, 0.3 * g);
            let Ok(values) = forward_map(&p, DataSetSpec::ThreeBendingPairs, &ctx) else {
                continue;
            };
            for pair in values.chunks(2) {
                assert!((pair[1] / pair[0] - 1.0).abs() < 1e-3, "{q:?} x{f}: {pair:?}");
            }
        }
    }
}

#[test]
fn forward_map_is_deterministic_and_cached() {
    let (cfg, ctx) = context();
    let (_, other) = context();
    let spec = DataSetSpec::ThreeBendingPairsPlusTorsional;
    let a = forward_map(&cfg.p_true, spec, &ctx).unwrap();
    assert_eq!(ctx.cache_len(), 1);
    let b = forward_map(&cfg.p_true, spec, &ctx).unwrap();
    assert_eq!(ctx.cache_len(), 1);
    let c = forward_map(&cfg.p_true, spec, &other).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), c.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    ctx.clear_cache();
    assert_eq!(ctx.cache_len(), 0);
    assert_eq!(forward_map(&cfg.p_true, spec, &ctx).unwrap(), a);
    assert_ne!(cache_key(&cfg.p_true, spec), cache_key(&cfg.p_true, DataSetSpec::TwoBendingPairs));
}

#[test]
fn quadrupled_density_quarters_eigenvalues() {
    let mut cfg = reference_config();
    let spec = DataSetSpec::ThreeBendingPairsPlusTorsional;
    let base = forward_map(&cfg.p_true, spec, &cfg.forward_context().unwrap()).unwrap();
    cfg.materials.steel.density *= 4.0;
    cfg.materials.copper.density *= 4.0;
    cfg.materials.core_density *= 4.0;
    let heavy = forward_map(&cfg.p_true, spec, &cfg.forward_context().unwrap()).unwrap();
    let quarter: Vec<f64> = base.iter().map(|v| v / 4.0).collect();
    assert!(max_rel(&heavy, &quarter) < 1e-10);
}

#[test]
fn finite_difference_slopes_stabilize() {
    let (cfg, ctx) = context();
    let spec = DataSetSpec::ThreeBendingPairsPlusTorsional;
    let f0 = forward_map(&cfg.p_true, spec, &ctx).unwrap();
    for q in [Param::Ez, Param::Gxz, Param::Gxy, Param::Ex] {
        let slope = |h: f64| -> Vec<f64> {
            let p = cfg.p_true.with(q, cfg.p_true.get(q) * (1.0 + h));
            let f = forward_map(&p, spec, &ctx).unwrap();
            f.iter().zip(&f0).map(|(a, b)| (a - b) / (b * h)).collect()
        };
        let (s3, s4, s5) = (slope(1e-3), slope(1e-4), slope(1e-5));
        let scale = s4.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..f0.len() {
            let d34 = (s3[i] - s4[i]).abs();
            let d45 = (s4[i] - s5[i]).abs();
            // differences shrink with h until rounding (~1e-11 / h) takes over
            assert!(d45 <= d34.max(1e-5 * scale) + 1e-11 / 1e-5, "{q:?} mode {i}: {d34:e} {d45:e}");
            assert!(d34 < 1e-2 * scale + 1e-7, "{q:?} mode {i}: {d34:e}");
        }
    }
}

fn assert_monotone(q: Param) {
    let (cfg, ctx) = context();
    let spec = DataSetSpec::ThreeBendingPairsPlusTorsional;
    let f0 = forward_map(&cfg.p_true, spec, &ctx).unwrap();
    let up = forward_map(&cfg.p_true.with(q, cfg.p_true.get(q) * 1.1), spec, &ctx).unwrap();
    let down = forward_map(&cfg.p_true.with(q, cfg.p_true.get(q) * 0.9), spec, &ctx).unwrap();
    for i in 0..f0.len() {
        let tol = 1e-10 * f0[i];
        assert!(up[i] >= f0[i] - tol, "{q:?} +10% mode {i}: {:e} -> {:e}", f0[i], up[i]);
        assert!(down[i] <= f0[i] + tol, "{q:?} -10% mode {i}: {:e} -> {:e}", f0[i], down[i]);
    }
}

#[test]
fn stiffer_moduli_never_lower_eigenvalues() {
    for q in [Param::Ex, Param::Ez, Param::Gxz] {
        assert_monotone(q);
    }
}

/// With `E_x` and `ν_xz` held, `G_xy` also sets the in-plane Poisson ratio
/// (`S₁₂ = 1/E_x − 1/(2G_xy)`), so raising it is not a stiffening in the
/// Loewner order; the bending eigenvalues drop by about 2e-6 per +10%.
#[test]
#[ignore = "raising G_xy lowers the bending eigenvalues slightly"]
fn stiffer_gxy_never_lowers_eigenvalues() {
    assert_monotone(Param::Gxy);
}

fn cost_after(factor: f64, q: Param, data: &[f64], ctx: &ForwardContext, p: &MaterialParams) -> f64 {
    let f = forward_map(&p.with(q, p.get(q) * factor), DataSetSpec::ThreeBendingPairsPlusTorsional, ctx).unwrap();
    cost_exact(&f, data)
}

#[test]
fn cost_is_flatter_along_ez_than_gxz() {
    let (cfg, ctx) = context();
    let data = forward_map(&cfg.p_true, DataSetSpec::ThreeBendingPairsPlusTorsional, &ctx).unwrap();
    let ez = cost_after(1.1, Param::Ez, &data, &ctx, &cfg.p_true);
    let gxz = cost_after(1.1, Param::Gxz, &data, &ctx, &cfg.p_true);
    assert!(ez < 0.2 * gxz, "cost(Ez+10%) = {ez:e}, cost(Gxz+10%) = {gxz:e}");
}

/// Relative sensitivities `Σ|∂f/∂q · q / f|` of the data to `E_z` and `G_xz`.
fn sensitivity_ratio(ctx: &ForwardContext, p: &MaterialParams) -> f64 {
    let spec = DataSetSpec::ThreeBendingPairsPlusTorsional;
    let h = 1e-4;
    let sens = |q: Param| -> f64 {
        let up = forward_map(&p.with(q, p.get(q) * (1.0 + h)), spec, ctx).unwrap();
        let dn = forward_map(&p.with(q, p.get(q) * (1.0 - h)), spec, ctx).unwrap();
        up.iter().zip(&dn).map(|(a, b)| ((a - b) / (a + b) / h).abs()).sum()
    };
    sens(Param::Ez) / sens(Param::Gxz)
}

/// The strong form of the flatness claim: `E_z` influence two orders below
/// `G_xz`. On the square-section rotor `E_z` carries roughly a third of the
/// bending stiffness of the core, so this does not hold.
#[test]
#[ignore = "E_z influence is about 0.4 of G_xz on this geometry"]
fn ez_influence_two_orders_below_gxz() {
    let (cfg, ctx) = context();
    let ratio = sensitivity_ratio(&ctx, &cfg.p_true);
    assert!(ratio < 1e-2, "sensitivity ratio E_z / G_xz = {ratio:.3e}");
}

use nalgebra::Matrix3;
use proptest::prelude::*;
use rotor_eig_inv::tensor::*;

fn modulus() -> impl Strategy<Value = f64> {
    (8.0f64..12.0).prop_map(|e| 10f64.powf(e))
}

/// Admissible transversely isotropic constants: `E_x` is drawn inside its
/// admissible interval given the other four.
fn admissible_params() -> impl Strategy<Value = MaterialParams> {
    (modulus(), modulus(), modulus(), 0.0f64..0.49, 0.01f64..0.99).prop_filter_map(
        "empty E_x interval",
        |(ez, gxy, gxz, nu, t)| {
            let base = MaterialParams::new(1.0, ez, gxy, gxz, nu);
            let (lo, hi) = admissible_interval_ex(&base).ok()?;
            let p = base.with(Param::Ex, lo + t * (hi - lo));
            check_admissible(&p).admissible.then_some(p)
        },
    )
}

fn symmetric_tensor() -> impl Strategy<Value = Matrix3<f64>> {
    proptest::array::uniform6(-1.0f64..1.0).prop_map(|v| from_voigt(&v))
}

fn rel_tensor_diff(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn admissible_matrices_are_spd(p in admissible_params()) {
        let s = compliance_transversely_isotropic(&p).unwrap();
        let c = stiffness_transversely_isotropic(&p).unwrap();
        prop_assert!(s.is_symmetric(1e-12) && c.is_symmetric(1e-12));
        prop_assert!(c.eigenvalues().iter().all(|l| *l > 0.0), "{:?}", c.eigenvalues());
    }

    #[test]
    fn closed_form_matches_numeric_inverse(p in admissible_params()) {
        let closed = stiffness_transversely_isotropic(&p).unwrap();
        let numeric = stiffness_from_compliance(&compliance_transversely_isotropic(&p).unwrap(), DEFAULT_CONDITION_CAP);
        let numeric = numeric.expect("admissible compliance inverts");
        prop_assert!(closed.max_relative_deviation(&numeric) < 1e-9);
    }

    #[test]
    fn isotropic_limit(e in modulus(), nu in -0.9f64..0.49) {
        let m = IsotropicMaterial::new(e, nu, 1.0).unwrap();
        let p = MaterialParams::isotropic(e, nu);
        let (s_iso, s_ti) = (compliance_isotropic(&m).unwrap(), compliance_transversely_isotropic(&p).unwrap());
        let (c_iso, c_ti) = (stiffness_isotropic(&m).unwrap(), stiffness_transversely_isotropic(&p).unwrap());
        prop_assert!((s_iso.matrix() - s_ti.matrix()).amax() <= 1e-12 * s_iso.matrix().amax());
        prop_assert!((c_iso.matrix() - c_ti.matrix()).amax() <= 1e-12 * c_iso.matrix().amax());
    }

    #[test]
    fn voigt_and_tensor_stress_agree(p in admissible_params(), eps in symmetric_tensor()) {
        let material = Elasticity::Transverse(p);
        let c = material.stiffness().unwrap();
        let voigt = from_voigt(&c.apply(&to_voigt(&eps)));
        let tensor = stress_from_strain(&material, &eps).unwrap();
        prop_assert!(rel_tensor_diff(&tensor, &voigt) < 1e-12);
    }

    #[test]
    fn voigt_and_tensor_strain_agree(p in admissible_params(), sigma in symmetric_tensor()) {
        let material = Elasticity::Transverse(p);
        let s = material.compliance().unwrap();
        let voigt = from_voigt(&s.apply(&to_voigt(&sigma)));
        let tensor = strain_from_stress(&material, &sigma).unwrap();
        prop_assert!(rel_tensor_diff(&tensor, &voigt) < 1e-12);
    }

    #[test]
    fn isotropic_stress_round_trip(e in modulus(), nu in 0.0f64..0.49, eps in symmetric_tensor()) {
        let material = Elasticity::Isotropic(IsotropicMaterial::new(e, nu, 1.0).unwrap());
        let sigma = stress_from_strain(&material, &eps).unwrap();
        let back = strain_from_stress(&material, &sigma).unwrap();
        prop_assert!(rel_tensor_diff(&back, &eps) < 1e-12);
        let voigt = from_voigt(&material.stiffness().unwrap().apply(&to_voigt(&eps)));
        prop_assert!(rel_tensor_diff(&sigma, &voigt) < 1e-12);
    }

    #[test]
    fn admissibility_implies_invertible(p in admissible_params()) {
        prop_assert!(stiffness_from_compliance(&compliance_transversely_isotropic(&p).unwrap(), DEFAULT_CONDITION_CAP).is_ok());
    }

    #[test]
    fn interval_endpoints_are_sharp(p in admissible_params()) {
        let (lo, hi) = admissible_interval_ex(&p).unwrap();
        prop_assert!(check_admissible(&p.with(Param::Ex, lo * (1.0 + 1e-9))).admissible);
        prop_assert!(check_admissible(&p.with(Param::Ex, hi * (1.0 - 1e-9))).admissible);
        prop_assert!(!check_admissible(&p.with(Param::Ex, lo * (1.0 - 1e-6))).admissible);
        prop_assert!(!check_admissible(&p.with(Param::Ex, hi * (1.0 + 1e-6))).admissible);
    }
}

#[test]
fn reference_interval_for_ex() {
    let (lo, hi) = admissible_interval_ex(&MaterialParams::reference()).unwrap();
    assert!((lo / 2.36e9 - 1.0).abs() < 0.01, "lower end {lo:e}");
    assert!((hi / 3.076e11 - 1.0).abs() < 0.01, "upper end {hi:e}");
}

#[test]
fn reference_compliance_entries() {
    let s = compliance_transversely_isotropic(&MaterialParams::reference()).unwrap();
    assert!((s.get(2, 2) / 5e-9 - 1.0).abs() < 1e-14);
    assert!((s.get(5, 5) / 6.5e-12 - 1.0).abs() < 1e-4);
    // the axial coupling is -ν_xz / E_x
    assert!((s.get(0, 2) / -1.5e-12 - 1.0).abs() < 1e-14);
    assert_eq!(s.get(0, 2), s.get(2, 0));
}

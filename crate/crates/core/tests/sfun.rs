mod common;

use proptest::prelude::*;
use scat2d::sfun::*;
use std::f64::consts::PI;

#[test]
fn j0_at_origin_is_one() {
    let v = cyl_bessel(BesselKind::J0, 0.0).unwrap();
    assert_eq!(v.value.re, 1.0);
    assert_eq!(v.value.im, 0.0);
}

#[test]
fn k0_at_one_matches_extended_precision_series() {
    let oracle = common::k0_series_dd_at_one();
    let v = cyl_bessel(BesselKind::K0, 1.0).unwrap().value.re;
    assert!(((v - oracle) / oracle).abs() <= 1e-10, "{v} vs {oracle}");
}

#[test]
fn hankel_modulus_matches_leading_asymptotics() {
    let v = cyl_bessel(BesselKind::H0Plus, 100.0).unwrap().value;
    assert!((v.norm() - (2.0 / (PI * 100.0)).sqrt()).abs() <= 1e-3);
}

#[test]
fn non_positive_arguments_rejected() {
    for kind in [BesselKind::Y0, BesselKind::K0, BesselKind::H0Plus] {
        assert!(matches!(cyl_bessel(kind, 0.0), Err(SfunError::NonPositiveArgument(_))));
        assert!(matches!(cyl_bessel(kind, -1.0), Err(SfunError::NonPositiveArgument(_))));
    }
    assert!(cyl_bessel(BesselKind::J0, -0.5).is_err());
}

#[test]
fn k0_underflow_is_flagged() {
    let v = cyl_bessel(BesselKind::K0, 800.0).unwrap();
    assert!(v.underflow);
    assert_eq!(v.value.re, 0.0);
    assert!(!cyl_bessel(BesselKind::K0, 600.0).unwrap().underflow);
}

#[test]
fn wronskian_at_spot_points() {
    assert!(wronskian_deviation(1.0) <= 1e-9);
    assert!(wronskian_deviation(1e-3) <= 1e-8);
    assert!(wronskian_deviation(500.0) <= 1e-8);
}

#[test]
fn selftest_covers_log_grid() {
    let r = sfun_selftest();
    assert!(r.points.first().unwrap().0 <= 1e-3 && r.points.last().unwrap().0 >= 500.0);
    assert!(r.max_rel_deviation <= 1e-8, "{}", r.max_rel_deviation);
}

#[test]
fn no_jump_at_switchover_points() {
    // second differences cancel the slope and expose any jump
    let jump = |f: &dyn Fn(f64) -> f64, x: f64, scale: f64| {
        let d = 1e-7 * x;
        (f(x + d) - 2.0 * f(x) + f(x - d)).abs() / scale
    };
    for x in [JY_SWITCH, K0_SERIES_MAX, K0_ASYMPTOTIC_MIN] {
        let envelope = (2.0 / (PI * x)).sqrt();
        assert!(jump(&j0, x, envelope) <= 1e-11, "J0 at {x}");
        assert!(jump(&y0, x, envelope) <= 1e-11, "Y0 at {x}");
        assert!(jump(&k0, x, k0(x)) <= 1e-11, "K0 at {x}");
    }
}

#[test]
fn reference_values() {
    // tabulated to 16 digits
    let cases = [
        (BesselKind::J0, 2.404_825_557_695_773, 0.0),
        (BesselKind::J0, 10.0, -0.245_935_764_451_348_3),
        (BesselKind::Y0, 1.0, 0.088_256_964_215_676_96),
        (BesselKind::K0, 0.1, 2.427_069_024_702_017),
        (BesselKind::K0, 10.0, 1.778_006_231_616_919e-5),
    ];
    for (kind, x, want) in cases {
        let got = cyl_bessel(kind, x).unwrap().value.re;
        let scale: f64 = if want == 0.0 { 1.0 } else { f64::abs(want) };
        assert!((got - want).abs() <= 1e-10 * scale.max(1e-16) + 1e-15, "{kind:?}({x}) = {got}, want {want}");
    }
}

proptest! {
    #[test]
    fn wronskian_holds(e in -3.0f64..3.0) {
        prop_assert!(wronskian_deviation(10f64.powf(e)) <= 1e-8);
    }

    #[test]
    fn k0_positive_and_decreasing(e in -3.0f64..2.5, step in 1e-3f64..0.5) {
        let x = 10f64.powf(e);
        let (a, b) = (k0(x), k0(x * (1.0 + step)));
        prop_assert!(a > 0.0 && b > 0.0 && b < a);
    }

    #[test]
    fn hankel_is_j0_plus_i_y0(x in 1e-3f64..1e3) {
        let h = cyl_bessel(BesselKind::H0Plus, x).unwrap().value;
        prop_assert_eq!(h.re.to_bits(), j0(x).to_bits());
        prop_assert_eq!(h.im.to_bits(), y0(x).to_bits());
    }
}

mod common;

use scat2d::bs::*;
use scat2d::levinson::*;
use scat2d::opcore::build_disk_grid;

fn spec() -> SweepSpec {
    SweepSpec::new(1e-6, 100.0, 10, 64)
}

fn count_spec(length: f64) -> CountSpec {
    CountSpec { box_radius: 10.0 * length, n_grid: 100 }
}

fn square_well_potential(r: f64, g: f64) -> f64 {
    if r < 1.0 {
        -g
    } else {
        0.0
    }
}

#[test]
fn free_sweep_has_zero_winding() {
    let pot = common::gaussian(0.0);
    let report = levinson_check(&pot, &spec(), &count_spec(1.0)).unwrap();
    assert_eq!(report.n_bound, 0);
    assert!(report.windings.iter().all(|w| w.winding.abs() <= 1e-12));
    assert!(report.discrepancy <= 1e-12);
}

#[test]
fn square_well_winding_counts_bound_states() {
    let pot = common::square_well(10.0);
    let report = levinson_check(&pot, &spec(), &count_spec(1.0)).unwrap();
    let shooting = common::shooting_count(&|r| square_well_potential(r, 10.0), 1.5);
    assert_eq!(shooting, 3);
    assert_eq!(report.n_bound, shooting);
    assert!(report.discrepancy <= 0.05, "{:?}", report.windings.map(|w| w.winding));
    assert!(report.n_spread <= 1e-2, "{}", report.n_spread);
    let w = &report.windings[0];
    assert_eq!(w.eigenphase_winding, -3);
    assert!((w.winding - w.winding.round()).abs() <= 0.05);

    let dense = levinson_check(&pot, &SweepSpec::new(1e-6, 100.0, 20, 64), &count_spec(1.0)).unwrap();
    assert!((dense.windings[0].winding - w.winding).abs() <= 1e-2);
}

#[test]
fn gaussian_winding_counts_bound_states() {
    let pot = common::gaussian(8.0);
    let report = levinson_check(&pot, &spec(), &count_spec(pot.preset.unwrap().length_scale())).unwrap();
    let shooting = common::shooting_count(&|r| -8.0 * (-r * r).exp(), 8.0);
    assert_eq!(report.n_bound, shooting);
    assert!(report.discrepancy <= 0.05, "{}", report.discrepancy);
    assert!(report.n_spread <= 1e-2);
}

#[test]
fn winding_jumps_with_the_bound_state_count() {
    // at the first zero of J1 the s-wave state and both l = 2 states appear together
    let g = 14.681_948_297_03;
    // the new states are too shallow for the box counter; shooting counts them
    let w = |g: f64| {
        let sweep = levinson_sweep(&common::square_well(g), &spec()).unwrap();
        let n = common::shooting_count(&|r| square_well_potential(r, g), 1.5);
        (winding_number(&sweep, 0).unwrap().winding, n)
    };
    let (below, n_below) = w(0.95 * g);
    let (above, n_above) = w(1.05 * g);
    assert_eq!(n_above, n_below + 3);
    assert!((above - below + 3.0).abs() <= 0.05, "{below} {above}");
    assert!((below + n_below as f64).abs() <= 0.05);
}

#[test]
fn fd_count_matches_shooting() {
    for g in [3.0, 10.0, 20.0] {
        let shooting = common::shooting_count(&|r| square_well_potential(r, g), 1.5);
        let pot = common::square_well(g);
        assert_eq!(count_bound_states(&pot, 10.0, 100).unwrap(), shooting, "g = {g}");
    }
    let gauss = common::shooting_count(&|r| -4.0 * (-r * r).exp(), 8.0);
    assert_eq!(count_fd(&|r| -4.0 * (-r * r).exp(), 10.0, 120), gauss);
}

#[test]
fn non_attractive_potentials_bind_nothing() {
    assert_eq!(count_fd(&|_| 0.0, 5.0, 60), 0);
    assert_eq!(count_fd(&|r| 3.0 * (-r * r).exp(), 5.0, 60), 0);
    let grid = build_disk_grid(1.0, 16, 32).unwrap();
    let repulsive = factorize_potential(Preset::SquareWell { radius: 1.0, sign: 1.0 }, 5.0, &grid).unwrap();
    assert_eq!(count_bound_states(&repulsive, 5.0, 60).unwrap(), 0);
}

#[test]
fn small_box_rejected() {
    let pot = common::square_well(10.0);
    assert!(matches!(count_bound_states(&pot, 2.0, 60), Err(LevinsonError::BadSweep(_))));
}

#[test]
fn p_resonant_fixture_refused() {
    let pot = common::square_well(5.7832);
    assert!(matches!(levinson_check(&pot, &spec(), &count_spec(1.0)), Err(LevinsonError::PResonancePresent(2))));
}

#[test]
fn sparse_sweep_aliases() {
    let pot = common::square_well(10.0);
    let sweep = levinson_sweep(&pot, &SweepSpec { adaptive: false, ..SweepSpec::new(1e-2, 1e3, 2, 64) }).unwrap();
    assert!(matches!(winding_number(&sweep, 0), Err(LevinsonError::PhaseAliasing { .. })));
}

#[test]
fn short_sweeps_rejected() {
    let pot = common::square_well(1.0);
    let sweep = levinson_sweep(&pot, &SweepSpec { adaptive: false, ..SweepSpec::new(1.0, 2.0, 2, 64) }).unwrap();
    assert!(matches!(winding_number(&sweep[..2], 0), Err(LevinsonError::BadSweep(_))));
    assert!(levinson_sweep(&pot, &SweepSpec::new(2.0, 1.0, 10, 64)).is_err());
}

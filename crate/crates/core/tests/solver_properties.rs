use std::f64::consts::PI;

use lumen_core::envelope::envelope_integrand;
use lumen_core::solver::{overshoot_minimality_check, solve_discrete, solve_general};
use lumen_core::{
    DiscreteTarget, DomainSpec, IntensityField, PlanarDensity, SolverConfig, SphericalGrid, Vec3, WeightModel,
};

fn desk_target() -> DiscreteTarget {
    DiscreteTarget::points(
        vec![
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(0.3, 0.0, -1.0),
            Vec3::new(-0.3, 0.0, -1.0),
            Vec3::new(0.0, 0.3, -1.0),
            Vec3::new(0.0, -0.3, -1.0),
        ],
        vec![0.04, 0.03, 0.03, 0.03, 0.03],
        0,
    )
    .unwrap()
}

fn hemisphere(resolution: usize) -> (SphericalGrid, IntensityField) {
    let grid = SphericalGrid::build(&DomainSpec::hemisphere(Vec3::z()).unwrap(), resolution).unwrap();
    let f = IntensityField::constant(1.0, &grid).unwrap();
    (grid, f)
}

#[test]
fn near_solve_meets_its_contract() {
    let (grid, f) = hemisphere(5_000);
    let target = desk_target();
    let cfg = SolverConfig::near(15.0 / 8.0, 5.0 / 3.0);
    let rep = solve_discrete(&grid, &f, &target, &cfg).unwrap();
    assert!(rep.max_residual <= cfg.residual_tol);
    assert!(rep.overshoot > cfg.residual_tol * target.masses()[0]);
    let m = target.max_distance();
    assert!(rep.focal.values.iter().all(|&d| d >= 15.0 / 8.0 * m));
    assert_eq!(rep.focal.values[0], 15.0 / 8.0 * 5.0 / 3.0 * m);
    assert_eq!(rep.coverage, 1.0);
    assert!(rep.regularity.harnack_ratio <= 5.0 / 3.0);

    // Conservation: the atoms partition the integral of f F.
    let r = &rep.reflector;
    let integrand = envelope_integrand(r, &grid, &WeightModel::InverseSquare);
    let whole = grid.integrate(|j, _| f.values()[j] * integrand[j]).unwrap();
    let sum: f64 = rep.measure.values.iter().sum();
    assert!((sum - whole).abs() <= 1e-12 * whole);
}

#[test]
fn overshoot_is_minimal_under_permuted_sweeps() {
    let (grid, f) = hemisphere(3_000);
    let target = desk_target();
    let cfg = SolverConfig::near(15.0 / 8.0, 5.0 / 3.0);
    let rep = solve_discrete(&grid, &f, &target, &cfg).unwrap();
    let out = overshoot_minimality_check(&grid, &f, &target, &cfg, &rep, 3, 9).unwrap();
    assert_eq!(out.trials, 3);
    assert!(out.max_deviation <= 10.0 * cfg.bisection_tol);
}

#[test]
fn far_solve_stays_in_its_radius_band() {
    let domain = DomainSpec::cap(Vec3::z(), PI / 6.0).unwrap();
    let grid = SphericalGrid::build(&domain, 20_000).unwrap();
    let f = IntensityField::constant(1.0, &grid).unwrap();
    let polar = 2.0 * PI / 3.0;
    let dirs: Vec<Vec3> = (0..4)
        .map(|k| {
            let phi = k as f64 * PI / 2.0;
            Vec3::new(polar.sin() * phi.cos(), polar.sin() * phi.sin(), polar.cos())
        })
        .collect();
    let target = DiscreteTarget::directions(dirs, vec![2.5e-4, 1.2e-4, 1.2e-4, 1.2e-4], 0).unwrap();
    let cfg = SolverConfig::far(0.5, 1.0, 8.0);
    let rep = solve_discrete(&grid, &f, &target, &cfg).unwrap();
    assert!(rep.max_residual <= cfg.residual_tol);
    assert!(rep.overshoot > 0.0);
    for x in grid.nodes() {
        let rho = rep.reflector.radius(x);
        assert!((1.0..=16.0).contains(&rho), "rho = {rho}");
    }
}

#[test]
fn constant_weight_solve_matches_masses() {
    let (grid, f) = hemisphere(20_000);
    let flux = f.total_flux();
    let target = DiscreteTarget::points(
        vec![Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.3, 0.0, -1.0), Vec3::new(-0.3, 0.0, -1.0)],
        vec![0.5 * flux, 0.2 * flux, 0.2 * flux],
        0,
    )
    .unwrap();
    let mut cfg = SolverConfig::near(15.0 / 8.0, 5.0 / 3.0);
    cfg.weight = WeightModel::Constant;
    let rep = solve_discrete(&grid, &f, &target, &cfg).unwrap();
    assert!(rep.max_residual <= cfg.residual_tol);
    assert!((rep.measure.values[0] - 0.6 * flux).abs() <= 0.01 * flux);
}

#[test]
fn refinement_sup_change_decreases() {
    let domain = DomainSpec::cap(Vec3::z(), PI / 3.0).unwrap();
    let grid = SphericalGrid::build(&domain, 5_000).unwrap();
    let f = IntensityField::constant(1.0, &grid).unwrap();
    let delta = 15.0 / 8.0;
    let m = (1.2f64 * 1.2 + 0.1 * 0.1).sqrt();
    let c = 108.0 / 3125.0 / (m * m);
    let eta = 0.5 * c * f.total_flux();
    let density = eta / 0.04;
    let target = PlanarDensity::new(
        Vec3::zeros(),
        Vec3::x(),
        Vec3::y(),
        [1.0, 1.2],
        [-0.1, 0.1],
        move |_, _| density,
        [1.013, 0.007],
        6,
    )
    .unwrap();
    let mut cfg = SolverConfig::near(delta, 5.0 / 3.0);
    cfg.max_levels = 3;
    cfg.uniform_tol = 0.0;
    let rep = solve_general(&grid, &f, &target, &cfg).unwrap();
    assert_eq!(rep.levels.len(), 3);
    let changes: Vec<f64> = rep.levels.iter().filter_map(|l| l.sup_change).collect();
    assert!(changes[1] < changes[0], "{changes:?}");
    assert!(rep.report.max_residual <= cfg.residual_tol);
    assert_eq!(rep.partition.len(), 16);
}

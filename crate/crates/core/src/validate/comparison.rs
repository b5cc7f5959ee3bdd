use crate::envelope::{reflector_measure, WeightModel};
use crate::error::{LumenError, Result};
use crate::geometry::DeltaBound;
use crate::numeric::pairwise_sum;
use crate::solver::{feasibility_constant, solve_discrete, FieldMode, SolveReport, SolverConfig};
use crate::sphere_domain::{DiscreteTarget, IntensityField, SphericalGrid, TargetKind};

/// Inverse-square measure of the constant-weight reflector against the
/// target, over `E = D \ {P_1}`.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub delta: f64,
    pub c: f64,
    /// `C(delta, k delta, M)`.
    pub constant: f64,
    /// `((1 + c)/(1 - c))^5 - 1`.
    pub bound_factor: f64,
    /// Factor applied to the target masses to make the calibration exact.
    pub calibration_scale: f64,
    pub eta_d: f64,
    pub eta_e: f64,
    /// `mu*(E)` of the constant-weight reflector.
    pub mu_star_e: f64,
    /// `mu*(E) - eta(E)`.
    pub gap: f64,
    /// `bound_factor * eta(D)`.
    pub bound: f64,
    /// `0 < gap <= bound`.
    pub holds: bool,
    /// Solve with `F = 1` and masses `g_i / C`.
    pub constant_solve: SolveReport,
    /// Inverse-square solve of the same instance.
    pub inverse_square_solve: SolveReport,
    /// `mu(E) - eta(E)` of the inverse-square solve.
    pub inverse_square_gap: f64,
}

/// Compares the reflector solving the classical constant-weight problem with
/// masses `g_i / C` to the inverse-square solution.
///
/// Requires near-field mode with `k = (1 + c)/(1 - c)` and
/// `int f = eta(D) / C` to relative `1e-9`; the masses are then rescaled so
/// the calibration holds to rounding.
pub fn compare_constant_weight(
    grid: &SphericalGrid,
    f: &IntensityField,
    target: &DiscreteTarget,
    config: &SolverConfig,
) -> Result<ComparisonReport> {
    let FieldMode::Near { delta, k } = config.mode else {
        return Err(LumenError::invalid("comparison needs near-field mode"));
    };
    if target.kind() != TargetKind::Points {
        return Err(LumenError::invalid("comparison needs a point target"));
    }
    let bound = DeltaBound::new(delta)?;
    let ratio = bound.ratio();
    if (k - ratio).abs() > 1e-9 * ratio {
        return Err(LumenError::invalid(format!("comparison needs k = (1 + c)/(1 - c) = {ratio}, got {k}")));
    }
    let constant = feasibility_constant(delta, k, target.max_distance())?;
    let flux = f.total_flux();
    let scale = constant * flux / target.total_mass();
    if !((scale - 1.0).abs() <= 1e-9) {
        return Err(LumenError::invalid(format!(
            "calibration int f = eta(D)/C is off by a factor {scale}"
        )));
    }
    let calibrated = target.scaled(scale)?;

    let mut classical = config.clone();
    classical.weight = WeightModel::Constant;
    let constant_solve = solve_discrete(grid, f, &calibrated.scaled(1.0 / constant)?, &classical)?;

    let mut physical = config.clone();
    physical.weight = WeightModel::InverseSquare;
    let inverse_square_solve = solve_discrete(grid, f, &calibrated, &physical)?;

    let masses = calibrated.masses();
    let eta_d = pairwise_sum(masses);
    let eta_e = pairwise_sum(&masses[1..]);
    let mu_star = reflector_measure(&constant_solve.reflector, grid, f, &WeightModel::InverseSquare)?;
    let mu_star_e = pairwise_sum(&mu_star.values[1..]);
    let gap = mu_star_e - eta_e;
    let bound_factor = ratio.powi(5) - 1.0;
    let inverse_square_gap = pairwise_sum(&inverse_square_solve.measure.values[1..]) - eta_e;

    Ok(ComparisonReport {
        delta,
        c: bound.c(),
        constant,
        bound_factor,
        calibration_scale: scale,
        eta_d,
        eta_e,
        mu_star_e,
        gap,
        bound: bound_factor * eta_d,
        holds: gap > 0.0 && gap <= bound_factor * eta_d,
        constant_solve,
        inverse_square_solve,
        inverse_square_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Vec3;
    use crate::sphere_domain::DomainSpec;

    fn instance(delta: f64, miscalibrate: f64) -> (SphericalGrid, IntensityField, DiscreteTarget, SolverConfig) {
        let grid = SphericalGrid::build(&DomainSpec::hemisphere(Vec3::z()).unwrap(), 20_000).unwrap();
        let f = IntensityField::constant(1.0, &grid).unwrap();
        let pts = vec![Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.3, 0.0, -1.0), Vec3::new(-0.2, 0.25, -1.0)];
        let ratio = DeltaBound::new(delta).unwrap().ratio();
        let m = pts.iter().map(|p| p.norm()).fold(0.0, f64::max);
        let eta = feasibility_constant(delta, ratio, m).unwrap() * f.total_flux() * miscalibrate;
        let target = DiscreteTarget::points(pts, vec![0.4 * eta, 0.35 * eta, 0.25 * eta], 0).unwrap();
        (grid, f, target, SolverConfig::near(delta, ratio))
    }

    #[test]
    fn gap_is_positive_and_bounded() {
        let (grid, f, target, cfg) = instance(15.0 / 8.0, 1.0);
        let rep = compare_constant_weight(&grid, &f, &target, &cfg).unwrap();
        assert!((rep.bound_factor - (3125.0 / 243.0 - 1.0)).abs() < 1e-12);
        assert!(rep.holds, "gap {} bound {}", rep.gap, rep.bound);
        assert!(rep.inverse_square_gap.abs() <= 2.0 * cfg.residual_tol * rep.eta_e);
    }

    #[test]
    fn rejects_a_broken_calibration() {
        let (grid, f, target, cfg) = instance(15.0 / 8.0, 0.9);
        assert!(matches!(
            compare_constant_weight(&grid, &f, &target, &cfg),
            Err(LumenError::InvalidArgument(_))
        ));
    }

    #[test]
    fn rejects_k_off_the_ratio() {
        let (grid, f, target, _) = instance(15.0 / 8.0, 1.0);
        let cfg = SolverConfig::near(15.0 / 8.0, 2.0);
        assert!(compare_constant_weight(&grid, &f, &target, &cfg).is_err());
    }
}

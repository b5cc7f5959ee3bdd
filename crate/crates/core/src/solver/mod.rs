//! Feasibility gating, the discrete near- and far-field solvers, the
//! refinement driver for planar densities, visibility and the optimal `delta`.
//!
//! Solutions are unique up to the fixed `d_1` only when the closed aperture is
//! connected. Domain specs are not checked for connectivity.

mod discrete;
mod general;

pub use discrete::{overshoot_minimality_check, solve_discrete, MinimalityOutcome};
pub use general::{solve_general, GeneralReport, LevelSummary};

use crate::envelope::{FocalVector, MeasureVector, Reflector, ReflectorKind, RegularityReport, WeightModel};
use crate::error::{LumenError, Result};
use crate::geometry::{c_delta, DeltaBound};
use crate::numeric::Vec3;
use crate::sphere_domain::{DomainSpec, TargetKind, TargetMeasure};

/// Near field (ellipsoids, class `A(delta)`) or far field (paraboloids,
/// class `A(a)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldMode {
    Near { delta: f64, k: f64 },
    Far { delta: f64, a: f64, a_prime: f64 },
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub mode: FieldMode,
    pub weight: WeightModel,
    /// Relative per-atom tolerance on `|mu_i - g_i| / g_i`.
    pub residual_tol: f64,
    /// Absolute tolerance on focal parameters.
    pub bisection_tol: f64,
    pub max_sweeps: usize,
    /// Factor above the smallest initial focal parameter that sends all flux
    /// to the overshoot atom; must exceed 1.
    pub init_t: f64,
    /// Permutation of `1..N` for the sweep; `None` sweeps in index order.
    pub sweep_order: Option<Vec<usize>>,
    /// Refinement stops once `sup |rho_{l+1} - rho_l|` drops below this.
    pub uniform_tol: f64,
    /// Number of partition levels tried by the refinement driver.
    pub max_levels: usize,
}

impl SolverConfig {
    pub fn near(delta: f64, k: f64) -> Self {
        Self::with_mode(FieldMode::Near { delta, k })
    }

    pub fn far(delta: f64, a: f64, a_prime: f64) -> Self {
        Self::with_mode(FieldMode::Far { delta, a, a_prime })
    }

    fn with_mode(mode: FieldMode) -> Self {
        Self {
            mode,
            weight: WeightModel::InverseSquare,
            residual_tol: 1e-3,
            bisection_tol: 1e-9,
            max_sweeps: 5_000,
            init_t: 1.05,
            sweep_order: None,
            uniform_tol: 1e-3,
            max_levels: 3,
        }
    }

    pub fn kind(&self) -> ReflectorKind {
        match self.mode {
            FieldMode::Near { .. } => ReflectorKind::Near,
            FieldMode::Far { .. } => ReflectorKind::Far,
        }
    }

    pub fn delta(&self) -> f64 {
        match self.mode {
            FieldMode::Near { delta, .. } | FieldMode::Far { delta, .. } => delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            FieldMode::Near { delta, k } => {
                let bound = DeltaBound::new(delta)?;
                if !(k >= bound.ratio() * (1.0 - 1e-12)) {
                    return Err(LumenError::invalid(format!(
                        "k = {k} is below (1 + c_delta)/(1 - c_delta) = {}",
                        bound.ratio()
                    )));
                }
            }
            FieldMode::Far { delta, a, a_prime } => {
                if !(delta > 0.0 && delta < 1.0) {
                    return Err(LumenError::invalid(format!("far-field delta must lie in (0, 1), got {delta}")));
                }
                if !(a > 0.0 && a.is_finite()) {
                    return Err(LumenError::invalid(format!("a must be positive, got {a}")));
                }
                if !(a_prime >= 4.0 * a / delta * (1.0 - 1e-12)) {
                    return Err(LumenError::invalid(format!(
                        "a' = {a_prime} is below 4a/delta = {}",
                        4.0 * a / delta
                    )));
                }
            }
        }
        if !(self.residual_tol > 0.0 && self.bisection_tol > 0.0) {
            return Err(LumenError::invalid("tolerances must be positive"));
        }
        if !(self.init_t > 1.0 && self.init_t.is_finite()) {
            return Err(LumenError::invalid(format!("init_t must exceed 1, got {}", self.init_t)));
        }
        if self.max_sweeps == 0 {
            return Err(LumenError::invalid("max_sweeps must be positive"));
        }
        Ok(())
    }

    /// Lower bound of the weighted integrand over admissible envelopes whose
    /// overshoot quadric is fixed at its initial focal parameter.
    ///
    /// `max_distance` is `M` (ignored in the far field).
    pub fn feasibility_constant(&self, max_distance: f64) -> Result<f64> {
        self.validate()?;
        match (self.mode, &self.weight) {
            (FieldMode::Near { delta, k }, WeightModel::InverseSquare) => {
                feasibility_constant(delta, k, max_distance)
            }
            (FieldMode::Far { delta, a_prime, .. }, WeightModel::InverseSquare) => {
                feasibility_constant_far(a_prime, delta)
            }
            (FieldMode::Near { delta, k }, w) => {
                let c = c_delta(delta)?;
                let m = check_distance(max_distance)?;
                w.min_over([(1.0 - c) / (1.0 + c), 1.0], [delta * m / (1.0 + c), k * delta * m / (1.0 - c)])
            }
            (FieldMode::Far { delta, a, a_prime }, w) => w.min_over([delta / 2.0, 1.0], [a, a_prime / delta]),
        }
    }
}

fn check_distance(m: f64) -> Result<f64> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(LumenError::invalid(format!("M must be positive, got {m}")));
    }
    Ok(m)
}

/// `C(delta, k delta, M) = (1 - c)^3 / ((1 + c) (k delta M)^2)`.
pub fn feasibility_constant(delta: f64, k: f64, max_distance: f64) -> Result<f64> {
    let bound = DeltaBound::new(delta)?;
    let m = check_distance(max_distance)?;
    if !(k >= bound.ratio() * (1.0 - 1e-12)) {
        return Err(LumenError::invalid(format!(
            "k = {k} is below (1 + c_delta)/(1 - c_delta) = {}",
            bound.ratio()
        )));
    }
    let c = bound.c();
    let kdm = k * delta * m;
    Ok((1.0 - c).powi(3) / ((1.0 + c) * kdm * kdm))
}

/// `C(a', delta) = delta^3 / (2 a'^2)`.
pub fn feasibility_constant_far(a_prime: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(LumenError::invalid(format!("far-field delta must lie in (0, 1), got {delta}")));
    }
    if !(a_prime > 0.0 && a_prime.is_finite()) {
        return Err(LumenError::invalid(format!("a' must be positive, got {a_prime}")));
    }
    Ok(delta.powi(3) / (2.0 * a_prime * a_prime))
}

/// Outcome of the energy condition `integral f >= eta(D) / C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyCheck {
    pub feasible: bool,
    /// `integral f - eta(D) / C`, snapped to 0 within `1e-12` of the flux.
    pub margin: f64,
    pub flux: f64,
    pub required: f64,
    pub constant: f64,
}

pub fn check_energy_condition(flux: f64, eta: f64, constant: f64) -> Result<EnergyCheck> {
    if !(constant > 0.0 && constant.is_finite()) {
        return Err(LumenError::invalid(format!("feasibility constant must be positive, got {constant}")));
    }
    let required = eta / constant;
    let mut margin = flux - required;
    if margin.abs() <= 1e-12 * flux.abs() {
        margin = 0.0;
    }
    Ok(EnergyCheck { feasible: margin >= 0.0, margin, flux, required, constant })
}

/// Whether the overshoot atom receives flux beyond the quadrature tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OvershootCase {
    /// `mu_1 - g_1 > residual_tol * g_1`.
    Strict,
    /// The overshoot is within tolerance of an exact match.
    Matched,
}

/// Converged discrete solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub reflector: Reflector,
    pub focal: FocalVector,
    pub measure: MeasureVector,
    pub targets: Vec<f64>,
    /// `|mu_i - g_i| / g_i`; entry 0 (the overshoot atom) is 0.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    /// `mu_1 - g_1`.
    pub overshoot: f64,
    pub overshoot_case: OvershootCase,
    pub sweeps: usize,
    /// Whether the last sweep moved every coordinate by at most `bisection_tol`.
    pub polished: bool,
    pub tie_fraction: f64,
    pub coverage: f64,
    pub energy: EnergyCheck,
    /// Floor on focal parameters: `delta M` (near) or `2a` (far).
    pub floor: f64,
    /// Max residual after each sweep.
    pub trace: Vec<f64>,
    pub regularity: RegularityReport,
}

/// The `delta` maximizing the feasibility constant at `k = (1+c)/(1-c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalDelta {
    pub delta: f64,
    pub c: f64,
    pub k: f64,
    pub constant: f64,
}

/// `r(delta) = (1 - c)^5 / (delta^2 (1 + c)^3)`, the feasibility constant at
/// `M = 1` with the smallest admissible `k`.
pub fn r_of_delta(delta: f64) -> Result<f64> {
    let c = c_delta(delta)?;
    Ok((1.0 - c).powi(5) / (delta * delta * (1.0 + c).powi(3)))
}

/// Maximizes `r` over `delta > 0`.
///
/// With `delta = (1 - c^2) / (2c)` the objective is `4 c^2 (1-c)^3 / (1+c)^5`,
/// whose log-derivative `2/c - 3/(1-c) - 5/(1+c)` decreases strictly on
/// `(0, 1)`; its root is found by bisection.
pub fn optimal_delta(max_distance: f64) -> Result<OptimalDelta> {
    let m = check_distance(max_distance)?;
    let slope = |c: f64| 2.0 / c - 3.0 / (1.0 - c) - 5.0 / (1.0 + c);
    let (mut lo, mut hi) = (1e-6, 1.0 - 1e-6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * mid {
            break;
        }
    }
    let c = 0.5 * (lo + hi);
    let delta = (1.0 - c) * (1.0 + c) / (2.0 * c);
    let k = (1.0 + c) / (1.0 - c);
    let constant = 4.0 * c * c * (1.0 - c).powi(3) / (1.0 + c).powi(5) / (m * m);
    Ok(OptimalDelta { delta, c, k, constant })
}

/// Obstruction threshold and shadow test for a near-field target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityReport {
    pub delta_d: f64,
    /// No target point lies in a direction of the closed aperture.
    pub shadow_clear: bool,
    /// `delta > delta_D`.
    pub obstruction_clear: bool,
}

/// `delta_D = (1 - q^2) / (2q)` with `q = min |OP| / (max |OP| + diam D)`.
pub fn obstruction_threshold(min_distance: f64, max_distance: f64, diameter: f64) -> f64 {
    let q = min_distance / (max_distance + diameter);
    ((1.0 - q) * (1.0 + q) / (2.0 * q)).max(0.0)
}

pub fn visibility_report(target: &TargetMeasure, domain: &DomainSpec, delta: f64) -> Result<VisibilityReport> {
    let delta_d = obstruction_threshold(target.min_distance(), target.max_distance(), target.diameter());
    let directions: Vec<Vec3> = match target {
        TargetMeasure::Discrete(t) => {
            if t.kind() != TargetKind::Points {
                return Err(LumenError::invalid("visibility applies to near-field targets only"));
            }
            t.locations().iter().map(|p| p.normalize()).collect()
        }
        TargetMeasure::Planar(p) => {
            let n = 64;
            let (s, t) = (p.s_range(), p.t_range());
            let mut dirs = Vec::new();
            for i in 0..=n {
                for j in 0..=n {
                    let a = s[0] + (s[1] - s[0]) * i as f64 / n as f64;
                    let b = t[0] + (t[1] - t[0]) * j as f64 / n as f64;
                    if p.density(a, b) > 0.0 {
                        dirs.push(p.point(a, b).normalize());
                    }
                }
            }
            dirs
        }
    };
    let shadow_clear = directions.iter().all(|x| domain.margin(x) < 0.0);
    Ok(VisibilityReport { delta_d, shadow_clear, obstruction_clear: delta > delta_d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere_domain::DiscreteTarget;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn near_constant_examples() {
        assert_relative_eq!(feasibility_constant(15.0 / 8.0, 5.0 / 3.0, 1.0).unwrap(), 108.0 / 3125.0, max_relative = 1e-14);
        assert_relative_eq!(feasibility_constant(15.0 / 8.0, 5.0 / 3.0, 2.0).unwrap(), 27.0 / 3125.0, max_relative = 1e-14);
        assert_relative_eq!(feasibility_constant(0.75, 3.0, 1.0).unwrap(), 4.0 / 243.0, max_relative = 1e-14);
        assert!(matches!(feasibility_constant(0.75, 2.9, 1.0), Err(LumenError::InvalidArgument(_))));
    }

    #[test]
    fn far_constant_examples() {
        assert_relative_eq!(feasibility_constant_far(2.0, 0.5).unwrap(), 1.0 / 64.0);
        let r = feasibility_constant_far(1.0, 0.3).unwrap() / feasibility_constant_far(2.0, 0.3).unwrap();
        assert_relative_eq!(r, 4.0, max_relative = 1e-14);
        assert!((feasibility_constant_far(1.0, 1.0 - 1e-12).unwrap() - 0.5).abs() < 1e-11);
        assert!(feasibility_constant_far(1.0, 1.0).is_err());
    }

    #[test]
    fn weighted_constant_reduces_to_closed_form() {
        let mut cfg = SolverConfig::near(15.0 / 8.0, 2.0);
        let exact = cfg.feasibility_constant(1.3).unwrap();
        cfg.weight = WeightModel::custom(|u, v| u / (v * v));
        assert_relative_eq!(cfg.feasibility_constant(1.3).unwrap(), exact, max_relative = 1e-12);
        let far = SolverConfig::far(0.5, 1.0, 8.0);
        assert_relative_eq!(far.feasibility_constant(1.0).unwrap(), 1.0 / 1024.0);
    }

    #[test]
    fn energy_condition_examples() {
        let c = 108.0 / 3125.0;
        let flux = 2.0 * PI;
        let exact = check_energy_condition(flux, c * flux, c).unwrap();
        assert!(exact.feasible);
        assert_eq!(exact.margin, 0.0);
        assert!(!check_energy_condition(flux, 2.0 * c * flux, c).unwrap().feasible);
        let m = check_energy_condition(flux, 0.1, c).unwrap().margin;
        assert!((m - (2.0 * PI - 0.1 * 3125.0 / 108.0)).abs() < 1e-12);
        assert!((m - 3.389).abs() < 1e-3);
    }

    #[test]
    fn optimal_delta_at_unit_distance() {
        let o = optimal_delta(1.0).unwrap();
        assert!((o.delta - 1.875).abs() <= 1e-6);
        assert!((o.c - 0.25).abs() <= 1e-8);
        assert!((o.k - 5.0 / 3.0).abs() <= 1e-8);
        assert!((o.constant - 108.0 / 3125.0).abs() <= 1e-10);
        assert!((optimal_delta(2.0).unwrap().constant - 27.0 / 3125.0).abs() <= 1e-10);
    }

    #[test]
    fn r_is_maximal_at_optimum() {
        let best = r_of_delta(15.0 / 8.0).unwrap();
        assert_relative_eq!(best, 108.0 / 3125.0, max_relative = 1e-14);
        assert!(r_of_delta(1.0).unwrap() < best);
        assert!(r_of_delta(4.0).unwrap() < best);
        assert!(r_of_delta(1e-6).unwrap() < 1e-9);
        assert!(r_of_delta(1e6).unwrap() < 1e-9);
    }

    #[test]
    fn obstruction_threshold_examples() {
        assert_eq!(obstruction_threshold(1.0, 1.0, 0.0), 0.0);
        assert_relative_eq!(obstruction_threshold(1.0, 1.0, 1.0), 0.75);
        assert_relative_eq!(obstruction_threshold(3.0, 3.0, 3.0), 0.75);
    }

    #[test]
    fn visibility_of_points_below_hemisphere() {
        let t = DiscreteTarget::points(vec![Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.3, 0.0, -1.0)], vec![1.0, 1.0], 0).unwrap();
        let domain = DomainSpec::hemisphere(Vec3::z()).unwrap();
        let v = visibility_report(&TargetMeasure::Discrete(t), &domain, 15.0 / 8.0).unwrap();
        assert!(v.shadow_clear);
        assert!(v.obstruction_clear);
        assert!(v.delta_d > 0.0);
        let v = visibility_report(
            &TargetMeasure::Discrete(DiscreteTarget::points(vec![Vec3::z()], vec![1.0], 0).unwrap()),
            &domain,
            1.0,
        )
        .unwrap();
        assert!(!v.shadow_clear);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::near(15.0 / 8.0, 5.0 / 3.0).validate().is_ok());
        assert!(SolverConfig::near(15.0 / 8.0, 1.5).validate().is_err());
        assert!(SolverConfig::far(0.5, 1.0, 8.0).validate().is_ok());
        assert!(SolverConfig::far(0.5, 1.0, 7.0).validate().is_err());
        assert!(SolverConfig::far(1.5, 1.0, 8.0).validate().is_err());
        let mut c = SolverConfig::near(1.0, 10.0);
        c.init_t = 1.0;
        assert!(c.validate().is_err());
    }
}

//! Closed-form geometry of the supporting quadrics.
//!
//! Every quadric has one focus at the origin `O`. An [`Ellipsoid`] has its
//! second focus at a finite point `P`; a [`Paraboloid`] is the eccentricity-one
//! limit with `P` sent to infinity along the axis `m`. Both use the polar form
//! `rho(x) = d / (1 - eps * x.m)` for unit directions `x`, where `d` is the
//! focal parameter (the radius of the circle cut by the plane through `O`
//! perpendicular to the axis).

use crate::error::{LumenError, Result};
use crate::numeric::Vec3;

/// Smallest admissible `1 - x.m` for paraboloid evaluation.
pub const PARABOLOID_DIRECTION_TOL: f64 = 1e-12;

/// Eccentricity of the ellipsoid with foci `O`, `P` (|OP| = `focal_distance`)
/// and focal parameter `d`.
///
/// Evaluated as `1 / (sqrt(1 + r^2) + r)` with `r = d / OP`, which equals
/// `sqrt(1 + r^2) - r` without the cancellation at large `r`.
pub fn eccentricity_from_focal(d: f64, focal_distance: f64) -> Result<f64> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(LumenError::invalid(format!("focal parameter must be positive, got {d}")));
    }
    if !(focal_distance > 0.0 && focal_distance.is_finite()) {
        return Err(LumenError::invalid(format!(
            "focal distance |OP| must be positive, got {focal_distance}"
        )));
    }
    let r = d / focal_distance;
    Ok(1.0 / ((1.0 + r * r).sqrt() + r))
}

/// Inverse of [`eccentricity_from_focal`]: `d = OP (1 - eps^2) / (2 eps)`.
pub fn focal_from_eccentricity(eps: f64, focal_distance: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(LumenError::invalid(format!("eccentricity must lie in (0, 1), got {eps}")));
    }
    if !(focal_distance > 0.0 && focal_distance.is_finite()) {
        return Err(LumenError::invalid(format!(
            "focal distance |OP| must be positive, got {focal_distance}"
        )));
    }
    Ok(focal_distance * (1.0 - eps) * (1.0 + eps) / (2.0 * eps))
}

/// Mirror reflection of the unit direction `incident` about the unit normal.
pub fn reflect_direction(incident: &Vec3, normal: &Vec3) -> Vec3 {
    incident - normal * (2.0 * incident.dot(normal))
}

/// `c_delta = -delta + sqrt(1 + delta^2)`, the eccentricity ceiling for
/// ellipsoids with `d >= delta * OP`.
pub fn c_delta(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(LumenError::invalid(format!("delta must be positive, got {delta}")));
    }
    // Same cancellation-free form as the eccentricity.
    Ok(1.0 / ((1.0 + delta * delta).sqrt() + delta))
}

/// A distance-control parameter together with its eccentricity ceiling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaBound {
    delta: f64,
    c: f64,
}

impl DeltaBound {
    pub fn new(delta: f64) -> Result<Self> {
        Ok(Self { delta, c: c_delta(delta)? })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `(1 + c) / (1 - c)`: the Harnack ratio and the smallest admissible `k`.
    pub fn ratio(&self) -> f64 {
        (1.0 + self.c) / (1.0 - self.c)
    }

    /// Lower bound `(1 - c) / (1 + c)` on `x . nu` for admissible ellipsoids.
    pub fn min_cosine(&self) -> f64 {
        (1.0 - self.c) / (1.0 + self.c)
    }
}

/// Ellipsoid of revolution with foci `O` and `P`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    far_focus: Vec3,
    focal: f64,
    eccentricity: f64,
    axis: Vec3,
    focal_distance: f64,
}

impl Ellipsoid {
    /// Ellipsoid with far focus `far_focus` and focal parameter `d`.
    pub fn new(far_focus: Vec3, d: f64) -> Result<Self> {
        let focal_distance = far_focus.norm();
        let eccentricity = eccentricity_from_focal(d, focal_distance)?;
        Ok(Self {
            far_focus,
            focal: d,
            eccentricity,
            axis: far_focus / focal_distance,
            focal_distance,
        })
    }

    pub fn from_eccentricity(far_focus: Vec3, eps: f64) -> Result<Self> {
        let focal_distance = far_focus.norm();
        let d = focal_from_eccentricity(eps, focal_distance)?;
        Ok(Self {
            far_focus,
            focal: d,
            eccentricity: eps,
            axis: far_focus / focal_distance,
            focal_distance,
        })
    }

    pub fn far_focus(&self) -> Vec3 {
        self.far_focus
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn eccentricity(&self) -> f64 {
        self.eccentricity
    }

    pub fn axis(&self) -> Vec3 {
        self.axis
    }

    pub fn focal_distance(&self) -> f64 {
        self.focal_distance
    }

    /// String length `c = |X| + |X - P|` shared by all points of the surface.
    pub fn major_sum(&self) -> f64 {
        self.focal_distance / self.eccentricity
    }

    /// Polar radius `rho_d(x)`; `x` must be a unit vector.
    #[inline]
    pub fn radius(&self, x: &Vec3) -> f64 {
        self.focal / (1.0 - self.eccentricity * x.dot(&self.axis))
    }

    /// Outer unit normal at `rho_d(x) x`.
    #[inline]
    pub fn normal(&self, x: &Vec3) -> Vec3 {
        (x - self.axis * self.eccentricity).normalize()
    }

    /// Distance from the far focus to the ray reflected at `rho(x) x`.
    pub fn focus_miss(&self, x: &Vec3) -> f64 {
        let hit = x * self.radius(x);
        let reflected = reflect_direction(x, &self.normal(x));
        ray_point_distance(&hit, &reflected, &self.far_focus)
    }

    /// `(d / (1 + c_delta), d / (1 - c_delta))`, valid when `d >= delta * OP`.
    pub fn radius_bounds(&self, bound: &DeltaBound) -> Result<(f64, f64)> {
        // Relative slack for d assembled as delta * OP in floating point.
        if self.focal < bound.delta() * self.focal_distance * (1.0 - 1e-12) {
            return Err(LumenError::ConstraintViolated(format!(
                "focal parameter {} below delta * OP = {}",
                self.focal,
                bound.delta() * self.focal_distance
            )));
        }
        Ok((self.focal / (1.0 + bound.c()), self.focal / (1.0 - bound.c())))
    }
}

/// Paraboloid of revolution with focus `O`, axis `m` and focal parameter `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Paraboloid {
    axis: Vec3,
    focal: f64,
}

impl Paraboloid {
    pub fn new(axis: Vec3, d: f64) -> Result<Self> {
        if !(d > 0.0 && d.is_finite()) {
            return Err(LumenError::invalid(format!("focal parameter must be positive, got {d}")));
        }
        let n = axis.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(LumenError::invalid("paraboloid axis must be nonzero"));
        }
        Ok(Self { axis: axis / n, focal: d })
    }

    pub fn axis(&self) -> Vec3 {
        self.axis
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn radius(&self, x: &Vec3) -> Result<f64> {
        self.check_direction(x)?;
        Ok(self.radius_unchecked(x))
    }

    /// Polar radius without the degenerate-direction check; callers validate
    /// `x . m <= 1 - delta` once for the whole domain.
    #[inline]
    pub fn radius_unchecked(&self, x: &Vec3) -> f64 {
        self.focal / (1.0 - x.dot(&self.axis))
    }

    pub fn normal(&self, x: &Vec3) -> Result<Vec3> {
        self.check_direction(x)?;
        Ok(self.normal_unchecked(x))
    }

    #[inline]
    pub fn normal_unchecked(&self, x: &Vec3) -> Vec3 {
        (x - self.axis).normalize()
    }

    /// `(d / 2, d / delta)` given `max_dot = sup x . m <= 1 - delta` over the aperture.
    pub fn radius_bounds(&self, delta: f64, max_dot: f64) -> Result<(f64, f64)> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(LumenError::invalid(format!("far-field delta must lie in (0, 1), got {delta}")));
        }
        if max_dot > 1.0 - delta + 1e-12 {
            return Err(LumenError::ConstraintViolated(format!(
                "aperture reaches x.m = {max_dot} > 1 - delta = {}",
                1.0 - delta
            )));
        }
        Ok((self.focal / 2.0, self.focal / delta))
    }

    fn check_direction(&self, x: &Vec3) -> Result<()> {
        if 1.0 - x.dot(&self.axis) <= PARABOLOID_DIRECTION_TOL {
            return Err(LumenError::DegenerateDirection(format!(
                "direction {:?} is parallel to the paraboloid axis",
                x.as_slice()
            )));
        }
        Ok(())
    }
}

/// Either kind of supporting quadric, evaluated through the shared polar form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quadric {
    Ellipsoid(Ellipsoid),
    Paraboloid(Paraboloid),
}

impl Quadric {
    #[inline]
    pub fn radius(&self, x: &Vec3) -> f64 {
        match self {
            Quadric::Ellipsoid(e) => e.radius(x),
            Quadric::Paraboloid(p) => p.radius_unchecked(x),
        }
    }

    #[inline]
    pub fn normal(&self, x: &Vec3) -> Vec3 {
        match self {
            Quadric::Ellipsoid(e) => e.normal(x),
            Quadric::Paraboloid(p) => p.normal_unchecked(x),
        }
    }

    /// `(x . nu, rho)` at `rho(x) x`, see [`incidence`].
    #[inline]
    pub fn incidence(&self, x: &Vec3) -> (f64, f64) {
        incidence(self.focal(), self.eccentricity(), x.dot(&self.axis()))
    }

    pub fn focal(&self) -> f64 {
        match self {
            Quadric::Ellipsoid(e) => e.focal(),
            Quadric::Paraboloid(p) => p.focal(),
        }
    }

    /// Eccentricity, 1 for paraboloids.
    pub fn eccentricity(&self) -> f64 {
        match self {
            Quadric::Ellipsoid(e) => e.eccentricity(),
            Quadric::Paraboloid(_) => 1.0,
        }
    }

    pub fn axis(&self) -> Vec3 {
        match self {
            Quadric::Ellipsoid(e) => e.axis(),
            Quadric::Paraboloid(p) => p.axis(),
        }
    }
}

/// `(x . nu, rho)` of the quadric `rho = d / (1 - eps t)` at a direction with
/// `t = x . m`. Shared by the envelope and the solver so both produce the
/// same bits.
#[inline]
pub fn incidence(d: f64, eps: f64, t: f64) -> (f64, f64) {
    let a = 1.0 - eps * t;
    (a / (1.0 - 2.0 * eps * t + eps * eps).sqrt(), d / a)
}

/// Distance from `point` to the ray `{origin + t dir : t >= 0}` (`dir` unit).
pub fn ray_point_distance(origin: &Vec3, dir: &Vec3, point: &Vec3) -> f64 {
    let v = point - origin;
    let t = v.dot(dir).max(0.0);
    (v - dir * t).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit(v: [f64; 3]) -> Vec3 {
        Vec3::new(v[0], v[1], v[2]).normalize()
    }

    #[test]
    fn eccentricity_examples() {
        assert_relative_eq!(eccentricity_from_focal(0.75, 1.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(eccentricity_from_focal(1.5, 2.0).unwrap(), 0.5, epsilon = 1e-15);
        let direct = 101f64.sqrt() - 10.0;
        assert_relative_eq!(eccentricity_from_focal(10.0, 1.0).unwrap(), direct, max_relative = 1e-12);
        assert!((direct - 0.0498756).abs() < 1e-7);
    }

    #[test]
    fn eccentricity_rejects_nonpositive_inputs() {
        assert!(matches!(eccentricity_from_focal(0.0, 1.0), Err(LumenError::InvalidArgument(_))));
        assert!(matches!(eccentricity_from_focal(1.0, -1.0), Err(LumenError::InvalidArgument(_))));
    }

    #[test]
    fn focal_examples() {
        assert_relative_eq!(focal_from_eccentricity(0.5, 1.0).unwrap(), 0.75, epsilon = 1e-15);
        assert_relative_eq!(focal_from_eccentricity(0.5, 2.0).unwrap(), 1.5, epsilon = 1e-15);
        assert!(focal_from_eccentricity(1.0 - 1e-9, 1.0).unwrap() < 1e-8);
        assert!(focal_from_eccentricity(1.0, 1.0).is_err());
        assert!(focal_from_eccentricity(0.0, 1.0).is_err());
    }

    #[test]
    fn ellipsoid_radius_examples() {
        let e = Ellipsoid::from_eccentricity(Vec3::z() * (4.0 / 3.0), 0.5).unwrap();
        assert_relative_eq!(e.focal(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(e.radius(&Vec3::x()), 1.0, epsilon = 1e-15);
        assert_relative_eq!(e.radius(&Vec3::z()), 2.0, epsilon = 1e-15);
        assert_relative_eq!(e.radius(&-Vec3::z()), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn ellipsoid_normal_examples() {
        let e = Ellipsoid::from_eccentricity(Vec3::z(), 0.5).unwrap();
        assert_relative_eq!(e.normal(&Vec3::z()), Vec3::z(), epsilon = 1e-15);
        assert_relative_eq!(e.normal(&-Vec3::z()), -Vec3::z(), epsilon = 1e-15);
        let s5 = 5f64.sqrt();
        assert_relative_eq!(e.normal(&Vec3::x()), Vec3::new(2.0 / s5, 0.0, -1.0 / s5), epsilon = 1e-15);
    }

    #[test]
    fn ellipsoid_stores_consistent_eccentricity() {
        for &(d, op) in &[(0.3, 1.0), (5.0, 2.0), (1e-3, 1.0), (1e3, 1.0)] {
            let e = Ellipsoid::new(Vec3::new(0.0, op, 0.0), d).unwrap();
            let eps = e.eccentricity();
            let implied = 2.0 * eps * d / ((1.0 - eps) * (1.0 + eps));
            assert_relative_eq!(implied, op, max_relative = 1e-12);
        }
    }

    #[test]
    fn paraboloid_examples() {
        let p = Paraboloid::new(Vec3::z(), 1.0).unwrap();
        assert_relative_eq!(p.radius(&-Vec3::z()).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(p.radius(&Vec3::x()).unwrap(), 1.0, epsilon = 1e-15);
        let p2 = Paraboloid::new(Vec3::z(), 2.0).unwrap();
        let x = Vec3::new(3f64.sqrt() / 2.0, 0.0, 0.5);
        assert_relative_eq!(p2.radius(&x).unwrap(), 4.0, epsilon = 1e-14);
        assert!(matches!(p.radius(&Vec3::z()), Err(LumenError::DegenerateDirection(_))));

        assert_relative_eq!(p.normal(&-Vec3::z()).unwrap(), -Vec3::z(), epsilon = 1e-15);
        let s2 = 2f64.sqrt();
        assert_relative_eq!(p.normal(&Vec3::x()).unwrap(), Vec3::new(1.0 / s2, 0.0, -1.0 / s2), epsilon = 1e-15);
        assert!(matches!(p.normal(&Vec3::z()), Err(LumenError::DegenerateDirection(_))));
    }

    #[test]
    fn reflection_examples() {
        assert_relative_eq!(reflect_direction(&Vec3::z(), &Vec3::z()), -Vec3::z());
        assert_relative_eq!(reflect_direction(&Vec3::x(), &Vec3::z()), Vec3::x());
        let nu = unit([1.0, 0.0, 1.0]);
        assert_relative_eq!(reflect_direction(&Vec3::z(), &nu), -Vec3::x(), epsilon = 1e-15);
    }

    #[test]
    fn focus_property_examples() {
        let e = Ellipsoid::new(Vec3::z(), 0.75).unwrap();
        assert_relative_eq!(e.eccentricity(), 0.5, epsilon = 1e-15);
        assert!(e.focus_miss(&Vec3::x()) <= 1e-12);
        assert!(e.focus_miss(&Vec3::z()) <= 1e-15);
    }

    #[test]
    fn c_delta_examples() {
        assert_relative_eq!(c_delta(15.0 / 8.0).unwrap(), 0.25, epsilon = 1e-15);
        assert_relative_eq!(c_delta(0.75).unwrap(), 0.5, epsilon = 1e-15);
        assert!(c_delta(1e-12).unwrap() > 1.0 - 1e-11);
        assert!(c_delta(0.0).is_err());
        assert!(c_delta(-1.0).is_err());
    }

    #[test]
    fn radius_bounds_examples() {
        let bound = DeltaBound::new(0.75).unwrap();
        let e = Ellipsoid::new(Vec3::z() * (4.0 / 3.0), 1.0).unwrap();
        let (lo, hi) = e.radius_bounds(&bound).unwrap();
        assert_relative_eq!(lo, 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(hi, 2.0, epsilon = 1e-15);
        let too_small = Ellipsoid::new(Vec3::z() * 2.0, 1.0).unwrap();
        assert!(matches!(too_small.radius_bounds(&bound), Err(LumenError::ConstraintViolated(_))));

        let p = Paraboloid::new(Vec3::z(), 1.0).unwrap();
        assert_eq!(p.radius_bounds(0.5, 0.5).unwrap(), (0.5, 2.0));
        assert!(p.radius_bounds(0.5, 0.6).is_err());
    }

    fn arb_unit() -> impl Strategy<Value = Vec3> {
        (-1.0f64..1.0, 0.0f64..std::f64::consts::TAU).prop_map(|(z, phi)| {
            let r = (1.0 - z * z).sqrt();
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
    }

    proptest! {
        #[test]
        fn round_trip_focal_eccentricity(log_ratio in -3.0f64..3.0, op in 0.1f64..10.0) {
            let d = op * 10f64.powf(log_ratio);
            let eps = eccentricity_from_focal(d, op).unwrap();
            prop_assert!(eps > 0.0 && eps < 1.0);
            let back = focal_from_eccentricity(eps, op).unwrap();
            prop_assert!(((back - d) / d).abs() <= 1e-12);
        }

        #[test]
        fn eccentricity_decreases_and_radius_increases_in_d(
            op in 0.1f64..10.0, d in 0.01f64..20.0, bump in 1e-6f64..1.0, x in arb_unit(), m in arb_unit()
        ) {
            let d2 = d * (1.0 + bump);
            prop_assert!(eccentricity_from_focal(d2, op).unwrap() < eccentricity_from_focal(d, op).unwrap());
            let e1 = Ellipsoid::new(m * op, d).unwrap();
            let e2 = Ellipsoid::new(m * op, d2).unwrap();
            prop_assert!(e2.radius(&x) > e1.radius(&x));
        }

        #[test]
        fn reflection_preserves_length(x in arb_unit(), n in arb_unit()) {
            let y = reflect_direction(&x, &n);
            prop_assert!((y.norm() - 1.0).abs() <= 1e-14);
            prop_assert!((y.dot(&n) + x.dot(&n)).abs() <= 1e-14);
        }

        #[test]
        fn focus_property_holds(p in arb_unit(), op in 0.1f64..10.0, log_ratio in -2.0f64..2.0, x in arb_unit()) {
            let e = Ellipsoid::new(p * op, op * 10f64.powf(log_ratio)).unwrap();
            prop_assert!(e.focus_miss(&x) <= 1e-9 * op);
        }

        #[test]
        fn paraboloid_reflects_into_axis(m in arb_unit(), x in arb_unit(), d in 0.1f64..10.0) {
            prop_assume!(1.0 - x.dot(&m) > 1e-3);
            let p = Paraboloid::new(m, d).unwrap();
            let y = reflect_direction(&x, &p.normal(&x).unwrap());
            prop_assert!((y - m).norm() <= 1e-12);
            prop_assert!((x.dot(&p.normal(&x).unwrap()) - (x - m).norm() / 2.0).abs() <= 1e-14);
        }

        #[test]
        fn near_bounds_contain_radius_and_normal_cosine(
            delta in 0.05f64..5.0, slack in 1.0f64..4.0, op in 0.1f64..10.0, m in arb_unit(), x in arb_unit()
        ) {
            let bound = DeltaBound::new(delta).unwrap();
            let e = Ellipsoid::new(m * op, delta * op * slack).unwrap();
            prop_assert!(e.eccentricity() <= bound.c() * (1.0 + 1e-12));
            let (lo, hi) = e.radius_bounds(&bound).unwrap();
            let r = e.radius(&x);
            prop_assert!(r >= lo * (1.0 - 1e-12) && r <= hi * (1.0 + 1e-12));
            prop_assert!(x.dot(&e.normal(&x)) >= bound.min_cosine() - 1e-12);
        }

        #[test]
        fn far_bounds_contain_radius_and_normal_cosine(delta in 0.05f64..0.95, d in 0.1f64..10.0, m in arb_unit(), x in arb_unit()) {
            prop_assume!(x.dot(&m) <= 1.0 - delta);
            let p = Paraboloid::new(m, d).unwrap();
            let (lo, hi) = p.radius_bounds(delta, x.dot(&m)).unwrap();
            let r = p.radius(&x).unwrap();
            prop_assert!(r >= lo * (1.0 - 1e-12) && r <= hi * (1.0 + 1e-12));
            prop_assert!(x.dot(&p.normal(&x).unwrap()) >= delta / 2.0 - 1e-12);
        }
    }
}

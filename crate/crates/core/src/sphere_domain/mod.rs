//! The aperture `Omega` on the unit sphere, its quadrature, the source
//! intensity and the target measure.

mod grid;
mod intensity;
mod target;

pub use grid::{SphericalGrid, CELL_SAMPLES};
pub use intensity::IntensityField;
pub use target::{
    refine_partition, Cell, CellPartition, DiscreteTarget, PlanarDensity, TargetKind,
    TargetMeasure,
};

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{LumenError, Result};
use crate::numeric::{angle_between, orthonormal_frame, spherical_triangle_area, Vec3};

/// Closed aperture regions with a null boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    Sphere,
    /// Spherical cap `{x : angle(x, center) <= half_angle}`; `half_angle = pi/2`
    /// is a hemisphere.
    Cap { center: Vec3, half_angle: f64 },
    /// Convex geodesic polygon, vertices counter-clockwise seen from outside.
    Polygon { vertices: Vec<Vec3> },
}

impl DomainSpec {
    pub fn hemisphere(axis: Vec3) -> Result<Self> {
        Self::cap(axis, PI / 2.0)
    }

    pub fn cap(center: Vec3, half_angle: f64) -> Result<Self> {
        let n = center.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(LumenError::invalid("cap center must be a nonzero vector"));
        }
        if !(half_angle > 0.0 && half_angle <= PI) {
            return Err(LumenError::invalid(format!(
                "cap half-angle must lie in (0, pi], got {half_angle}"
            )));
        }
        Ok(DomainSpec::Cap { center: center / n, half_angle })
    }

    pub fn polygon(vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(LumenError::invalid("polygon needs at least three vertices"));
        }
        let mut unit = Vec::with_capacity(vertices.len());
        for v in &vertices {
            let n = v.norm();
            if !(n > 0.0 && n.is_finite()) {
                return Err(LumenError::invalid("polygon vertices must be nonzero"));
            }
            unit.push(v / n);
        }
        let k = unit.len();
        for i in 0..k {
            let a = unit[i];
            let b = unit[(i + 1) % k];
            let normal = a.cross(&b);
            if normal.norm() < 1e-12 {
                return Err(LumenError::invalid("polygon has a degenerate edge"));
            }
            let normal = normal.normalize();
            for (j, v) in unit.iter().enumerate() {
                if j != i && j != (i + 1) % k && v.dot(&normal) <= 0.0 {
                    return Err(LumenError::invalid(
                        "polygon must be convex and counter-clockwise seen from outside",
                    ));
                }
            }
        }
        Ok(DomainSpec::Polygon { vertices: unit })
    }

    /// Signed angular distance to the boundary, positive inside.
    ///
    /// 1-Lipschitz in the angular metric, which the grid pruning relies on.
    pub fn margin(&self, x: &Vec3) -> f64 {
        match self {
            DomainSpec::Sphere => PI,
            DomainSpec::Cap { center, half_angle } => half_angle - angle_between(x, center),
            DomainSpec::Polygon { vertices } => {
                let k = vertices.len();
                (0..k)
                    .map(|i| {
                        let n = vertices[i].cross(&vertices[(i + 1) % k]).normalize();
                        x.dot(&n).clamp(-1.0, 1.0).asin()
                    })
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        self.margin(x) >= 0.0
    }

    /// Exact area in steradians.
    pub fn area(&self) -> f64 {
        match self {
            DomainSpec::Sphere => 4.0 * PI,
            DomainSpec::Cap { half_angle, .. } => 2.0 * PI * (1.0 - half_angle.cos()),
            DomainSpec::Polygon { vertices } => {
                let k = vertices.len();
                (1..k - 1)
                    .map(|i| spherical_triangle_area(&vertices[0], &vertices[i], &vertices[i + 1]))
                    .sum()
            }
        }
    }

    /// Smallest cap containing the domain (exact for caps and the sphere).
    pub fn bounding_cap(&self) -> (Vec3, f64) {
        match self {
            DomainSpec::Sphere => (Vec3::z(), PI),
            DomainSpec::Cap { center, half_angle } => (*center, *half_angle),
            DomainSpec::Polygon { vertices } => {
                let center = vertices.iter().sum::<Vec3>().normalize();
                let radius = vertices
                    .iter()
                    .map(|v| angle_between(v, &center))
                    .fold(0.0, f64::max);
                (center, radius)
            }
        }
    }

    /// `sup { x . m : x in closure(Omega) }` for a unit vector `m`.
    pub fn max_dot(&self, m: &Vec3) -> f64 {
        match self {
            DomainSpec::Sphere => 1.0,
            DomainSpec::Cap { center, half_angle } => {
                let gap = angle_between(m, center) - half_angle;
                if gap <= 0.0 {
                    1.0
                } else {
                    gap.cos()
                }
            }
            DomainSpec::Polygon { vertices } => {
                if self.contains(m) {
                    return 1.0;
                }
                let k = vertices.len();
                let mut best = f64::NEG_INFINITY;
                for i in 0..k {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % k];
                    best = best.max(a.dot(m));
                    let n = a.cross(&b).normalize();
                    let p = m - n * m.dot(&n);
                    if p.norm() > 0.0 {
                        let p = p.normalize();
                        // p lies on the arc iff it sits between a and b.
                        if a.cross(&p).dot(&n) >= 0.0 && p.cross(&b).dot(&n) >= 0.0 {
                            best = best.max(p.dot(m));
                        }
                    }
                }
                best
            }
        }
    }

    /// A direction drawn uniformly from the domain.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let (center, radius) = self.bounding_cap();
        let (u, v) = orthonormal_frame(&center);
        let cos_r = radius.cos();
        loop {
            let z = 1.0 - rng.random::<f64>() * (1.0 - cos_r);
            let phi = 2.0 * PI * rng.random::<f64>();
            let s = (1.0 - z * z).max(0.0).sqrt();
            let x = center * z + u * (s * phi.cos()) + v * (s * phi.sin());
            if matches!(self, DomainSpec::Polygon { .. }) && !self.contains(&x) {
                continue;
            }
            return x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn octant() -> DomainSpec {
        DomainSpec::polygon(vec![Vec3::x(), Vec3::y(), Vec3::z()]).unwrap()
    }

    #[test]
    fn areas() {
        assert_relative_eq!(DomainSpec::Sphere.area(), 4.0 * PI);
        assert_relative_eq!(DomainSpec::hemisphere(Vec3::z()).unwrap().area(), 2.0 * PI, epsilon = 1e-14);
        assert_relative_eq!(DomainSpec::cap(Vec3::z(), PI / 3.0).unwrap().area(), PI, epsilon = 1e-14);
        assert_relative_eq!(octant().area(), PI / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(DomainSpec::cap(Vec3::zeros(), 1.0).is_err());
        assert!(DomainSpec::cap(Vec3::z(), 0.0).is_err());
        assert!(DomainSpec::polygon(vec![Vec3::x(), Vec3::y()]).is_err());
        assert!(DomainSpec::polygon(vec![Vec3::x(), Vec3::z(), Vec3::y()]).is_err());
    }

    #[test]
    fn margins() {
        let cap = DomainSpec::cap(Vec3::z(), 0.5).unwrap();
        assert_relative_eq!(cap.margin(&Vec3::z()), 0.5);
        assert_relative_eq!(cap.margin(&Vec3::x()), 0.5 - PI / 2.0, epsilon = 1e-15);
        let oct = octant();
        assert!(oct.contains(&Vec3::new(1.0, 1.0, 1.0).normalize()));
        assert!(!oct.contains(&Vec3::new(-1.0, 1.0, 1.0).normalize()));
    }

    #[test]
    fn max_dot_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let domains = [DomainSpec::cap(Vec3::z(), 0.5).unwrap(), octant()];
        let m = Vec3::new(-0.3, -0.2, -0.9).normalize();
        for d in &domains {
            let brute = (0..200_000).map(|_| d.sample(&mut rng).dot(&m)).fold(f64::NEG_INFINITY, f64::max);
            let exact = d.max_dot(&m);
            assert!(exact >= brute - 1e-12);
            assert!(exact - brute < 5e-3);
        }
        assert_eq!(octant().max_dot(&Vec3::new(1.0, 1.0, 1.0).normalize()), 1.0);
    }

    #[test]
    fn samples_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in [DomainSpec::cap(Vec3::new(1.0, 0.0, 1.0), 0.3).unwrap(), octant()] {
            for _ in 0..1000 {
                let x = d.sample(&mut rng);
                assert!((x.norm() - 1.0).abs() < 1e-14);
                assert!(d.margin(&x) > -1e-12);
            }
        }
    }
}

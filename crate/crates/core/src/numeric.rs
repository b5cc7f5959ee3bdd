//! Small numeric helpers shared across modules.

use nalgebra::Vector3;

pub type Vec3 = Vector3<f64>;

const PAIRWISE_BLOCK: usize = 64;

/// Pairwise (cascade) summation in a fixed order.
///
/// The split points depend only on the slice length, so the result is
/// bit-reproducible for a given input regardless of how the summands were
/// produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().fold(0.0, |acc, v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Orthonormal pair spanning the plane perpendicular to `axis`.
pub fn orthonormal_frame(axis: &Vec3) -> (Vec3, Vec3) {
    let a = axis.normalize();
    let helper = if a.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    let u = (helper - a * a.dot(&helper)).normalize();
    let v = a.cross(&u);
    (u, v)
}

/// Area of the spherical triangle with unit vertices `a`, `b`, `c`.
pub fn spherical_triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let num = a.dot(&b.cross(c)).abs();
    let den = 1.0 + a.dot(b) + b.dot(c) + c.dot(a);
    2.0 * num.atan2(den)
}

/// Angle between two unit vectors, accurate near 0 and pi.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_inputs() {
        let v: Vec<f64> = (0..10).map(|i| i as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&v), v.iter().sum::<f64>());
    }

    #[test]
    fn pairwise_is_accurate_on_long_inputs() {
        let v = vec![0.1; 1_000_000];
        assert!((pairwise_sum(&v) - 100_000.0).abs() < 1e-8);
    }

    #[test]
    fn octant_triangle_has_area_half_pi() {
        let area = spherical_triangle_area(&Vec3::x(), &Vec3::y(), &Vec3::z());
        assert!((area - std::f64::consts::FRAC_PI_2).abs() < 1e-14);
    }

    #[test]
    fn frame_is_orthonormal() {
        for axis in [Vec3::x(), Vec3::new(0.3, -0.2, 0.9), Vec3::z()] {
            let (u, v) = orthonormal_frame(&axis);
            let a = axis.normalize();
            assert!(u.dot(&a).abs() < 1e-14 && v.dot(&a).abs() < 1e-14);
            assert!(u.dot(&v).abs() < 1e-14);
            assert!((u.norm() - 1.0).abs() < 1e-14 && (v.norm() - 1.0).abs() < 1e-14);
        }
    }
}

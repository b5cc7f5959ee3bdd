use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::envelope::{Reflector, ReflectorKind};
use crate::error::{LumenError, Result};
use crate::sphere_domain::DomainSpec;

/// Points tested along each reflected segment, excluding its start.
const SEGMENT_STEPS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstructionReport {
    pub samples: usize,
    /// Rays whose segment to the focus leaves the reflector body over the aperture.
    pub violations: usize,
    /// Largest `|y| / rho(y / |y|) - 1` over offending points.
    pub max_excess: f64,
}

/// For `n` directions drawn from `domain`, walks the segment from the
/// reflection point to the winner's focus and reports rays that cross the
/// reflector again, i.e. pass a point `y` with `y / |y|` in the aperture and
/// `|y| > rho(y / |y|)`. The focus itself is included.
pub fn obstruction_raycheck(r: &Reflector, domain: &DomainSpec, n: usize, seed: u64) -> Result<ObstructionReport> {
    if r.kind() != ReflectorKind::Near {
        return Err(LumenError::invalid("obstruction check needs a near-field reflector"));
    }
    let base = ChaCha8Rng::seed_from_u64(seed);
    let per_ray: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = base.clone();
            rng.set_stream(k as u64);
            let x = domain.sample(&mut rng);
            let e = r.evaluate(&x);
            let q = x * e.rho;
            let p = r.foci()[e.winner];
            let mut worst = 0.0f64;
            for s in 1..=SEGMENT_STEPS {
                let y = q + (p - q) * (s as f64 / SEGMENT_STEPS as f64);
                let len = y.norm();
                if len == 0.0 {
                    continue;
                }
                let u = y / len;
                if !domain.contains(&u) {
                    continue;
                }
                let excess = len / r.radius(&u) - 1.0;
                if excess > 1e-9 {
                    worst = worst.max(excess);
                }
            }
            worst
        })
        .collect();
    Ok(ObstructionReport {
        samples: n,
        violations: per_ray.iter().filter(|&&w| w > 0.0).count(),
        max_excess: per_ray.iter().copied().fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Vec3;

    #[test]
    fn single_atom_never_obstructs() {
        let r = Reflector::near(&[Vec3::new(0.0, 0.0, -1.0)], &[2.0]).unwrap();
        let dom = DomainSpec::hemisphere(Vec3::z()).unwrap();
        let out = obstruction_raycheck(&r, &dom, 2_000, 1).unwrap();
        assert_eq!(out.violations, 0);
    }

    #[test]
    fn foci_outside_the_body_obstruct() {
        let r = Reflector::near(&[Vec3::x(), Vec3::y()], &[0.3, 0.35]).unwrap();
        let out = obstruction_raycheck(&r, &DomainSpec::Sphere, 2_000, 1).unwrap();
        assert!(out.violations > 0);
        assert!(out.max_excess > 0.1);
    }

    #[test]
    fn far_field_is_rejected() {
        let r = Reflector::far(&[Vec3::new(0.0, 0.0, -1.0)], &[1.0]).unwrap();
        assert!(obstruction_raycheck(&r, &DomainSpec::Sphere, 10, 0).is_err());
    }
}

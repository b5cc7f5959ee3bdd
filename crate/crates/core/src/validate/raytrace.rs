use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::envelope::{Reflector, ReflectorKind, WeightModel};
use crate::error::{LumenError, Result};
use crate::geometry::{ray_point_distance, reflect_direction};
use crate::sphere_domain::{DomainSpec, IntensityField};

/// Rays per parallel batch; batches are reduced in index order.
pub const RAY_CHUNK: usize = 4096;

/// Forward ray-trace estimate of the reflector measure.
#[derive(Debug, Clone, PartialEq)]
pub struct RayTraceResult {
    /// Estimates of `mu_i`.
    pub totals: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Largest miss of a ray assigned to atom `i`: distance from the reflected
    /// ray to the focus (near) or `|Y - m_i|` (far).
    pub focus_miss: Vec<f64>,
    pub samples: usize,
    /// Rays matching no atom within tolerance, counted in `unmatched_weight`.
    pub unmatched: usize,
    pub unmatched_weight: f64,
    /// Matched rays whose atom differs from the envelope winner.
    pub mismatched: usize,
    /// Estimate of `int_Omega f F`; equals `sum totals + unmatched_weight`.
    pub total: f64,
}

#[derive(Clone)]
struct Partial {
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    miss: Vec<f64>,
    unmatched: usize,
    unmatched_weight: f64,
    mismatched: usize,
}

impl Partial {
    fn new(n: usize) -> Self {
        Partial {
            sum: vec![0.0; n],
            sumsq: vec![0.0; n],
            miss: vec![0.0; n],
            unmatched: 0,
            unmatched_weight: 0.0,
            mismatched: 0,
        }
    }

    fn absorb(&mut self, other: &Partial) {
        for i in 0..self.sum.len() {
            self.sum[i] += other.sum[i];
            self.sumsq[i] += other.sumsq[i];
            self.miss[i] = self.miss[i].max(other.miss[i]);
        }
        self.unmatched += other.unmatched;
        self.unmatched_weight += other.unmatched_weight;
        self.mismatched += other.mismatched;
    }
}

/// Traces `n_rays` directions drawn uniformly from `domain`, each carrying
/// `f(x) |Omega| F(x . nu, rho)`, and credits the atom the reflected ray
/// reaches.
///
/// A near-field ray reaches `P_j` when it passes within `1e-6 M` of it; a
/// far-field ray matches `m_j` when `Y . m_j >= 1 - 1e-12`. Ray `k` draws from
/// stream `k` of a generator keyed by `seed`, so results do not depend on the
/// thread count.
pub fn raytrace(
    r: &Reflector,
    domain: &DomainSpec,
    f: &IntensityField,
    weight: &WeightModel,
    n_rays: usize,
    seed: u64,
) -> Result<RayTraceResult> {
    if n_rays == 0 {
        return Err(LumenError::invalid("n_rays must be positive"));
    }
    let n = r.len();
    let area = domain.area();
    let scale = r.foci().iter().map(|p| p.norm()).fold(0.0, f64::max);
    let base = ChaCha8Rng::seed_from_u64(seed);
    let chunks = n_rays.div_ceil(RAY_CHUNK);

    let partials: Vec<Result<Partial>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Partial::new(n);
            let start = c * RAY_CHUNK;
            for k in start..(start + RAY_CHUNK).min(n_rays) {
                let mut rng = base.clone();
                rng.set_stream(k as u64);
                let x = domain.sample(&mut rng);
                let e = r.evaluate(&x);
                let nu = r.quadrics()[e.winner].normal(&x);
                let value = f.eval(&x) * area * weight.eval(x.dot(&nu), e.rho);
                if !value.is_finite() {
                    return Err(LumenError::invalid(format!("ray {k} carries non-finite weight {value}")));
                }
                let y = reflect_direction(&x, &nu);
                let (atom, miss, matched) = match r.kind() {
                    ReflectorKind::Near => {
                        let q = x * e.rho;
                        let (j, dist) = nearest(r.foci().iter().map(|p| ray_point_distance(&q, &y, p)));
                        (j, dist, dist <= 1e-6 * scale)
                    }
                    ReflectorKind::Far => {
                        let (j, neg) = nearest(r.foci().iter().map(|m| -y.dot(m)));
                        (j, (y - r.foci()[j]).norm(), -neg >= 1.0 - 1e-12)
                    }
                };
                if !matched {
                    acc.unmatched += 1;
                    acc.unmatched_weight += value;
                    continue;
                }
                if atom != e.winner {
                    acc.mismatched += 1;
                }
                acc.sum[atom] += value;
                acc.sumsq[atom] += value * value;
                acc.miss[atom] = acc.miss[atom].max(miss);
            }
            Ok(acc)
        })
        .collect();

    let mut total = Partial::new(n);
    for p in partials {
        total.absorb(&p?);
    }
    let nf = n_rays as f64;
    let totals: Vec<f64> = total.sum.iter().map(|s| s / nf).collect();
    let std_errors = total
        .sumsq
        .iter()
        .zip(&totals)
        .map(|(sq, mean)| {
            if n_rays < 2 {
                return f64::INFINITY;
            }
            ((sq / nf - mean * mean).max(0.0) / (nf - 1.0)).sqrt()
        })
        .collect();
    let unmatched_weight = total.unmatched_weight / nf;
    Ok(RayTraceResult {
        total: totals.iter().sum::<f64>() + unmatched_weight,
        totals,
        std_errors,
        focus_miss: total.miss,
        samples: n_rays,
        unmatched: total.unmatched,
        unmatched_weight,
        mismatched: total.mismatched,
    })
}

/// Least index attaining the minimum.
fn nearest(values: impl Iterator<Item = f64>) -> (usize, f64) {
    values
        .enumerate()
        .fold((0, f64::INFINITY), |best, (j, v)| if v < best.1 { (j, v) } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Vec3;
    use crate::sphere_domain::SphericalGrid;

    fn hemisphere() -> DomainSpec {
        DomainSpec::hemisphere(Vec3::z()).unwrap()
    }

    #[test]
    fn single_ellipsoid_sends_every_ray_to_its_focus() {
        let p = Vec3::new(0.2, 0.1, -1.0);
        let r = Reflector::near(&[p], &[2.5]).unwrap();
        let grid = SphericalGrid::at_level(&hemisphere(), 2).unwrap();
        let f = IntensityField::constant(1.0, &grid).unwrap();
        let out = raytrace(&r, &hemisphere(), &f, &WeightModel::InverseSquare, 20_000, 7).unwrap();
        assert_eq!(out.unmatched, 0);
        assert!(out.focus_miss[0] <= 1e-9 * p.norm());
    }

    #[test]
    fn single_paraboloid_reflects_onto_its_axis() {
        let m = Vec3::new(0.1, 0.0, -1.0).normalize();
        let dom = DomainSpec::cap(Vec3::z(), 0.5).unwrap();
        let r = Reflector::far(&[m], &[1.0]).unwrap();
        let grid = SphericalGrid::at_level(&dom, 2).unwrap();
        let f = IntensityField::constant(1.0, &grid).unwrap();
        let out = raytrace(&r, &dom, &f, &WeightModel::InverseSquare, 20_000, 1).unwrap();
        assert_eq!(out.unmatched, 0);
        assert!(out.focus_miss[0] <= 1e-12);
    }

    #[test]
    fn constant_weight_estimates_the_aperture_area() {
        let r = Reflector::near(&[Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.5, 0.0, -1.0)], &[2.0, 2.1]).unwrap();
        let grid = SphericalGrid::at_level(&hemisphere(), 2).unwrap();
        let f = IntensityField::constant(1.0, &grid).unwrap();
        let out = raytrace(&r, &hemisphere(), &f, &WeightModel::Constant, 10_000, 3).unwrap();
        // Every ray carries exactly |Omega|.
        assert!((out.total - 2.0 * std::f64::consts::PI).abs() < 1e-12);
        let sum: f64 = out.totals.iter().sum::<f64>() + out.unmatched_weight;
        assert!((sum - out.total).abs() <= 1e-12 * out.total);
    }

    #[test]
    fn independent_of_thread_count() {
        let r = Reflector::near(&[Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.5, 0.0, -1.0)], &[2.0, 2.1]).unwrap();
        let grid = SphericalGrid::at_level(&hemisphere(), 2).unwrap();
        let f = IntensityField::constant(1.0, &grid).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| raytrace(&r, &hemisphere(), &f, &WeightModel::InverseSquare, 3 * RAY_CHUNK + 17, 11).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn rejects_zero_rays() {
        let r = Reflector::near(&[Vec3::new(0.0, 0.0, -1.0)], &[2.0]).unwrap();
        let grid = SphericalGrid::at_level(&hemisphere(), 1).unwrap();
        let f = IntensityField::constant(1.0, &grid).unwrap();
        assert!(raytrace(&r, &hemisphere(), &f, &WeightModel::Constant, 0, 0).is_err());
    }
}

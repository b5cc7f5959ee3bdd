use std::sync::OnceLock;

use lumen_core::envelope::reflector_measure;
use lumen_core::{DomainSpec, IntensityField, Reflector, SphericalGrid, Vec3, WeightModel};
use proptest::prelude::*;

const DELTA: f64 = 15.0 / 8.0;

fn grid() -> &'static (SphericalGrid, IntensityField) {
    static GRID: OnceLock<(SphericalGrid, IntensityField)> = OnceLock::new();
    GRID.get_or_init(|| {
        let g = SphericalGrid::build(&DomainSpec::hemisphere(Vec3::z()).unwrap(), 4_000).unwrap();
        let f = IntensityField::new(|x: &Vec3| 1.0 + 0.5 * x.x, &g).unwrap();
        (g, f)
    })
}

fn atoms() -> Vec<Vec3> {
    vec![
        Vec3::new(0.0, 0.0, -1.0),
        Vec3::new(0.3, 0.0, -1.0),
        Vec3::new(-0.3, 0.1, -1.0),
        Vec3::new(0.0, 0.35, -1.1),
    ]
}

fn max_distance() -> f64 {
    atoms().iter().map(|p| p.norm()).fold(0.0, f64::max)
}

fn mu(d: &[f64]) -> Vec<f64> {
    let (g, f) = grid();
    let r = Reflector::near(&atoms(), d).unwrap();
    reflector_measure(&r, g, f, &WeightModel::InverseSquare).unwrap().values
}

/// Focal vectors with every `d_i >= delta M`.
fn focal() -> impl Strategy<Value = Vec<f64>> {
    let m = max_distance();
    prop::collection::vec(DELTA * m..4.0 * DELTA * m, 4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lowering_one_parameter_never_feeds_the_others(d in focal(), l in 0usize..4, t in 0.5f64..1.0) {
        let mut lowered = d.clone();
        lowered[l] = (d[l] * t).max(DELTA * max_distance());
        let before = mu(&d);
        let after = mu(&lowered);
        for i in (0..4).filter(|&i| i != l) {
            prop_assert!(after[i] <= before[i] + 1e-6, "atom {i}: {} > {}", after[i], before[i]);
        }
    }

    #[test]
    fn min_combination_is_dominated(a in focal(), b in focal()) {
        let m: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect();
        let (ma, mb, mm) = (mu(&a), mu(&b), mu(&m));
        for i in 0..4 {
            prop_assert!(mm[i] <= ma[i].max(mb[i]) + 1e-6);
        }
    }

    #[test]
    fn measure_exceeds_the_feasibility_bound(d in focal(), k in 1.0f64..3.0, s in 0.0f64..1.0) {
        // d_1 <= delta' M with delta' = k delta.
        let m = max_distance();
        let mut d = d;
        d[0] = DELTA * m * (1.0 + s * (k - 1.0));
        // C(delta, delta', M) with c_delta = 1/4 at delta = 15/8.
        let c = 0.75f64.powi(3) / (1.25 * (k * DELTA * m).powi(2));
        let (_, f) = grid();
        let total: f64 = mu(&d).iter().sum();
        let excess = total - c * f.total_flux();
        prop_assert!(excess > 0.0, "excess {excess}");
    }

    #[test]
    fn scaling_the_intensity_scales_the_measure(d in focal(), lambda in 0.1f64..10.0) {
        let (g, f) = grid();
        let r = Reflector::near(&atoms(), &d).unwrap();
        let base = reflector_measure(&r, g, f, &WeightModel::InverseSquare).unwrap();
        let scaled = reflector_measure(&r, g, &f.scaled(lambda, g).unwrap(), &WeightModel::InverseSquare).unwrap();
        for (a, b) in base.values.iter().zip(&scaled.values) {
            prop_assert!((b - lambda * a).abs() <= 1e-12 * lambda * base.total);
        }
    }
}

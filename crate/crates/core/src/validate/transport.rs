use rayon::prelude::*;

use crate::envelope::{Reflector, ReflectorKind};
use crate::error::{LumenError, Result};
use crate::geometry::reflect_direction;
use crate::numeric::Vec3;

/// One smooth sample of the transport inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportSample {
    pub chart: [f64; 2],
    /// `|det DT|` by central differences.
    pub lhs: f64,
    /// `f (X . nu) / (sqrt(1 - |x|^2) rho^2 g(T))`.
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportCheck {
    pub h: f64,
    /// Violations are `lhs - rhs > scale * h * rhs`.
    pub scale: f64,
    pub samples: Vec<TransportSample>,
    /// Samples near a tie, off the chart, missing the plane or where `g(T) = 0`.
    pub skipped: usize,
    pub violations: usize,
    /// Largest `(lhs - rhs) / rhs`, clamped at 0.
    pub max_violation: f64,
    pub max_abs_residual: f64,
}

/// Upper-hemisphere point `(x1, x2, sqrt(1 - |x|^2))` over the chart.
pub fn chart_lift(x: [f64; 2]) -> Option<Vec3> {
    let s = 1.0 - x[0] * x[0] - x[1] * x[1];
    (s > 0.0).then(|| Vec3::new(x[0], x[1], s.sqrt()))
}

/// Point where the ray reflected at `rho(X) X` meets the plane `x3 = 0`,
/// with the winning atom. `None` when the reflected ray does not descend.
pub fn transport_map(r: &Reflector, x: &Vec3) -> Option<(Vec3, usize, bool)> {
    let e = r.evaluate(x);
    let nu = r.quadrics()[e.winner].normal(x);
    let y = reflect_direction(x, &nu);
    if !(y.z < 0.0) {
        return None;
    }
    let t = -e.rho * x.z / y.z;
    Some((x * e.rho + y * t, e.winner, e.tie))
}

/// Checks `|det DT| <= f (X . nu) / (sqrt(1 - |x|^2) rho^2 g(T))` at chart
/// samples, with `DT` from central differences of step `h`.
///
/// Samples whose winner changes or ties within `3h` are skipped, as are
/// samples where `g(T(x))` is not positive. `g` receives points of `x3 = 0`.
pub fn transport_residual(
    r: &Reflector,
    f: &(dyn Fn(&Vec3) -> f64 + Sync),
    g: &(dyn Fn(&Vec3) -> f64 + Sync),
    samples: &[[f64; 2]],
    h: f64,
    scale: f64,
) -> Result<TransportCheck> {
    if r.kind() != ReflectorKind::Near {
        return Err(LumenError::invalid("transport check needs a near-field reflector"));
    }
    if !(h > 0.0 && h.is_finite() && scale >= 0.0 && scale.is_finite()) {
        return Err(LumenError::invalid("step and tolerance scale must be positive and finite"));
    }
    let evaluated: Vec<Option<TransportSample>> = samples.par_iter().map(|&x| sample(r, f, g, x, h)).collect();

    let mut check = TransportCheck {
        h,
        scale,
        samples: Vec::new(),
        skipped: 0,
        violations: 0,
        max_violation: 0.0,
        max_abs_residual: 0.0,
    };
    for s in evaluated {
        let Some(s) = s else {
            check.skipped += 1;
            continue;
        };
        if !(s.lhs.is_finite() && s.rhs.is_finite()) {
            return Err(LumenError::invalid(format!("non-finite transport terms at {:?}", s.chart)));
        }
        let excess = s.lhs - s.rhs;
        if excess > scale * h * s.rhs {
            check.violations += 1;
        }
        check.max_violation = check.max_violation.max(excess / s.rhs);
        check.max_abs_residual = check.max_abs_residual.max(excess.abs());
        check.samples.push(s);
    }
    Ok(check)
}

fn sample(
    r: &Reflector,
    f: &(dyn Fn(&Vec3) -> f64 + Sync),
    g: &(dyn Fn(&Vec3) -> f64 + Sync),
    x: [f64; 2],
    h: f64,
) -> Option<TransportSample> {
    let big = 3.0 * h;
    let center = chart_lift(x)?;
    let e = r.evaluate(&center);
    if e.tie {
        return None;
    }
    for (a, b) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let p = chart_lift([x[0] + a * big, x[1] + b * big])?;
        let q = r.evaluate(&p);
        if q.tie || q.winner != e.winner {
            return None;
        }
    }
    let at = |a: f64, b: f64| transport_map(r, &chart_lift([x[0] + a, x[1] + b])?).map(|t| t.0);
    let t0 = at(0.0, 0.0)?;
    let d1 = (at(h, 0.0)? - at(-h, 0.0)?) / (2.0 * h);
    let d2 = (at(0.0, h)? - at(0.0, -h)?) / (2.0 * h);
    let lhs = (d1.x * d2.y - d1.y * d2.x).abs();

    let density = g(&t0);
    if !(density > 0.0) {
        return None;
    }
    let nu = r.quadrics()[e.winner].normal(&center);
    let rhs = f(&center) * center.dot(&nu) / (center.z * e.rho * e.rho * density);
    Some(TransportSample { chart: x, lhs, rhs })
}

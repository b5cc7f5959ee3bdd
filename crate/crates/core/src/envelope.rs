//! Reflectors as envelopes of supporting quadrics, their tracing regions,
//! the reflector measure and regularity diagnostics.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{LumenError, Result};
use crate::geometry::{Ellipsoid, Paraboloid, Quadric};
use crate::numeric::{pairwise_sum, Vec3};
use crate::sphere_domain::{DiscreteTarget, IntensityField, SphericalGrid, TargetKind, CELL_SAMPLES};

/// Relative gap below which the two smallest radii count as a tie.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReflectorKind {
    /// Ellipsoids; targets are points.
    Near,
    /// Paraboloids; targets are directions.
    Far,
}

/// Focal parameters `w = (d_1, ..., d_N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FocalVector {
    pub kind: ReflectorKind,
    pub values: Vec<f64>,
}

impl FocalVector {
    pub fn new(kind: ReflectorKind, values: Vec<f64>) -> Self {
        Self { kind, values }
    }

    /// Componentwise minimum.
    pub fn min(&self, other: &FocalVector) -> FocalVector {
        FocalVector {
            kind: self.kind,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a.min(*b)).collect(),
        }
    }
}

/// Result of evaluating the envelope in one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub rho: f64,
    /// Least index attaining the minimum.
    pub winner: usize,
    /// Second-best radius within [`TIE_TOL`] relative of the best.
    pub tie: bool,
}

/// `rho_w(x) = min_i rho_{d_i}(x)` over a finite list of quadrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Reflector {
    kind: ReflectorKind,
    foci: Vec<Vec3>,
    quadrics: Vec<Quadric>,
}

impl Reflector {
    /// Ellipsoids with far foci `points` and focal parameters `d`.
    pub fn near(points: &[Vec3], d: &[f64]) -> Result<Self> {
        check_lengths(points.len(), d.len())?;
        let quadrics = points
            .iter()
            .zip(d)
            .map(|(p, &di)| Ellipsoid::new(*p, di).map(Quadric::Ellipsoid))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { kind: ReflectorKind::Near, foci: points.to_vec(), quadrics })
    }

    /// Paraboloids with axes `directions` and focal parameters `d`.
    pub fn far(directions: &[Vec3], d: &[f64]) -> Result<Self> {
        check_lengths(directions.len(), d.len())?;
        let quadrics = directions
            .iter()
            .zip(d)
            .map(|(m, &di)| Paraboloid::new(*m, di).map(Quadric::Paraboloid))
            .collect::<Result<Vec<_>>>()?;
        let foci = quadrics.iter().map(|q| q.axis()).collect();
        Ok(Self { kind: ReflectorKind::Far, foci, quadrics })
    }

    pub fn for_target(target: &DiscreteTarget, w: &FocalVector) -> Result<Self> {
        match (target.kind(), w.kind) {
            (TargetKind::Points, ReflectorKind::Near) => Self::near(target.locations(), &w.values),
            (TargetKind::Directions, ReflectorKind::Far) => Self::far(target.locations(), &w.values),
            _ => Err(LumenError::invalid("target kind does not match the reflector kind")),
        }
    }

    pub fn kind(&self) -> ReflectorKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.quadrics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quadrics.is_empty()
    }

    /// Far foci (near) or reflected directions (far).
    pub fn foci(&self) -> &[Vec3] {
        &self.foci
    }

    pub fn quadrics(&self) -> &[Quadric] {
        &self.quadrics
    }

    pub fn focal_vector(&self) -> FocalVector {
        FocalVector::new(self.kind, self.quadrics.iter().map(|q| q.focal()).collect())
    }

    #[inline]
    pub fn evaluate(&self, x: &Vec3) -> Evaluation {
        let mut best = f64::INFINITY;
        let mut second = f64::INFINITY;
        let mut winner = 0;
        for (i, q) in self.quadrics.iter().enumerate() {
            let r = q.radius(x);
            if r < best {
                second = best;
                best = r;
                winner = i;
            } else if r < second {
                second = r;
            }
        }
        Evaluation { rho: best, winner, tie: second - best <= TIE_TOL * best }
    }

    #[inline]
    pub fn radius(&self, x: &Vec3) -> f64 {
        self.evaluate(x).rho
    }

    /// Outer normal of the winning quadric at `rho(x) x`.
    #[inline]
    pub fn normal_at(&self, x: &Vec3) -> Vec3 {
        self.quadrics[self.evaluate(x).winner].normal(x)
    }

    /// Radii at every grid node.
    pub fn radii(&self, grid: &SphericalGrid) -> Vec<f64> {
        grid.nodes().par_iter().map(|x| self.radius(x)).collect()
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(LumenError::invalid("reflector needs at least one quadric"));
    }
    if a != b {
        return Err(LumenError::invalid(format!("{a} foci but {b} focal parameters")));
    }
    Ok(())
}

/// Winning atom of every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionAssignment {
    pub winners: Vec<u32>,
    pub ties: Vec<bool>,
    /// Fraction of nodes flagged as ties.
    pub tie_fraction: f64,
    /// Node count per atom.
    pub counts: Vec<usize>,
}

impl RegionAssignment {
    /// Fraction of nodes with a winner; 1 by construction of the envelope.
    pub fn coverage(&self) -> f64 {
        let assigned: usize = self.counts.iter().sum();
        assigned as f64 / self.winners.len() as f64
    }
}

pub fn assign_regions(r: &Reflector, grid: &SphericalGrid) -> RegionAssignment {
    let evals: Vec<Evaluation> = grid.nodes().par_iter().map(|x| r.evaluate(x)).collect();
    let mut counts = vec![0; r.len()];
    for e in &evals {
        counts[e.winner] += 1;
    }
    let ties: Vec<bool> = evals.iter().map(|e| e.tie).collect();
    let tie_fraction = ties.iter().filter(|&&t| t).count() as f64 / ties.len().max(1) as f64;
    RegionAssignment {
        winners: evals.iter().map(|e| e.winner as u32).collect(),
        ties,
        tie_fraction,
        counts,
    }
}

type WeightFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Weight `F(x . nu, rho)` in the reflector measure.
#[derive(Clone)]
pub enum WeightModel {
    /// `F(u, v) = u / v^2`, irradiance under the inverse-square law.
    InverseSquare,
    /// `F = 1`.
    Constant,
    Custom(WeightFn),
}

impl fmt::Debug for WeightModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl WeightModel {
    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        WeightModel::Custom(Arc::new(f))
    }

    pub fn name(&self) -> &'static str {
        match self {
            WeightModel::InverseSquare => "inverse-square",
            WeightModel::Constant => "constant",
            WeightModel::Custom(_) => "custom",
        }
    }

    #[inline]
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        match self {
            WeightModel::InverseSquare => u / (v * v),
            WeightModel::Constant => 1.0,
            WeightModel::Custom(f) => f(u, v),
        }
    }

    /// Minimum of `F` over the box `u_range x v_range`.
    ///
    /// Exact for the presets; a custom weight is sampled on a 65x65 lattice
    /// and must be strictly positive there.
    pub fn min_over(&self, u_range: [f64; 2], v_range: [f64; 2]) -> Result<f64> {
        match self {
            WeightModel::InverseSquare => Ok(u_range[0] / (v_range[1] * v_range[1])),
            WeightModel::Constant => Ok(1.0),
            WeightModel::Custom(f) => {
                let n = 64;
                let mut lo = f64::INFINITY;
                for a in 0..=n {
                    for b in 0..=n {
                        let u = u_range[0] + (u_range[1] - u_range[0]) * a as f64 / n as f64;
                        let v = v_range[0] + (v_range[1] - v_range[0]) * b as f64 / n as f64;
                        let val = f(u, v);
                        if !(val > 0.0 && val.is_finite()) {
                            return Err(LumenError::invalid(format!(
                                "weight F({u}, {v}) = {val} is not strictly positive"
                            )));
                        }
                        lo = lo.min(val);
                    }
                }
                Ok(lo)
            }
        }
    }
}

/// Reflector measure per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureVector {
    pub values: Vec<f64>,
    /// Fixed-order sum of all node contributions.
    pub total: f64,
}

/// Term of atom `a` at node `j`: `w_j f_j F_a(x_j)` times the fraction of the
/// node's membership samples won by `a`. The solver forms the same product.
#[inline]
pub(crate) fn share_term(wf: f64, wins: usize, value: f64) -> f64 {
    wf * value * (wins as f64 / CELL_SAMPLES as f64)
}

/// Run-length counts of sorted sample winners, in atom order.
pub(crate) fn runs(sorted: &[u32]) -> impl Iterator<Item = (usize, usize)> + '_ {
    let mut k = 0;
    std::iter::from_fn(move || {
        if k >= sorted.len() {
            return None;
        }
        let a = sorted[k];
        let start = k;
        while k < sorted.len() && sorted[k] == a {
            k += 1;
        }
        Some((a as usize, k - start))
    })
}

/// Per-node `(atom, share_term)` lists in atom order.
fn node_terms(
    r: &Reflector,
    grid: &SphericalGrid,
    f: &IntensityField,
    weight: &WeightModel,
) -> Result<Vec<Vec<(u32, f64)>>> {
    if f.values().len() != grid.len() {
        return Err(LumenError::invalid("intensity field is bound to a different grid"));
    }
    let terms: Vec<Vec<(u32, f64)>> = grid
        .nodes()
        .par_iter()
        .enumerate()
        .map(|(j, x)| {
            let mut winners: Vec<u32> = grid.samples_of(j).iter().map(|y| r.evaluate(y).winner as u32).collect();
            winners.sort_unstable();
            let wf = grid.weights()[j] * f.values()[j];
            runs(&winners)
                .map(|(a, wins)| {
                    let (u, rho) = r.quadrics[a].incidence(x);
                    (a as u32, share_term(wf, wins, weight.eval(u, rho)))
                })
                .collect()
        })
        .collect();
    for (node, list) in terms.iter().enumerate() {
        if let Some(&(_, value)) = list.iter().find(|t| !t.1.is_finite()) {
            return Err(LumenError::Numeric { node, value });
        }
    }
    Ok(terms)
}

/// `mu_i = sum_j w_j f_j F_i(x_j) s_ij`, where `s_ij` is the fraction of the
/// membership samples of node `j` on which atom `i` attains the envelope.
///
/// The shares of a node sum to 1, so the atoms partition the quadrature of
/// `f F` over the aperture (see [`envelope_integrand`]).
pub fn reflector_measure(
    r: &Reflector,
    grid: &SphericalGrid,
    f: &IntensityField,
    weight: &WeightModel,
) -> Result<MeasureVector> {
    let terms = node_terms(r, grid, f, weight)?;
    let mut per_atom: Vec<Vec<f64>> = vec![Vec::new(); r.len()];
    let mut all = Vec::with_capacity(terms.len());
    for list in &terms {
        for &(a, t) in list {
            per_atom[a as usize].push(t);
            all.push(t);
        }
    }
    Ok(MeasureVector {
        values: per_atom.iter().map(|v| pairwise_sum(v)).collect(),
        total: pairwise_sum(&all),
    })
}

/// Node values `sum_i s_ij F_i(x_j)` of the envelope integrand `F(x . nu, rho)`,
/// for use with [`SphericalGrid::integrate`].
pub fn envelope_integrand(r: &Reflector, grid: &SphericalGrid, weight: &WeightModel) -> Vec<f64> {
    grid.nodes()
        .par_iter()
        .enumerate()
        .map(|(j, x)| {
            let mut winners: Vec<u32> = grid.samples_of(j).iter().map(|y| r.evaluate(y).winner as u32).collect();
            winners.sort_unstable();
            runs(&winners)
                .map(|(a, wins)| {
                    let (u, rho) = r.quadrics[a].incidence(x);
                    weight.eval(u, rho) * (wins as f64 / CELL_SAMPLES as f64)
                })
                .sum()
        })
        .collect()
}

/// Regularity diagnostics of a reflector over a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityReport {
    /// `max |rho(x) - rho(y)| / |x - y|` over neighbouring nodes.
    pub lipschitz_est: f64,
    /// `max rho / min rho`.
    pub harnack_ratio: f64,
    pub min_rho: f64,
    pub max_rho: f64,
}

pub fn regularity_report(r: &Reflector, grid: &SphericalGrid) -> RegularityReport {
    let radii = r.radii(grid);
    let min_rho = radii.iter().copied().fold(f64::INFINITY, f64::min);
    let max_rho = radii.iter().copied().fold(0.0, f64::max);
    let nodes = grid.nodes();
    let lipschitz_est = grid
        .edges()
        .par_iter()
        .map(|&[a, b]| {
            let (a, b) = (a as usize, b as usize);
            (radii[a] - radii[b]).abs() / (nodes[a] - nodes[b]).norm()
        })
        .reduce(|| 0.0, f64::max);
    RegularityReport { lipschitz_est, harnack_ratio: max_rho / min_rho, min_rho, max_rho }
}

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{LumenError, Result};
use crate::numeric::{pairwise_sum, Vec3};

/// Whether atoms are points at finite distance or far-field directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Points,
    Directions,
}

/// Finitely many atoms `(P_i, g_i)` with the overshoot atom stored first.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTarget {
    kind: TargetKind,
    points: Vec<Vec3>,
    masses: Vec<f64>,
    original: Vec<usize>,
    max_distance: f64,
    min_distance: f64,
    diameter: f64,
}

impl DiscreteTarget {
    /// Near-field atoms. `overshoot` indexes the atom allowed to receive
    /// excess flux; it is moved to position 0.
    pub fn points(points: Vec<Vec3>, masses: Vec<f64>, overshoot: usize) -> Result<Self> {
        Self::build(TargetKind::Points, points, masses, overshoot)
    }

    /// Far-field atoms; directions are normalized.
    pub fn directions(directions: Vec<Vec3>, masses: Vec<f64>, overshoot: usize) -> Result<Self> {
        let mut unit = Vec::with_capacity(directions.len());
        for d in &directions {
            let n = d.norm();
            if !(n > 0.0 && n.is_finite()) {
                return Err(LumenError::invalid("target directions must be nonzero"));
            }
            unit.push(d / n);
        }
        Self::build(TargetKind::Directions, unit, masses, overshoot)
    }

    fn build(kind: TargetKind, points: Vec<Vec3>, masses: Vec<f64>, overshoot: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(LumenError::invalid("target has no atoms"));
        }
        if points.len() != masses.len() {
            return Err(LumenError::invalid(format!(
                "{} atoms but {} masses",
                points.len(),
                masses.len()
            )));
        }
        if overshoot >= points.len() {
            return Err(LumenError::invalid(format!("overshoot index {overshoot} out of range")));
        }
        for (i, (p, &g)) in points.iter().zip(&masses).enumerate() {
            if !(g > 0.0 && g.is_finite()) {
                return Err(LumenError::invalid(format!("atom {i} has non-positive mass {g}")));
            }
            let r = p.norm();
            if !(r > 0.0 && r.is_finite()) {
                return Err(LumenError::invalid(format!("atom {i} coincides with the source")));
            }
        }
        let mut original: Vec<usize> = (0..points.len()).collect();
        original.swap(0, overshoot);
        let points: Vec<Vec3> = original.iter().map(|&i| points[i]).collect();
        let masses: Vec<f64> = original.iter().map(|&i| masses[i]).collect();
        let norms = points.iter().map(|p| p.norm());
        let max_distance = norms.clone().fold(0.0, f64::max);
        let min_distance = norms.fold(f64::INFINITY, f64::min);
        let mut diameter: f64 = 0.0;
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                diameter = diameter.max((points[i] - points[j]).norm());
            }
        }
        Ok(Self { kind, points, masses, original, max_distance, min_distance, diameter })
    }

    pub fn kind(&self) -> TargetKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn locations(&self) -> &[Vec3] {
        &self.points
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Caller-side index of each stored atom.
    pub fn original_indices(&self) -> &[usize] {
        &self.original
    }

    /// `M = max_i |OP_i|`.
    pub fn max_distance(&self) -> f64 {
        self.max_distance
    }

    /// `min_i |OP_i|`.
    pub fn min_distance(&self) -> f64 {
        self.min_distance
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// `eta(D)`.
    pub fn total_mass(&self) -> f64 {
        pairwise_sum(&self.masses)
    }

    /// Same atoms with every mass multiplied by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(LumenError::invalid("mass scale must be positive"));
        }
        let mut out = self.clone();
        out.masses.iter_mut().for_each(|g| *g *= lambda);
        Ok(out)
    }
}

const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_8),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_8),
];

type Density = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Absolutely continuous target on a rectangle of a plane.
///
/// Points are `origin + s u + t v` with `(s, t)` in the rectangle. Masses are
/// precomputed on a `2^micro_level` square micro grid with a 4x4 Gauss rule,
/// and every coarser cell mass is a sum of micro masses, so refinement
/// conserves mass up to summation order.
#[derive(Clone)]
pub struct PlanarDensity {
    origin: Vec3,
    u: Vec3,
    v: Vec3,
    s_range: [f64; 2],
    t_range: [f64; 2],
    density: Density,
    overshoot: [f64; 2],
    micro_level: usize,
    micro: Vec<f64>,
    total: f64,
    support: [usize; 4],
}

impl fmt::Debug for PlanarDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlanarDensity")
            .field("origin", &self.origin)
            .field("u", &self.u)
            .field("v", &self.v)
            .field("s_range", &self.s_range)
            .field("t_range", &self.t_range)
            .field("overshoot", &self.overshoot)
            .field("micro_level", &self.micro_level)
            .field("total", &self.total)
            .finish()
    }
}

/// Finest micro-grid level accepted.
pub const MAX_MICRO_LEVEL: usize = 10;

impl PlanarDensity {
    #[allow(clippy::too_many_arguments)]
    pub fn new<G>(
        origin: Vec3,
        u: Vec3,
        v: Vec3,
        s_range: [f64; 2],
        t_range: [f64; 2],
        density: G,
        overshoot: [f64; 2],
        micro_level: usize,
    ) -> Result<Self>
    where
        G: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        if (u.norm() - 1.0).abs() > 1e-9 || (v.norm() - 1.0).abs() > 1e-9 || u.dot(&v).abs() > 1e-9 {
            return Err(LumenError::invalid("plane axes must be orthonormal"));
        }
        if !(s_range[1] > s_range[0] && t_range[1] > t_range[0]) {
            return Err(LumenError::invalid("target rectangle is empty"));
        }
        if micro_level > MAX_MICRO_LEVEL {
            return Err(LumenError::invalid(format!(
                "micro level {micro_level} exceeds {MAX_MICRO_LEVEL}"
            )));
        }
        if !(overshoot[0] >= s_range[0]
            && overshoot[0] <= s_range[1]
            && overshoot[1] >= t_range[0]
            && overshoot[1] <= t_range[1])
        {
            return Err(LumenError::invalid("overshoot point lies outside the target rectangle"));
        }
        let n = 1usize << micro_level;
        let hs = (s_range[1] - s_range[0]) / n as f64;
        let ht = (t_range[1] - t_range[0]) / n as f64;
        let rows: Vec<Result<Vec<f64>>> = (0..n)
            .into_par_iter()
            .map(|iy| {
                (0..n)
                    .map(|ix| {
                        let s0 = s_range[0] + hs * (ix as f64 + 0.5);
                        let t0 = t_range[0] + ht * (iy as f64 + 0.5);
                        let mut acc = 0.0;
                        for (a, wa) in GAUSS4 {
                            for (b, wb) in GAUSS4 {
                                let g = density(s0 + 0.5 * hs * a, t0 + 0.5 * ht * b);
                                if !(g >= 0.0 && g.is_finite()) {
                                    return Err(LumenError::invalid(format!(
                                        "density must be finite and nonnegative, got {g}"
                                    )));
                                }
                                acc += wa * wb * g;
                            }
                        }
                        Ok(acc * 0.25 * hs * ht)
                    })
                    .collect()
            })
            .collect();
        let mut micro = Vec::with_capacity(n * n);
        for row in rows {
            micro.extend(row?);
        }
        let total = pairwise_sum(&micro);
        if total <= 0.0 {
            return Err(LumenError::invalid("target density has zero total mass"));
        }
        let mut support = [usize::MAX, 0, usize::MAX, 0];
        for iy in 0..n {
            for ix in 0..n {
                if micro[iy * n + ix] > 0.0 {
                    support[0] = support[0].min(ix);
                    support[1] = support[1].max(ix);
                    support[2] = support[2].min(iy);
                    support[3] = support[3].max(iy);
                }
            }
        }
        let out = Self {
            origin,
            u,
            v,
            s_range,
            t_range,
            density: Arc::new(density),
            overshoot,
            micro_level,
            micro,
            total,
            support,
        };
        let (ix, iy) = out.micro_index(overshoot);
        if out.micro[iy * n + ix] <= 0.0 {
            return Err(LumenError::invalid("overshoot point is outside the support of the density"));
        }
        if out.min_distance() <= 0.0 {
            return Err(LumenError::invalid("target support contains the source"));
        }
        Ok(out)
    }

    fn micro_index(&self, p: [f64; 2]) -> (usize, usize) {
        let n = 1usize << self.micro_level;
        let fs = (p[0] - self.s_range[0]) / (self.s_range[1] - self.s_range[0]);
        let ft = (p[1] - self.t_range[0]) / (self.t_range[1] - self.t_range[0]);
        let ix = ((fs * n as f64).floor() as usize).min(n - 1);
        let iy = ((ft * n as f64).floor() as usize).min(n - 1);
        (ix, iy)
    }

    pub fn point(&self, s: f64, t: f64) -> Vec3 {
        self.origin + self.u * s + self.v * t
    }

    /// Plane coordinates of a point, ignoring its normal component.
    pub fn coordinates(&self, y: &Vec3) -> [f64; 2] {
        let r = y - self.origin;
        [r.dot(&self.u), r.dot(&self.v)]
    }

    pub fn density(&self, s: f64, t: f64) -> f64 {
        (self.density)(s, t)
    }

    pub fn normal(&self) -> Vec3 {
        self.u.cross(&self.v)
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn axes(&self) -> (Vec3, Vec3) {
        (self.u, self.v)
    }

    pub fn s_range(&self) -> [f64; 2] {
        self.s_range
    }

    pub fn t_range(&self) -> [f64; 2] {
        self.t_range
    }

    pub fn overshoot(&self) -> [f64; 2] {
        self.overshoot
    }

    pub fn micro_level(&self) -> usize {
        self.micro_level
    }

    /// `eta(D)`.
    pub fn total_mass(&self) -> f64 {
        self.total
    }

    /// Rectangle diagonal, the initial cell diameter.
    pub fn initial_diameter(&self) -> f64 {
        (self.s_range[1] - self.s_range[0]).hypot(self.t_range[1] - self.t_range[0])
    }

    fn support_box(&self) -> ([f64; 2], [f64; 2]) {
        let n = (1usize << self.micro_level) as f64;
        let hs = (self.s_range[1] - self.s_range[0]) / n;
        let ht = (self.t_range[1] - self.t_range[0]) / n;
        let [x0, x1, y0, y1] = self.support;
        (
            [self.s_range[0] + hs * x0 as f64, self.s_range[0] + hs * (x1 + 1) as f64],
            [self.t_range[0] + ht * y0 as f64, self.t_range[0] + ht * (y1 + 1) as f64],
        )
    }

    /// Largest distance from the source to the support box.
    pub fn max_distance(&self) -> f64 {
        let (s, t) = self.support_box();
        [(s[0], t[0]), (s[0], t[1]), (s[1], t[0]), (s[1], t[1])]
            .iter()
            .map(|&(a, b)| self.point(a, b).norm())
            .fold(0.0, f64::max)
    }

    /// Smallest distance from the source to the support box.
    pub fn min_distance(&self) -> f64 {
        let (s, t) = self.support_box();
        let a = (-self.origin.dot(&self.u)).clamp(s[0], s[1]);
        let b = (-self.origin.dot(&self.v)).clamp(t[0], t[1]);
        self.point(a, b).norm()
    }

    /// Diagonal of the support box.
    pub fn diameter(&self) -> f64 {
        let (s, t) = self.support_box();
        (s[1] - s[0]).hypot(t[1] - t[0])
    }

    /// Mass of the dyadic cell `(ix, iy)` at `level`.
    fn cell_mass(&self, level: usize, ix: usize, iy: usize) -> f64 {
        let n = 1usize << self.micro_level;
        let b = 1usize << (self.micro_level - level);
        let mut block = Vec::with_capacity(b * b);
        for y in iy * b..(iy + 1) * b {
            block.extend_from_slice(&self.micro[y * n + ix * b..y * n + (ix + 1) * b]);
        }
        pairwise_sum(&block)
    }

    /// Representative of a cell: the centroid, or the nearest positive-mass
    /// micro-cell center when the density vanishes at the centroid.
    fn representative(&self, level: usize, ix: usize, iy: usize) -> [f64; 2] {
        let m = 1usize << level;
        let hs = (self.s_range[1] - self.s_range[0]) / m as f64;
        let ht = (self.t_range[1] - self.t_range[0]) / m as f64;
        let c = [self.s_range[0] + hs * (ix as f64 + 0.5), self.t_range[0] + ht * (iy as f64 + 0.5)];
        if self.density(c[0], c[1]) > 0.0 {
            return c;
        }
        let n = 1usize << self.micro_level;
        let b = 1usize << (self.micro_level - level);
        let ms = (self.s_range[1] - self.s_range[0]) / n as f64;
        let mt = (self.t_range[1] - self.t_range[0]) / n as f64;
        let mut best = (f64::INFINITY, c);
        for y in iy * b..(iy + 1) * b {
            for x in ix * b..(ix + 1) * b {
                if self.micro[y * n + x] > 0.0 {
                    let p = [self.s_range[0] + ms * (x as f64 + 0.5), self.t_range[0] + mt * (y as f64 + 0.5)];
                    let dist = (p[0] - c[0]).hypot(p[1] - c[1]);
                    if dist < best.0 {
                        best = (dist, p);
                    }
                }
            }
        }
        best.1
    }
}

/// One cell of a dyadic partition of the target rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub level: usize,
    pub ix: usize,
    pub iy: usize,
    pub mass: f64,
    /// Plane coordinates of the representative point.
    pub representative: [f64; 2],
    pub point: Vec3,
}

/// Dyadic partition of a planar target into positive-mass cells. The cell
/// containing the overshoot point comes first and is represented by it.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPartition {
    level: usize,
    cells: Vec<Cell>,
    max_diameter: f64,
}

impl CellPartition {
    /// Level 0: the whole rectangle as one cell.
    pub fn initial(target: &PlanarDensity) -> Self {
        Self::at_level(target, 0)
    }

    fn at_level(target: &PlanarDensity, level: usize) -> Self {
        let m = 1usize << level;
        let n = 1usize << target.micro_level;
        let (ox, oy) = target.micro_index(target.overshoot);
        let b = n / m;
        let (cx, cy) = (ox / b, oy / b);
        let mut cells = Vec::new();
        let mut first = None;
        for iy in 0..m {
            for ix in 0..m {
                let mass = target.cell_mass(level, ix, iy);
                if mass <= 0.0 {
                    continue;
                }
                let representative = if (ix, iy) == (cx, cy) {
                    target.overshoot
                } else {
                    target.representative(level, ix, iy)
                };
                let cell = Cell {
                    level,
                    ix,
                    iy,
                    mass,
                    representative,
                    point: target.point(representative[0], representative[1]),
                };
                if (ix, iy) == (cx, cy) {
                    first = Some(cell);
                } else {
                    cells.push(cell);
                }
            }
        }
        // The overshoot cell has positive mass by construction of PlanarDensity.
        cells.insert(0, first.expect("overshoot cell has positive mass"));
        Self {
            level,
            cells,
            max_diameter: target.initial_diameter() / m as f64,
        }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn max_diameter(&self) -> f64 {
        self.max_diameter
    }

    pub fn total_mass(&self) -> f64 {
        pairwise_sum(&self.cells.iter().map(|c| c.mass).collect::<Vec<_>>())
    }

    /// Index in the parent partition of the cell containing each cell.
    pub fn parents(&self, parent: &CellPartition) -> Vec<Option<usize>> {
        self.cells
            .iter()
            .map(|c| {
                let shift = self.level - parent.level;
                parent
                    .cells
                    .iter()
                    .position(|p| p.ix == c.ix >> shift && p.iy == c.iy >> shift)
            })
            .collect()
    }

    /// Atoms at the representatives, overshoot first.
    pub fn to_discrete(&self) -> Result<DiscreteTarget> {
        DiscreteTarget::points(
            self.cells.iter().map(|c| c.point).collect(),
            self.cells.iter().map(|c| c.mass).collect(),
            0,
        )
    }
}

/// Split every cell into four, drop null cells and re-read masses.
pub fn refine_partition(partition: &CellPartition, target: &PlanarDensity) -> Result<CellPartition> {
    let level = partition.level + 1;
    if level > target.micro_level {
        return Err(LumenError::invalid(format!(
            "partition level {level} exceeds the micro grid level {}",
            target.micro_level
        )));
    }
    Ok(CellPartition::at_level(target, level))
}

/// A target measure: finitely many atoms or a planar density.
#[derive(Debug, Clone)]
pub enum TargetMeasure {
    Discrete(DiscreteTarget),
    Planar(PlanarDensity),
}

impl TargetMeasure {
    pub fn max_distance(&self) -> f64 {
        match self {
            TargetMeasure::Discrete(t) => t.max_distance(),
            TargetMeasure::Planar(p) => p.max_distance(),
        }
    }

    pub fn min_distance(&self) -> f64 {
        match self {
            TargetMeasure::Discrete(t) => t.min_distance(),
            TargetMeasure::Planar(p) => p.min_distance(),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            TargetMeasure::Discrete(t) => t.diameter(),
            TargetMeasure::Planar(p) => p.diameter(),
        }
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            TargetMeasure::Discrete(t) => t.total_mass(),
            TargetMeasure::Planar(p) => p.total_mass(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_square(g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static, overshoot: [f64; 2]) -> PlanarDensity {
        PlanarDensity::new(
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::x(),
            Vec3::y(),
            [0.0, 1.0],
            [0.0, 1.0],
            g,
            overshoot,
            6,
        )
        .unwrap()
    }

    #[test]
    fn discrete_moves_overshoot_first() {
        let t = DiscreteTarget::points(
            vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0), Vec3::new(0.0, 0.0, 3.0)],
            vec![1.0, 2.0, 3.0],
            2,
        )
        .unwrap();
        assert_eq!(t.masses()[0], 3.0);
        assert_eq!(t.original_indices()[0], 2);
        assert_eq!(t.max_distance(), 3.0);
        assert_eq!(t.min_distance(), 1.0);
        assert_relative_eq!(t.diameter(), 13f64.sqrt());
    }

    #[test]
    fn discrete_rejects_bad_atoms() {
        assert!(DiscreteTarget::points(vec![Vec3::x()], vec![0.0], 0).is_err());
        assert!(DiscreteTarget::points(vec![Vec3::zeros()], vec![1.0], 0).is_err());
        assert!(DiscreteTarget::points(vec![Vec3::x()], vec![1.0], 1).is_err());
        assert!(DiscreteTarget::points(vec![], vec![], 0).is_err());
    }

    #[test]
    fn uniform_split_into_quarters() {
        let p = unit_square(|_, _| 1.0, [0.3, 0.3]);
        let l0 = CellPartition::initial(&p);
        assert_eq!(l0.len(), 1);
        let l1 = refine_partition(&l0, &p).unwrap();
        assert_eq!(l1.len(), 4);
        for c in l1.cells() {
            assert!((c.mass - 0.25).abs() < 1e-6);
        }
        assert_eq!(l1.cells()[0].representative, [0.3, 0.3]);
        assert_relative_eq!(l1.max_diameter(), 2f64.sqrt() / 2.0);
    }

    #[test]
    fn zero_mass_cells_are_dropped_and_representatives_snap() {
        // Density supported on an L-shaped region whose centroid cell is empty.
        let p = unit_square(|s, t| if s < 0.25 || t < 0.25 { 1.0 } else { 0.0 }, [0.1, 0.1]);
        let mut part = CellPartition::initial(&p);
        for _ in 0..3 {
            part = refine_partition(&part, &p).unwrap();
            assert_relative_eq!(part.total_mass(), p.total_mass(), max_relative = 1e-12);
            for c in part.cells() {
                assert!(c.mass > 0.0);
                assert!(p.density(c.representative[0], c.representative[1]) > 0.0);
                let size = 1.0 / (1 << part.level()) as f64;
                assert!(c.representative[0] >= c.ix as f64 * size && c.representative[0] <= (c.ix + 1) as f64 * size);
                assert!(c.representative[1] >= c.iy as f64 * size && c.representative[1] <= (c.iy + 1) as f64 * size);
            }
        }
        assert_eq!(part.len(), 64 - 36);
    }

    #[test]
    fn overshoot_must_be_in_support() {
        let r = PlanarDensity::new(
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::x(),
            Vec3::y(),
            [0.0, 1.0],
            [0.0, 1.0],
            |s, _| if s < 0.5 { 1.0 } else { 0.0 },
            [0.9, 0.5],
            5,
        );
        assert!(r.is_err());
    }
}

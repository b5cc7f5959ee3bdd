use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_energy_condition, EnergyCheck, FieldMode, OvershootCase, SolveReport, SolverConfig};
use crate::envelope::{
    assign_regions, reflector_measure, regularity_report, runs, share_term, FocalVector, Reflector, ReflectorKind,
    WeightModel,
};
use crate::error::{LumenError, Result};
use crate::geometry::{eccentricity_from_focal, incidence, Ellipsoid, Paraboloid};
use crate::numeric::pairwise_sum;
use crate::sphere_domain::{DiscreteTarget, IntensityField, SphericalGrid, TargetKind, CELL_SAMPLES};

/// Points of a uniform scan used when the measure is found non-monotone.
const SCAN_POINTS: usize = 64;

/// Initial focal vector, floor, and the value at which an atom receives no flux.
pub(crate) struct Layout {
    pub initial: Vec<f64>,
    pub floor: f64,
    pub ceiling: f64,
    pub energy: EnergyCheck,
}

/// Validates the configuration against the target and grid, checks the
/// energy condition and returns the cold-start layout.
pub(crate) fn layout(
    grid: &SphericalGrid,
    f: &IntensityField,
    target: &DiscreteTarget,
    config: &SolverConfig,
) -> Result<Layout> {
    config.validate()?;
    let n = target.len();
    if let Some(order) = &config.sweep_order {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted != (1..n).collect::<Vec<_>>() {
            return Err(LumenError::invalid("sweep_order must be a permutation of 1..N"));
        }
    }
    let (d0, floor, ceiling) = match config.mode {
        FieldMode::Near { delta, k } => {
            if target.kind() != TargetKind::Points {
                return Err(LumenError::invalid("near-field solve needs a point target"));
            }
            let bound = crate::geometry::DeltaBound::new(delta)?;
            let m = target.max_distance();
            let t = k * bound.ratio() * config.init_t;
            (k * delta * m, delta * m, t * delta * m)
        }
        FieldMode::Far { delta, a, a_prime } => {
            if target.kind() != TargetKind::Directions {
                return Err(LumenError::invalid("far-field solve needs a direction target"));
            }
            for (i, m) in target.locations().iter().enumerate() {
                let reach = grid.domain().max_dot(m);
                if reach > 1.0 - delta + 1e-12 {
                    return Err(LumenError::ConstraintViolated(format!(
                        "aperture reaches x.m = {reach} for direction {i}, above 1 - delta = {}",
                        1.0 - delta
                    )));
                }
            }
            (a_prime, 2.0 * a, 2.0 * a_prime / delta * config.init_t)
        }
    };
    let constant = config.feasibility_constant(target.max_distance())?;
    let energy = check_energy_condition(f.total_flux(), target.total_mass(), constant)?;
    if !energy.feasible {
        return Err(LumenError::Infeasible {
            margin: energy.margin,
            flux: energy.flux,
            required: energy.required,
        });
    }
    let mut initial = vec![ceiling; n];
    initial[0] = d0;
    Ok(Layout { initial, floor, ceiling, energy })
}

/// Monotone coordinate sweeps on the focal parameters of atoms `1..N`.
///
/// Every step sets `d_i` to the smallest value (within `bisection_tol`)
/// with `mu_i <= g_i`, holding the other coordinates fixed. Radii and
/// measure terms are formed with the same expressions as the envelope, so
/// sample winners and per-atom sums agree bitwise with
/// [`reflector_measure`].
struct Engine<'a> {
    kind: ReflectorKind,
    focal_distance: Vec<f64>,
    /// `x_j . m_i` per atom at the nodes.
    node_dots: Vec<Vec<f64>>,
    /// `y . m_i` per atom at the membership samples.
    sample_dots: Vec<Vec<f64>>,
    wf: Vec<f64>,
    weight: &'a WeightModel,
    masses: &'a [f64],
    floor: f64,
    ceiling: f64,
    tol: f64,
    btol: f64,
    d: Vec<f64>,
    eps: Vec<f64>,
    /// Radii per atom at the membership samples.
    radii: Vec<Vec<f64>>,
    /// Two smallest `(radius, atom)` per sample in lexicographic order, so
    /// `top[s][0]` is the envelope winner under least-index ties.
    top: Vec<[(f64, u32); 2]>,
}

/// Lexicographic order on `(radius, atom)`.
#[inline]
fn before(a: (f64, u32), b: (f64, u32)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn top_two(radii: &[Vec<f64>], s: usize) -> [(f64, u32); 2] {
    let mut top = [(f64::INFINITY, u32::MAX); 2];
    for (a, row) in radii.iter().enumerate() {
        let c = (row[s], a as u32);
        if before(c, top[0]) {
            top[1] = top[0];
            top[0] = c;
        } else if before(c, top[1]) {
            top[1] = c;
        }
    }
    top
}

/// Data needed to evaluate `mu_i(d)` with the other atoms frozen, restricted
/// to nodes with a sample atom `i` can win above the floor.
struct Slice<'e> {
    weight: &'e WeightModel,
    kind: ReflectorKind,
    focal_distance: f64,
    nodes: Vec<usize>,
    node_t: Vec<f64>,
    wf: Vec<f64>,
    /// Per candidate node, `CELL_SAMPLES` entries each.
    sample_t: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Slice<'_> {
    fn eps(&self, d: f64) -> f64 {
        match self.kind {
            ReflectorKind::Near => eccentricity_from_focal(d, self.focal_distance).unwrap_or(0.0),
            ReflectorKind::Far => 1.0,
        }
    }

    fn measure(&self, d: f64, buf: &mut Vec<f64>) -> f64 {
        let eps = self.eps(d);
        buf.clear();
        for k in 0..self.nodes.len() {
            let base = k * CELL_SAMPLES;
            let mut wins = 0;
            for s in base..base + CELL_SAMPLES {
                let r = d / (1.0 - eps * self.sample_t[s]);
                if r < self.lower[s] && r <= self.upper[s] {
                    wins += 1;
                }
            }
            if wins > 0 {
                let (u, rho) = incidence(d, eps, self.node_t[k]);
                buf.push(share_term(self.wf[k], wins, self.weight.eval(u, rho)));
            }
        }
        pairwise_sum(buf)
    }
}

/// Result of one coordinate step.
struct Step {
    d: f64,
    at_floor_short: bool,
}

impl<'a> Engine<'a> {
    fn new(
        grid: &SphericalGrid,
        f: &IntensityField,
        target: &'a DiscreteTarget,
        config: &'a SolverConfig,
        layout: &Layout,
        initial: &[f64],
    ) -> Result<Self> {
        if f.values().len() != grid.len() {
            return Err(LumenError::invalid("intensity field is bound to a different grid"));
        }
        let kind = config.kind();
        let axes: Vec<_> = target
            .locations()
            .iter()
            .map(|p| match kind {
                ReflectorKind::Near => Ellipsoid::new(*p, 1.0).map(|e| e.axis()),
                ReflectorKind::Far => Paraboloid::new(*p, 1.0).map(|q| q.axis()),
            })
            .collect::<Result<_>>()?;
        let node_dots = axes
            .iter()
            .map(|m| grid.nodes().par_iter().map(|x| x.dot(m)).collect())
            .collect();
        let sample_dots = axes
            .iter()
            .map(|m| grid.cell_samples().par_iter().map(|y| y.dot(m)).collect())
            .collect();
        let wf = grid.weights().iter().zip(f.values()).map(|(w, v)| w * v).collect();
        let mut engine = Self {
            kind,
            focal_distance: target.locations().iter().map(|p| p.norm()).collect(),
            node_dots,
            sample_dots,
            wf,
            weight: &config.weight,
            masses: target.masses(),
            floor: layout.floor,
            ceiling: layout.ceiling,
            tol: config.residual_tol,
            btol: config.bisection_tol,
            d: initial.to_vec(),
            eps: vec![0.0; target.len()],
            radii: vec![Vec::new(); target.len()],
            top: Vec::new(),
        };
        for i in 0..target.len() {
            let eps = engine.eps_of(i, initial[i])?;
            engine.eps[i] = eps;
            engine.radii[i] = engine.sample_dots[i].par_iter().map(|t| initial[i] / (1.0 - eps * t)).collect();
        }
        let radii = &engine.radii;
        engine.top = (0..grid.cell_samples().len()).into_par_iter().map(|s| top_two(radii, s)).collect();
        Ok(engine)
    }

    fn eps_of(&self, i: usize, d: f64) -> Result<f64> {
        match self.kind {
            ReflectorKind::Near => eccentricity_from_focal(d, self.focal_distance[i]),
            ReflectorKind::Far => Ok(1.0),
        }
    }

    fn set(&mut self, i: usize, d: f64) -> Result<()> {
        let eps = self.eps_of(i, d)?;
        self.d[i] = d;
        self.eps[i] = eps;
        self.radii[i] = self.sample_dots[i].par_iter().map(|t| d / (1.0 - eps * t)).collect();
        let radii = &self.radii;
        let atom = i as u32;
        self.top.par_iter_mut().enumerate().for_each(|(s, top)| {
            if top[0].1 == atom || top[1].1 == atom {
                *top = top_two(radii, s);
            } else {
                let c = (radii[i][s], atom);
                if before(c, top[0]) {
                    top[1] = top[0];
                    top[0] = c;
                } else if before(c, top[1]) {
                    top[1] = c;
                }
            }
        });
        Ok(())
    }

    fn slice(&self, i: usize) -> Slice<'_> {
        let eps_floor = self.eps_of(i, self.floor).unwrap_or(0.0);
        let floor = self.floor;
        let dots = &self.sample_dots[i];
        let atom = i as u32;
        // Atom i wins a sample iff it beats the best other atom, strictly when
        // that atom has the smaller index.
        let bounds: Vec<(f64, f64, bool)> = self
            .top
            .par_iter()
            .enumerate()
            .map(|(s, top)| {
                let rival = if top[0].1 == atom { top[1] } else { top[0] };
                let (lower, upper) = if rival.1 < atom { (rival.0, f64::INFINITY) } else { (f64::INFINITY, rival.0) };
                let r = floor / (1.0 - eps_floor * dots[s]);
                (lower, upper, r < lower && r <= upper)
            })
            .collect();
        let nodes: Vec<usize> = (0..self.wf.len())
            .filter(|&j| bounds[j * CELL_SAMPLES..(j + 1) * CELL_SAMPLES].iter().any(|b| b.2))
            .collect();
        let samples = |j: usize| j * CELL_SAMPLES..(j + 1) * CELL_SAMPLES;
        Slice {
            weight: self.weight,
            kind: self.kind,
            focal_distance: self.focal_distance[i],
            node_t: nodes.iter().map(|&j| self.node_dots[i][j]).collect(),
            wf: nodes.iter().map(|&j| self.wf[j]).collect(),
            sample_t: nodes.iter().flat_map(|&j| dots[samples(j)].iter().copied()).collect(),
            lower: nodes.iter().flat_map(|&j| bounds[samples(j)].iter().map(|b| b.0)).collect(),
            upper: nodes.iter().flat_map(|&j| bounds[samples(j)].iter().map(|b| b.1)).collect(),
            nodes,
        }
    }

    fn bisect(&self, slice: &Slice, g: f64, mut lo: f64, mut hi: f64, buf: &mut Vec<f64>) -> f64 {
        while hi - lo > self.btol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if slice.measure(mid, buf) > g {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Smallest `d` in `[floor, ceiling]` reachable from the current value
    /// with `mu_i(d) <= g_i`.
    fn step(&self, i: usize) -> Result<Step> {
        let g = self.masses[i];
        let cur = self.d[i];
        let slice = self.slice(i);
        let mut buf = Vec::with_capacity(slice.nodes.len());
        let mu_cur = slice.measure(cur, &mut buf);

        if mu_cur > g {
            // Above target: raise d until the atom is back under its mass.
            let mut lo = cur;
            let mut width = (1e-3 * cur).max(2.0 * self.btol);
            loop {
                let hi = (lo + width).min(self.ceiling);
                if slice.measure(hi, &mut buf) <= g {
                    return Ok(Step { d: self.bisect(&slice, g, lo, hi, &mut buf), at_floor_short: false });
                }
                if hi >= self.ceiling {
                    return Err(LumenError::NonConvergence {
                        sweeps: 0,
                        last_residual: (mu_cur - g) / g,
                        trace: Vec::new(),
                    });
                }
                lo = hi;
                width *= 2.0;
            }
        }

        if cur - self.floor <= self.btol {
            return Ok(Step { d: cur, at_floor_short: mu_cur < g * (1.0 - self.tol) });
        }
        let probe = (cur - self.btol).max(self.floor);
        if slice.measure(probe, &mut buf) > g {
            return Ok(Step { d: cur, at_floor_short: false });
        }

        // Expand a bracket downward: mu(hi) <= g < mu(lo).
        let mut hi = cur;
        let mut mu_hi = mu_cur;
        let mut width = (1e-3 * (cur - self.floor)).max(2.0 * self.btol);
        loop {
            let lo = (hi - width).max(self.floor);
            let mu_lo = slice.measure(lo, &mut buf);
            if mu_lo > g {
                return Ok(Step { d: self.bisect(&slice, g, lo, hi, &mut buf), at_floor_short: false });
            }
            if mu_lo < mu_hi - 1e-12 * g {
                return Ok(self.scan(&slice, g, cur, &mut buf));
            }
            if lo <= self.floor {
                return Ok(Step { d: self.floor, at_floor_short: mu_lo < g * (1.0 - self.tol) });
            }
            hi = lo;
            mu_hi = mu_lo;
            width *= 2.0;
        }
    }

    /// Fallback when `mu_i` decreased as `d_i` decreased: walk down a uniform
    /// lattice to the first point above the target, then bisect.
    fn scan(&self, slice: &Slice, g: f64, cur: f64, buf: &mut Vec<f64>) -> Step {
        let h = (cur - self.floor) / SCAN_POINTS as f64;
        let mut hi = cur;
        for k in 1..=SCAN_POINTS {
            let lo = if k == SCAN_POINTS { self.floor } else { cur - h * k as f64 };
            let mu = slice.measure(lo, buf);
            if mu > g {
                return Step { d: self.bisect(slice, g, lo, hi, buf), at_floor_short: false };
            }
            if k == SCAN_POINTS {
                return Step { d: self.floor, at_floor_short: mu < g * (1.0 - self.tol) };
            }
            hi = lo;
        }
        unreachable!("scan loop always returns")
    }

    /// Measure of every atom at the current iterate.
    fn measure_all(&self) -> Vec<f64> {
        let atoms = self.d.len();
        let terms: Vec<Vec<(usize, f64)>> = (0..self.wf.len())
            .into_par_iter()
            .map(|j| {
                let mut winners = [0u32; CELL_SAMPLES];
                for (k, w) in winners.iter_mut().enumerate() {
                    *w = self.top[j * CELL_SAMPLES + k][0].1;
                }
                winners.sort_unstable();
                runs(&winners)
                    .map(|(a, wins)| {
                        let (u, rho) = incidence(self.d[a], self.eps[a], self.node_dots[a][j]);
                        (a, share_term(self.wf[j], wins, self.weight.eval(u, rho)))
                    })
                    .collect()
            })
            .collect();
        let mut per_atom = vec![Vec::new(); atoms];
        for list in terms {
            for (a, t) in list {
                per_atom[a].push(t);
            }
        }
        per_atom.iter().map(|v| pairwise_sum(v)).collect()
    }

    fn max_residual(&self, mu: &[f64]) -> f64 {
        (1..mu.len())
            .map(|i| (mu[i] - self.masses[i]).abs() / self.masses[i])
            .fold(0.0, f64::max)
    }

    fn floor_short(&self, mu: &[f64]) -> Option<usize> {
        (1..mu.len()).find(|&i| self.d[i] - self.floor <= self.btol && mu[i] < self.masses[i] * (1.0 - self.tol))
    }

    fn floor_error(&self, i: usize, mu: &[f64]) -> LumenError {
        LumenError::FloorHit { atom: i, floor: self.floor, measure: mu[i], target: self.masses[i] }
    }
}

/// Solves from an explicit starting vector between the floor and the cold
/// start. `monotone` marks a cold start, for which a floor hit is final.
pub(crate) fn solve_from(
    grid: &SphericalGrid,
    f: &IntensityField,
    target: &DiscreteTarget,
    config: &SolverConfig,
    layout: &Layout,
    initial: &[f64],
    monotone: bool,
) -> Result<SolveReport> {
    let n = target.len();
    let order: Vec<usize> = config.sweep_order.clone().unwrap_or_else(|| (1..n).collect());
    let mut engine = Engine::new(grid, f, target, config, layout, initial)?;
    let mut trace = Vec::new();
    let mut sweeps = 0;
    let mut polished = false;

    if n > 1 {
        let mut last = engine.measure_all();
        for sweep in 1..=config.max_sweeps {
            sweeps = sweep;
            let mut max_change: f64 = 0.0;
            for &i in &order {
                let step = engine.step(i).map_err(|e| match e {
                    LumenError::NonConvergence { last_residual, .. } => LumenError::NonConvergence {
                        sweeps: sweep,
                        last_residual,
                        trace: trace.clone(),
                    },
                    other => other,
                })?;
                if step.at_floor_short && monotone {
                    let mu = engine.measure_all();
                    return Err(engine.floor_error(i, &mu));
                }
                max_change = max_change.max((step.d - engine.d[i]).abs());
                if step.d != engine.d[i] {
                    engine.set(i, step.d)?;
                }
            }
            last = engine.measure_all();
            let res = engine.max_residual(&last);
            trace.push(res);
            if max_change <= config.bisection_tol {
                if res <= config.residual_tol {
                    polished = true;
                    break;
                }
                if let Some(i) = engine.floor_short(&last) {
                    return Err(engine.floor_error(i, &last));
                }
                return Err(LumenError::NonConvergence { sweeps, last_residual: res, trace });
            }
        }
        let res = engine.max_residual(&last);
        if !polished && res > config.residual_tol {
            if let Some(i) = engine.floor_short(&last) {
                return Err(engine.floor_error(i, &last));
            }
            return Err(LumenError::NonConvergence { sweeps, last_residual: res, trace });
        }
    } else {
        polished = true;
    }

    finish(grid, f, target, config, layout, engine.d, sweeps, polished, trace)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    grid: &SphericalGrid,
    f: &IntensityField,
    target: &DiscreteTarget,
    config: &SolverConfig,
    layout: &Layout,
    d: Vec<f64>,
    sweeps: usize,
    polished: bool,
    trace: Vec<f64>,
) -> Result<SolveReport> {
    if let Some(i) = d.iter().position(|&v| v < layout.floor) {
        return Err(LumenError::ConstraintViolated(format!(
            "focal parameter {} of atom {i} below the floor {}",
            d[i], layout.floor
        )));
    }
    let focal = FocalVector::new(config.kind(), d);
    let reflector = Reflector::for_target(target, &focal)?;
    let measure = reflector_measure(&reflector, grid, f, &config.weight)?;
    let regions = assign_regions(&reflector, grid);
    let regularity = regularity_report(&reflector, grid);
    let g = target.masses();
    let residuals: Vec<f64> = (0..g.len())
        .map(|i| if i == 0 { 0.0 } else { (measure.values[i] - g[i]).abs() / g[i] })
        .collect();
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    let overshoot = measure.values[0] - g[0];
    let overshoot_case = if overshoot > config.residual_tol * g[0] {
        OvershootCase::Strict
    } else {
        OvershootCase::Matched
    };
    Ok(SolveReport {
        reflector,
        focal,
        measure,
        targets: g.to_vec(),
        residuals,
        max_residual,
        overshoot,
        overshoot_case,
        sweeps,
        polished,
        tie_fraction: regions.tie_fraction,
        coverage: regions.coverage(),
        energy: layout.energy,
        floor: layout.floor,
        trace,
        regularity,
    })
}

/// Discrete solve from the cold start: `d_1` fixed at `k delta M` (near) or
/// `a'` (far), all other atoms start where they receive no flux.
pub fn solve_discrete(
    grid: &SphericalGrid,
    f: &IntensityField,
    target: &DiscreteTarget,
    config: &SolverConfig,
) -> Result<SolveReport> {
    let layout = layout(grid, f, target, config)?;
    let initial = layout.initial.clone();
    solve_from(grid, f, target, config, &layout, &initial, true)
}

/// Summary of repeated solves with permuted sweeps and perturbed starts.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimalityOutcome {
    pub trials: usize,
    /// Largest componentwise focal-parameter deviation from the reference.
    pub max_deviation: f64,
    /// Smallest `mu_1(trial) - mu_1(reference)`.
    pub min_overshoot_gap: f64,
}

/// Re-solves with `trials` permuted sweep orders and larger initial
/// parameters; every run must reproduce the reference focal vector within
/// `10 * bisection_tol` and may not overshoot less than the reference.
pub fn overshoot_minimality_check(
    grid: &SphericalGrid,
    f: &IntensityField,
    target: &DiscreteTarget,
    config: &SolverConfig,
    reference: &SolveReport,
    trials: usize,
    seed: u64,
) -> Result<MinimalityOutcome> {
    let n = target.len();
    let mut outcome = MinimalityOutcome { trials: 0, max_deviation: 0.0, min_overshoot_gap: f64::INFINITY };
    if n == 1 {
        outcome.min_overshoot_gap = 0.0;
        return Ok(outcome);
    }
    let g1 = target.masses()[0];
    for k in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        let mut order: Vec<usize> = (1..n).collect();
        order.shuffle(&mut rng);
        let mut cfg = config.clone();
        cfg.sweep_order = Some(order);
        cfg.init_t = config.init_t * (1.0 + 0.5 * (k + 1) as f64 / trials as f64);
        let trial = solve_discrete(grid, f, target, &cfg)?;
        let deviation = trial
            .focal
            .values
            .iter()
            .zip(&reference.focal.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let gap = trial.measure.values[0] - reference.measure.values[0];
        if deviation > 10.0 * config.bisection_tol || gap < -config.residual_tol * g1 {
            return Err(LumenError::MinimalityViolation {
                reference: reference.focal.values.clone(),
                trial: trial.focal.values,
            });
        }
        outcome.trials += 1;
        outcome.max_deviation = outcome.max_deviation.max(deviation);
        outcome.min_overshoot_gap = outcome.min_overshoot_gap.min(gap);
    }
    Ok(outcome)
}

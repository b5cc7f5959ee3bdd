use rayon::prelude::*;

use super::discrete::{layout, solve_from};
use super::{SolveReport, SolverConfig};
use crate::error::{LumenError, Result};
use crate::sphere_domain::{refine_partition, CellPartition, IntensityField, PlanarDensity, SphericalGrid};

/// One level of the refinement driver.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSummary {
    pub level: usize,
    pub cells: usize,
    pub max_diameter: f64,
    pub sweeps: usize,
    pub max_residual: f64,
    /// `sup over nodes |rho_l - rho_{l-1}|`; `None` at the first level.
    pub sup_change: Option<f64>,
    /// Whether the level started from the parent's focal parameters.
    pub warm_start: bool,
}

#[derive(Debug, Clone)]
pub struct GeneralReport {
    pub levels: Vec<LevelSummary>,
    /// Solve at the final level; atom `i` is cell `i` of `partition`.
    pub report: SolveReport,
    pub partition: CellPartition,
    /// The last `sup_change` fell below `uniform_tol`.
    pub converged_uniformly: bool,
}

/// Solves a planar-density target through dyadic partitions of increasing
/// level, each cell replaced by an atom at its representative point.
///
/// Level `l + 1` starts from level `l` with children inheriting the parent's
/// focal parameter; a warm start that fails falls back to the cold start.
/// Stops when consecutive envelopes differ by at most `uniform_tol` on the
/// grid or after `max_levels` levels. Errors carry the level index.
pub fn solve_general(
    grid: &SphericalGrid,
    f: &IntensityField,
    target: &PlanarDensity,
    config: &SolverConfig,
) -> Result<GeneralReport> {
    if config.max_levels == 0 {
        return Err(LumenError::invalid("max_levels must be positive"));
    }
    let wrap = |level: usize| move |e: LumenError| LumenError::Level { level, source: Box::new(e) };

    let mut partition = CellPartition::initial(target);
    let mut levels = Vec::new();
    let mut previous: Option<(CellPartition, SolveReport, Vec<f64>)> = None;
    let mut converged_uniformly = false;

    for level in 0..config.max_levels {
        if level > 0 {
            partition = refine_partition(&partition, target).map_err(wrap(level))?;
        }
        let discrete = partition.to_discrete().map_err(wrap(level))?;
        let lay = layout(grid, f, &discrete, config).map_err(wrap(level))?;

        let mut warm_start = false;
        let mut solved = None;
        if let Some((parent, parent_report, _)) = &previous {
            let parents = partition.parents(parent);
            if parents.iter().all(Option::is_some) {
                let mut initial: Vec<f64> = parents
                    .iter()
                    .map(|p| parent_report.focal.values[p.unwrap()].clamp(lay.floor, lay.ceiling))
                    .collect();
                initial[0] = lay.initial[0];
                if let Ok(rep) = solve_from(grid, f, &discrete, config, &lay, &initial, false) {
                    warm_start = true;
                    solved = Some(rep);
                }
            }
        }
        let report = match solved {
            Some(r) => r,
            None => solve_from(grid, f, &discrete, config, &lay, &lay.initial, true).map_err(wrap(level))?,
        };

        let radii = report.reflector.radii(grid);
        let sup_change = previous.as_ref().map(|(_, _, prev)| {
            radii
                .par_iter()
                .zip(prev.par_iter())
                .map(|(a, b)| (a - b).abs())
                .reduce(|| 0.0, f64::max)
        });
        levels.push(LevelSummary {
            level,
            cells: partition.len(),
            max_diameter: partition.max_diameter(),
            sweeps: report.sweeps,
            max_residual: report.max_residual,
            sup_change,
            warm_start,
        });
        let done = sup_change.is_some_and(|s| s <= config.uniform_tol);
        previous = Some((partition.clone(), report, radii));
        if done {
            converged_uniformly = true;
            break;
        }
    }

    let (partition, report, _) = previous.expect("at least one level is solved");
    Ok(GeneralReport { levels, report, partition, converged_uniformly })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Vec3;
    use crate::solver::feasibility_constant;
    use crate::sphere_domain::DomainSpec;

    #[test]
    fn point_like_density_reduces_to_one_atom() {
        let grid = SphericalGrid::build(&DomainSpec::hemisphere(Vec3::z()).unwrap(), 2_000).unwrap();
        let f = IntensityField::constant(1.0, &grid).unwrap();
        // All mass in the micro cell containing the overshoot point.
        let target = PlanarDensity::new(
            Vec3::new(-0.5, -0.5, -1.0),
            Vec3::x(),
            Vec3::y(),
            [0.0, 1.0],
            [0.0, 1.0],
            |s, t| if s < 1.0 / 32.0 && t < 1.0 / 32.0 { 1.0 } else { 0.0 },
            [0.01, 0.01],
            5,
        )
        .unwrap();
        let mut cfg = SolverConfig::near(15.0 / 8.0, 5.0 / 3.0);
        cfg.max_levels = 3;
        let rep = solve_general(&grid, &f, &target, &cfg).unwrap();
        assert!(rep.levels.iter().all(|l| l.cells == 1));
        assert_eq!(rep.levels.last().unwrap().sup_change, Some(0.0));
        assert!(rep.converged_uniformly);
        assert_eq!(rep.levels.len(), 2);
    }

    #[test]
    fn infeasible_level_carries_index() {
        let grid = SphericalGrid::build(&DomainSpec::hemisphere(Vec3::z()).unwrap(), 500).unwrap();
        let f = IntensityField::constant(1.0, &grid).unwrap();
        let c = feasibility_constant(15.0 / 8.0, 5.0 / 3.0, 1.5).unwrap();
        let scale = 4.0 * c * f.total_flux();
        let target = PlanarDensity::new(
            Vec3::new(-0.5, -0.5, -1.0),
            Vec3::x(),
            Vec3::y(),
            [0.0, 1.0],
            [0.0, 1.0],
            move |_, _| scale,
            [0.5, 0.5],
            4,
        )
        .unwrap();
        let err = solve_general(&grid, &f, &target, &SolverConfig::near(15.0 / 8.0, 5.0 / 3.0)).unwrap_err();
        assert!(matches!(err, LumenError::Level { level: 0, .. }));
        assert!(matches!(err.root(), LumenError::Infeasible { .. }));
    }
}

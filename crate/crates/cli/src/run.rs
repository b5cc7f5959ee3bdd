use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use lumen_core::numeric::orthonormal_frame;
use lumen_core::solver::{
    check_energy_condition, optimal_delta, solve_discrete, solve_general, visibility_report, EnergyCheck,
};
use lumen_core::sphere_domain::TargetKind;
use lumen_core::validate::{compare_constant_weight, obstruction_raycheck, raytrace, transport_residual};
use lumen_core::{
    DiscreteTarget, DomainSpec, FieldMode, IntensityField, LumenError, PlanarDensity, Reflector, SolveReport,
    SolverConfig, SphericalGrid, TargetMeasure, Vec3,
};

use crate::config::{self, JobConfig, Overrides};
use crate::error::CliError;
use crate::mesh::export_mesh;
use crate::report::{self, Feasibility, Refinement, Regularity, ReportFile, SolveSection, Validation};

#[derive(Debug, Parser)]
#[command(name = "lumen", version, about = "Reflector synthesis for a point source under the inverse-square law")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Job config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Requested aperture grid node count.
    #[arg(long, global = true)]
    pub resolution: Option<usize>,
    /// Relative per-atom residual tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Directory for report, CSV and mesh.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Largest target distance, for `optimal-delta`.
    #[arg(long = "M", global = true)]
    pub max_distance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Check the energy condition and visibility, write the report.
    Feasibility,
    /// Discrete near-field solve (points).
    SolveNear,
    /// Discrete far-field solve (directions).
    SolveFar,
    /// Refinement solve of a planar density.
    SolveGeneral,
    /// Solve, then run the validation sections.
    Validate,
    /// Solve and write the mesh.
    ExportMesh,
    /// Print the delta maximizing the feasibility constant.
    OptimalDelta,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Feasibility => "feasibility",
            Command::SolveNear => "solve-near",
            Command::SolveFar => "solve-far",
            Command::SolveGeneral => "solve-general",
            Command::Validate => "validate",
            Command::ExportMesh => "export-mesh",
            Command::OptimalDelta => "optimal-delta",
        }
    }
}

/// Parses `args`, runs, prints and returns the process exit code.
pub fn execute<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::Usage(first).line());
            return 1;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("{}", e.line());
        return e.exit_code();
    }
    let quiet = cli.quiet;
    match run(&cli) {
        Ok(lines) => {
            for line in lines {
                if !quiet || line.starts_with("delta*=") {
                    println!("{line}");
                }
            }
            0
        }
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}

/// `LUMEN_THREADS` caps the worker pool.
fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("LUMEN_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("LUMEN_THREADS must be a positive integer, got `{raw}`")))?;
    // A second build in the same process fails harmlessly.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs one subcommand and returns the summary lines.
pub fn run(cli: &Cli) -> Result<Vec<String>, CliError> {
    if cli.command == Command::OptimalDelta {
        let m = cli.max_distance.ok_or_else(|| CliError::Usage("optimal-delta needs --M".into()))?;
        let best = optimal_delta(m)?;
        return Ok(vec![format!(
            "delta*={} c*={} k*={} C*={}",
            significant(best.delta),
            significant(best.c),
            significant(best.k),
            significant(best.constant)
        )]);
    }
    let path = cli.config.as_deref().ok_or_else(|| CliError::Usage(format!("{} needs --config", cli.command.name())))?;
    let mut config = config::load(path)?;
    config.apply(&Overrides { seed: cli.seed, resolution: cli.resolution, tol: cli.tol });
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let job = Job::prepare(config, &base)?;
    job.dispatch(cli.command, &cli.out)
}

/// Seven significant digits, trailing zeros dropped.
fn significant(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return x.to_string();
    }
    let decimals = (6 - x.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

struct Job {
    config: JobConfig,
    domain: DomainSpec,
    grid: SphericalGrid,
    f: IntensityField,
    target: TargetMeasure,
    solver: SolverConfig,
    energy: EnergyCheck,
    feasibility: Feasibility,
}

struct Solved {
    report: SolveReport,
    atoms: DiscreteTarget,
    refinement: Option<Refinement>,
}

impl Job {
    fn prepare(mut config: JobConfig, base: &Path) -> Result<Self, CliError> {
        let domain = config.domain()?;
        let target = config.target()?;
        let solver = config.resolve(&target)?;
        match (&solver.mode, &target) {
            (FieldMode::Near { .. }, TargetMeasure::Discrete(t)) if t.kind() != TargetKind::Points => {
                return Err(CliError::Config("near mode needs a points or planar target".into()));
            }
            (FieldMode::Far { .. }, TargetMeasure::Discrete(t)) if t.kind() != TargetKind::Directions => {
                return Err(CliError::Config("far mode needs a directions target".into()));
            }
            (FieldMode::Far { .. }, TargetMeasure::Planar(_)) => {
                return Err(CliError::Config("far mode needs a directions target".into()));
            }
            _ => {}
        }
        let grid = SphericalGrid::build(&domain, config.solver.resolution)?;
        let f = config.intensity(&grid, base)?;
        let eta = match &target {
            TargetMeasure::Discrete(t) => t.total_mass(),
            TargetMeasure::Planar(p) => p.total_mass(),
        };
        let constant = solver.feasibility_constant(target.max_distance())?;
        let energy = check_energy_condition(f.total_flux(), eta, constant)?;
        let vis = match solver.mode {
            FieldMode::Near { delta, .. } => Some(visibility_report(&target, &domain, delta)?),
            FieldMode::Far { .. } => None,
        };
        let feasibility = Feasibility::new(&energy, eta, grid.len(), grid.level(), vis.as_ref());
        Ok(Job { config, domain, grid, f, target, solver, energy, feasibility })
    }

    fn dispatch(&self, command: Command, out: &Path) -> Result<Vec<String>, CliError> {
        let mut report = ReportFile {
            schema: report::SCHEMA,
            command: command.name().into(),
            config: self.config.clone(),
            feasibility: self.feasibility.clone(),
            solve: None,
            regularity: None,
            refinement: None,
            validation: None,
        };
        let mut lines = Vec::new();
        std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        let report_path = out.join(&self.config.outputs.report);

        if !self.energy.feasible || command == Command::Feasibility {
            write(&report_path, report::render(&report)?.as_bytes())?;
            lines.push(format!(
                "feasibility: flux {:.6e}, required {:.6e}, margin {:.6e}",
                self.energy.flux, self.energy.required, self.energy.margin
            ));
            lines.push(format!("wrote {}", report_path.display()));
            if !self.energy.feasible {
                return Err(LumenError::Infeasible {
                    margin: self.energy.margin,
                    flux: self.energy.flux,
                    required: self.energy.required,
                }
                .into());
            }
            return Ok(lines);
        }

        let planar = matches!(self.target, TargetMeasure::Planar(_));
        let far = matches!(self.solver.mode, FieldMode::Far { .. });
        let wrong = match command {
            Command::SolveNear => planar || far,
            Command::SolveFar => !far,
            Command::SolveGeneral => !planar,
            _ => false,
        };
        if wrong {
            return Err(CliError::Config(format!(
                "{} does not match the {} mode and {} target in the config",
                command.name(),
                if far { "far" } else { "near" },
                if planar { "planar" } else { "discrete" }
            )));
        }

        let solved = self.solve()?;
        let section = SolveSection::new(&solved.report, &solved.atoms);
        lines.push(format!(
            "{}: {} atoms, {} sweeps, max residual {:.3e}",
            command.name(),
            section.atoms.len(),
            section.sweeps,
            section.max_residual
        ));
        if command == Command::Validate {
            report.validation = Some(self.validate(&solved)?);
        }

        let outputs = &self.config.outputs;
        let mesh = match (command, &outputs.mesh) {
            (_, Some(m)) => Some(m.clone()),
            (Command::ExportMesh, None) => Some("mesh.obj".to_string()),
            _ => None,
        };
        if let Some(m) = mesh {
            let p = out.join(m);
            export_mesh(&solved.report.reflector, &self.grid, &p)?;
            lines.push(format!("wrote {}", p.display()));
        }
        if let Some(c) = &outputs.csv {
            let p = out.join(c);
            write(&p, &report::atoms_csv(&section)?)?;
            lines.push(format!("wrote {}", p.display()));
        }
        report.regularity = Some(Regularity::from(&solved.report.regularity));
        report.refinement = solved.refinement;
        report.solve = Some(section);
        write(&report_path, report::render(&report)?.as_bytes())?;
        lines.push(format!("wrote {}", report_path.display()));
        Ok(lines)
    }

    fn solve(&self) -> Result<Solved, CliError> {
        match &self.target {
            TargetMeasure::Discrete(t) => Ok(Solved {
                report: solve_discrete(&self.grid, &self.f, t, &self.solver)?,
                atoms: t.clone(),
                refinement: None,
            }),
            TargetMeasure::Planar(p) => {
                let rep = solve_general(&self.grid, &self.f, p, &self.solver)?;
                Ok(Solved {
                    atoms: rep.partition.to_discrete()?,
                    refinement: Some(Refinement::new(&rep.levels, rep.converged_uniformly)),
                    report: rep.report,
                })
            }
        }
    }

    fn validate(&self, solved: &Solved) -> Result<Validation, CliError> {
        let v = &self.config.outputs.validation;
        let seed = self.config.solver.seed;
        let r = &solved.report.reflector;
        let near = matches!(self.solver.mode, FieldMode::Near { .. });
        let mut out = Validation::default();

        if v.rays > 0 {
            let mc = raytrace(r, &self.domain, &self.f, &self.solver.weight, v.rays, seed)?;
            out.raytrace = Some(report::RayTrace::new(&mc, &solved.report.measure.values, seed));
        }
        if v.transport_samples > 0 {
            match &self.target {
                TargetMeasure::Planar(p) if on_base_plane(p) => {
                    let samples = chart_samples(&self.domain, v.transport_samples);
                    let check = transport_check(r, &self.f, p, &samples, v.transport_h, v.transport_scale)?;
                    out.transport = Some((&check).into());
                }
                _ => out.skipped.push("transport: needs a planar target on the plane x3 = 0".into()),
            }
        }
        if v.obstruction_samples > 0 {
            if near {
                out.obstruction = Some((&obstruction_raycheck(r, &self.domain, v.obstruction_samples, seed)?).into());
            } else {
                out.skipped.push("obstruction: needs a near-field target".into());
            }
        }
        if v.comparison {
            match &self.target {
                TargetMeasure::Discrete(t) if near => {
                    out.comparison = Some((&compare_constant_weight(&self.grid, &self.f, t, &self.solver)?).into());
                }
                _ => out.skipped.push("comparison: needs a near-field points target".into()),
            }
        }
        Ok(out)
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn on_base_plane(p: &PlanarDensity) -> bool {
    p.origin().z.abs() <= 1e-12 && (p.normal().z.abs() - 1.0).abs() <= 1e-12
}

/// Transport check of `r` against a planar target on `x3 = 0`, whose
/// density per unit area is the density per `ds dt` over `|u x v| = 1`.
pub fn transport_check(
    r: &Reflector,
    f: &IntensityField,
    p: &PlanarDensity,
    samples: &[[f64; 2]],
    h: f64,
    scale: f64,
) -> Result<lumen_core::validate::TransportCheck, CliError> {
    let (s, t) = (p.s_range(), p.t_range());
    let g = |y: &Vec3| {
        let [a, b] = p.coordinates(y);
        if a < s[0] || a > s[1] || b < t[0] || b > t[1] {
            0.0
        } else {
            p.density(a, b)
        }
    };
    let fx = |x: &Vec3| f.eval(x);
    Ok(transport_residual(r, &fx, &g, samples, h, scale)?)
}

/// Up to `n` chart points `(x1, x2)` of a sunflower lattice over the
/// domain's bounding cap, kept where the lifted direction lies inside the
/// domain and in the upper hemisphere.
pub fn chart_samples(domain: &DomainSpec, n: usize) -> Vec<[f64; 2]> {
    let (center, half) = domain.bounding_cap();
    let (e1, e2) = orthonormal_frame(&center);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let top = 1.0 - (0.98 * half).cos();
    (0..n)
        .filter_map(|i| {
            let cos = 1.0 - top * (i as f64 + 0.5) / n as f64;
            let sin = (1.0 - cos * cos).max(0.0).sqrt();
            let phi = golden * i as f64;
            let x = center * cos + (e1 * phi.cos() + e2 * phi.sin()) * sin;
            (domain.margin(&x) > 0.0 && x.z > 1e-3).then_some([x.x, x.y])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits_match_the_documented_output() {
        assert_eq!(significant(15.0 / 8.0), "1.875");
        assert_eq!(significant(5.0 / 3.0), "1.666667");
        assert_eq!(significant(108.0 / 3125.0), "0.03456");
        assert_eq!(significant(0.25), "0.25");
    }

    #[test]
    fn chart_samples_stay_in_the_domain() {
        let domain = DomainSpec::cap(Vec3::z(), 0.5).unwrap();
        let s = chart_samples(&domain, 200);
        assert_eq!(s.len(), 200);
        for x in s {
            assert!((x[0] * x[0] + x[1] * x[1]).sqrt() < 0.5f64.sin());
        }
    }
}

//! Job configuration: one JSON file, parsed strictly.
//!
//! Angles are radians, lengths share one arbitrary unit, flux is in watts.
//! Nothing is converted implicitly.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use lumen_core::solver::{obstruction_threshold, optimal_delta};
use lumen_core::{
    DeltaBound, DiscreteTarget, DomainSpec, IntensityField, PlanarDensity, SolverConfig, SphericalGrid,
    TargetMeasure, Vec3, WeightModel,
};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobConfig {
    pub domain: DomainConfig,
    pub intensity: IntensityConfig,
    pub target: TargetConfig,
    pub solver: SolverBlock,
    #[serde(default)]
    pub outputs: OutputsBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainConfig {
    Sphere,
    Hemisphere { axis: [f64; 3] },
    Cap { center: [f64; 3], half_angle: f64 },
    /// Convex geodesic polygon, counter-clockwise seen from outside.
    Polygon { vertices: Vec<[f64; 3]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityConfig {
    /// W/sr in every direction.
    Constant(f64),
    /// `sum c x^i y^j z^k` over the listed monomials.
    Polynomial { terms: Vec<Monomial> },
    /// CSV with header `x,y,z,value`; a direction takes the value of the
    /// sample with the largest dot product. Relative paths resolve against
    /// the config file.
    Samples { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coefficient: f64,
    pub powers: [u32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetConfig {
    /// Near-field atoms; `overshoot` indexes the atom allowed to overshoot.
    Points { locations: Vec<[f64; 3]>, masses: Vec<f64>, overshoot: usize },
    /// Far-field atoms given as unit directions.
    Directions { directions: Vec<[f64; 3]>, masses: Vec<f64>, overshoot: usize },
    /// Density on the rectangle `origin + s u + t v`.
    Planar(PlanarConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarConfig {
    pub origin: [f64; 3],
    pub u: [f64; 3],
    pub v: [f64; 3],
    pub s_range: [f64; 2],
    pub t_range: [f64; 2],
    pub density: DensityConfig,
    pub overshoot: [f64; 2],
    pub micro_level: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityConfig {
    /// Mass per unit `ds dt`.
    Uniform(f64),
    /// Piecewise constant on an equal `rows x cols` split of the rectangle;
    /// rows run along `t`, columns along `s`.
    Table { values: Vec<Vec<f64>> },
}

/// A number or the string `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Value(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    Near { delta: Param, k: Param },
    Far { delta: f64, a: f64, a_prime: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightChoice {
    InverseSquare,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverBlock {
    pub mode: ModeConfig,
    #[serde(default = "defaults::weight")]
    pub weight: WeightChoice,
    #[serde(default = "defaults::residual_tol")]
    pub residual_tol: f64,
    #[serde(default = "defaults::bisection_tol")]
    pub bisection_tol: f64,
    #[serde(default = "defaults::max_sweeps")]
    pub max_sweeps: usize,
    #[serde(default = "defaults::init_t")]
    pub init_t: f64,
    #[serde(default = "defaults::max_levels")]
    pub max_levels: usize,
    #[serde(default = "defaults::uniform_tol")]
    pub uniform_tol: f64,
    /// Requested node count of the aperture grid.
    #[serde(default = "defaults::resolution")]
    pub resolution: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputsBlock {
    #[serde(default = "defaults::report")]
    pub report: String,
    /// Per-atom `g`, `mu`, residual.
    #[serde(default = "defaults::csv")]
    pub csv: Option<String>,
    #[serde(default)]
    pub mesh: Option<String>,
    #[serde(default)]
    pub validation: ValidationBlock,
}

impl Default for OutputsBlock {
    fn default() -> Self {
        Self { report: defaults::report(), csv: defaults::csv(), mesh: None, validation: ValidationBlock::default() }
    }
}

/// Sections run by the `validate` subcommand; a count of 0 disables one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationBlock {
    #[serde(default = "defaults::rays")]
    pub rays: usize,
    #[serde(default = "defaults::transport_samples")]
    pub transport_samples: usize,
    #[serde(default = "defaults::transport_h")]
    pub transport_h: f64,
    /// Violation threshold is `transport_scale * h * rhs`.
    #[serde(default = "defaults::transport_scale")]
    pub transport_scale: f64,
    #[serde(default = "defaults::obstruction_samples")]
    pub obstruction_samples: usize,
    #[serde(default)]
    pub comparison: bool,
}

impl Default for ValidationBlock {
    fn default() -> Self {
        Self {
            rays: defaults::rays(),
            transport_samples: defaults::transport_samples(),
            transport_h: defaults::transport_h(),
            transport_scale: defaults::transport_scale(),
            obstruction_samples: defaults::obstruction_samples(),
            comparison: false,
        }
    }
}

mod defaults {
    use super::WeightChoice;

    pub fn weight() -> WeightChoice {
        WeightChoice::InverseSquare
    }
    pub fn residual_tol() -> f64 {
        1e-3
    }
    pub fn bisection_tol() -> f64 {
        1e-9
    }
    pub fn max_sweeps() -> usize {
        5_000
    }
    pub fn init_t() -> f64 {
        1.05
    }
    pub fn max_levels() -> usize {
        3
    }
    pub fn uniform_tol() -> f64 {
        1e-3
    }
    pub fn resolution() -> usize {
        20_000
    }
    pub fn report() -> String {
        "report.json".into()
    }
    pub fn csv() -> Option<String> {
        Some("atoms.csv".into())
    }
    pub fn rays() -> usize {
        100_000
    }
    pub fn transport_samples() -> usize {
        1_000
    }
    pub fn transport_h() -> f64 {
        1e-4
    }
    pub fn transport_scale() -> f64 {
        10.0
    }
    pub fn obstruction_samples() -> usize {
        10_000
    }
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub resolution: Option<usize>,
    pub tol: Option<f64>,
}

/// Parses `text`, failing on any key the schema does not know.
pub fn parse(text: &str) -> Result<JobConfig, CliError> {
    let mut unknown = Vec::new();
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: JobConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
        .map_err(|e| CliError::Config(e.to_string()))?;
    if !unknown.is_empty() {
        return Err(CliError::Config(format!("unknown keys: {}", unknown.join(", "))));
    }
    Ok(config)
}

pub fn load(path: &Path) -> Result<JobConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text)
}

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl JobConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.solver.seed = seed;
        }
        if let Some(resolution) = o.resolution {
            self.solver.resolution = resolution;
        }
        if let Some(tol) = o.tol {
            self.solver.residual_tol = tol;
        }
    }

    pub fn domain(&self) -> Result<DomainSpec, CliError> {
        Ok(match &self.domain {
            DomainConfig::Sphere => DomainSpec::Sphere,
            DomainConfig::Hemisphere { axis } => DomainSpec::hemisphere(vec3(*axis))?,
            DomainConfig::Cap { center, half_angle } => DomainSpec::cap(vec3(*center), *half_angle)?,
            DomainConfig::Polygon { vertices } => DomainSpec::polygon(vertices.iter().copied().map(vec3).collect())?,
        })
    }

    /// `base` is the directory of the config file.
    pub fn intensity(&self, grid: &SphericalGrid, base: &Path) -> Result<IntensityField, CliError> {
        Ok(match &self.intensity {
            IntensityConfig::Constant(v) => IntensityField::constant(*v, grid)?,
            IntensityConfig::Polynomial { terms } => {
                let terms = terms.clone();
                IntensityField::new(
                    move |x: &Vec3| {
                        terms
                            .iter()
                            .map(|t| {
                                let [i, j, k] = t.powers;
                                t.coefficient * x.x.powi(i as i32) * x.y.powi(j as i32) * x.z.powi(k as i32)
                            })
                            .sum()
                    },
                    grid,
                )?
            }
            IntensityConfig::Samples { path } => {
                let samples = read_samples(&base.join(path))?;
                IntensityField::new(
                    move |x: &Vec3| {
                        let mut best = (f64::NEG_INFINITY, 0.0);
                        for (dir, value) in samples.iter() {
                            let dot = dir.dot(x);
                            if dot > best.0 {
                                best = (dot, *value);
                            }
                        }
                        best.1
                    },
                    grid,
                )?
            }
        })
    }

    pub fn target(&self) -> Result<TargetMeasure, CliError> {
        Ok(match &self.target {
            TargetConfig::Points { locations, masses, overshoot } => TargetMeasure::Discrete(DiscreteTarget::points(
                locations.iter().copied().map(vec3).collect(),
                masses.clone(),
                *overshoot,
            )?),
            TargetConfig::Directions { directions, masses, overshoot } => {
                TargetMeasure::Discrete(DiscreteTarget::directions(
                    directions.iter().copied().map(vec3).collect(),
                    masses.clone(),
                    *overshoot,
                )?)
            }
            TargetConfig::Planar(p) => TargetMeasure::Planar(planar(p)?),
        })
    }

    /// Replaces `"auto"` parameters by their values and returns the solver
    /// configuration.
    ///
    /// An automatic `delta` is the maximizer of the feasibility constant and
    /// must clear the obstruction threshold of the target; automatic `k` is
    /// `(1 + c)/(1 - c)`.
    pub fn resolve(&mut self, target: &TargetMeasure) -> Result<SolverConfig, CliError> {
        let s = &mut self.solver;
        let mut config = match &mut s.mode {
            ModeConfig::Near { delta, k } => {
                let m = target.max_distance();
                if let Param::Auto(_) = delta {
                    let best = optimal_delta(m)?;
                    let threshold = obstruction_threshold(target.min_distance(), m, target.diameter());
                    if best.delta <= threshold {
                        return Err(CliError::Obstruction(format!(
                            "automatic delta {} does not exceed the obstruction threshold {threshold}",
                            best.delta
                        )));
                    }
                    *delta = Param::Value(best.delta);
                }
                let Param::Value(dv) = *delta else { unreachable!("delta resolved above") };
                if let Param::Auto(_) = k {
                    *k = Param::Value(DeltaBound::new(dv)?.ratio());
                }
                let Param::Value(kv) = *k else { unreachable!("k resolved above") };
                SolverConfig::near(dv, kv)
            }
            ModeConfig::Far { delta, a, a_prime } => SolverConfig::far(*delta, *a, *a_prime),
        };
        config.weight = match s.weight {
            WeightChoice::InverseSquare => WeightModel::InverseSquare,
            WeightChoice::Constant => WeightModel::Constant,
        };
        config.residual_tol = s.residual_tol;
        config.bisection_tol = s.bisection_tol;
        config.max_sweeps = s.max_sweeps;
        config.init_t = s.init_t;
        config.max_levels = s.max_levels;
        config.uniform_tol = s.uniform_tol;
        config.validate()?;
        Ok(config)
    }
}

fn planar(p: &PlanarConfig) -> Result<PlanarDensity, CliError> {
    let density: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync> = match &p.density {
        DensityConfig::Uniform(v) => {
            let v = *v;
            Arc::new(move |_, _| v)
        }
        DensityConfig::Table { values } => {
            let rows = values.len();
            let cols = values.first().map_or(0, Vec::len);
            if rows == 0 || cols == 0 || values.iter().any(|r| r.len() != cols) {
                return Err(CliError::Config("density table must be a nonempty rectangular array".into()));
            }
            let table = values.clone();
            let (s, t) = (p.s_range, p.t_range);
            Arc::new(move |a, b| {
                let col = (((a - s[0]) / (s[1] - s[0]) * cols as f64) as usize).min(cols - 1);
                let row = (((b - t[0]) / (t[1] - t[0]) * rows as f64) as usize).min(rows - 1);
                table[row][col]
            })
        }
    };
    Ok(PlanarDensity::new(
        vec3(p.origin),
        vec3(p.u),
        vec3(p.v),
        p.s_range,
        p.t_range,
        move |a, b| density(a, b),
        p.overshoot,
        p.micro_level,
    )?)
}

fn read_samples(path: &PathBuf) -> Result<Vec<(Vec3, f64)>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| CliError::Config(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["x", "y", "z", "value"] {
        return Err(CliError::Config(format!("{}: header must be x,y,z,value", path.display())));
    }
    let mut out = Vec::new();
    for (line, record) in reader.deserialize::<(f64, f64, f64, f64)>().enumerate() {
        let (x, y, z, value) = record.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let dir = Vec3::new(x, y, z);
        let n = dir.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(CliError::Config(format!("{}: row {} has a zero direction", path.display(), line + 1)));
        }
        out.push((dir / n, value));
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("{}: no samples", path.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DESK: &str = r#"{
        "domain": {"hemisphere": {"axis": [0, 0, 1]}},
        "intensity": {"constant": 1.0},
        "target": {"points": {"locations": [[0, 0, -1], [0.3, 0, -1]], "masses": [0.05, 0.04], "overshoot": 0}},
        "solver": {"mode": {"near": {"delta": "auto", "k": "auto"}}}
    }"#;

    #[test]
    fn defaults_fill_the_optional_blocks() {
        let c = parse(DESK).unwrap();
        assert_eq!(c.solver.resolution, 20_000);
        assert_eq!(c.outputs.report, "report.json");
        assert_eq!(c.outputs.validation.transport_h, 1e-4);
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let text = DESK.replace(r#""intensity""#, r#""colour": 1, "intensity""#).replace(
            r#""mode""#,
            r#""speed": 2, "mode""#,
        );
        let err = parse(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("colour") && msg.contains("solver.speed"), "{msg}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn auto_resolves_to_the_optimal_pair() {
        let mut c = parse(DESK).unwrap();
        let t = c.target().unwrap();
        let cfg = c.resolve(&t).unwrap();
        assert!((cfg.delta() - 1.875).abs() < 1e-9);
        let ModeConfig::Near { k: Param::Value(k), .. } = c.solver.mode else { panic!("k unresolved") };
        assert!((k - 5.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn auto_delta_below_the_threshold_fails_hard() {
        // Nearly opposite far-apart points push the obstruction threshold up.
        let text = DESK.replace("[0.3, 0, -1]", "[0, 0, -40]");
        let mut c = parse(&text).unwrap();
        let t = c.target().unwrap();
        let err = c.resolve(&t).unwrap_err();
        assert!(matches!(err, CliError::Obstruction(_)));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn density_table_is_piecewise_constant() {
        let p = PlanarConfig {
            origin: [0.0, 0.0, -1.0],
            u: [1.0, 0.0, 0.0],
            v: [0.0, 1.0, 0.0],
            s_range: [0.0, 1.0],
            t_range: [0.0, 1.0],
            density: DensityConfig::Table { values: vec![vec![1.0, 2.0], vec![3.0, 4.0]] },
            overshoot: [0.1, 0.1],
            micro_level: 3,
        };
        let d = planar(&p).unwrap();
        assert_eq!(d.density(0.2, 0.2), 1.0);
        assert_eq!(d.density(0.7, 0.2), 2.0);
        assert_eq!(d.density(0.2, 0.7), 3.0);
        assert_eq!(d.density(1.0, 1.0), 4.0);
        assert!((d.total_mass() - 2.5).abs() < 1e-12);
    }
}

//! Report file: JSON with sorted keys, no timings and no host data, so equal
//! inputs give equal bytes.

use serde::Serialize;
use serde_json::Value;

use lumen_core::solver::{EnergyCheck, LevelSummary, OvershootCase};
use lumen_core::validate::{ComparisonReport, ObstructionReport, RayTraceResult, TransportCheck};
use lumen_core::{DiscreteTarget, RegularityReport, SolveReport, VisibilityReport};

use crate::config::JobConfig;
use crate::error::CliError;

pub const SCHEMA: &str = "lumen.report/v1";

#[derive(Debug, Clone, Serialize)]
pub struct ReportFile {
    pub schema: &'static str,
    pub command: String,
    /// Config after overrides and `"auto"` resolution.
    pub config: JobConfig,
    pub feasibility: Feasibility,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regularity: Option<Regularity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refinement: Option<Refinement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<Validation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub constant: f64,
    pub flux: f64,
    pub eta: f64,
    pub required: f64,
    pub margin: f64,
    pub grid_nodes: usize,
    pub grid_level: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub visibility: Option<Visibility>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Visibility {
    pub delta_d: f64,
    pub shadow_clear: bool,
    pub obstruction_clear: bool,
}

impl Feasibility {
    pub fn new(e: &EnergyCheck, eta: f64, nodes: usize, level: usize, vis: Option<&VisibilityReport>) -> Self {
        Feasibility {
            feasible: e.feasible,
            constant: e.constant,
            flux: e.flux,
            eta,
            required: e.required,
            margin: e.margin,
            grid_nodes: nodes,
            grid_level: level,
            visibility: vis.map(|v| Visibility {
                delta_d: v.delta_d,
                shadow_clear: v.shadow_clear,
                obstruction_clear: v.obstruction_clear,
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AtomRow {
    pub index: usize,
    /// Position of the atom in the config.
    pub original_index: usize,
    pub location: [f64; 3],
    pub focal: f64,
    pub g: f64,
    pub mu: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSection {
    pub atoms: Vec<AtomRow>,
    pub measure_total: f64,
    pub max_residual: f64,
    pub overshoot: f64,
    /// Diagnostic only: quadrature cannot certify an exact match.
    pub overshoot_case: &'static str,
    pub sweeps: usize,
    pub polished: bool,
    pub tie_fraction: f64,
    pub coverage: f64,
    pub floor: f64,
    pub trace: Vec<f64>,
}

impl SolveSection {
    pub fn new(rep: &SolveReport, target: &DiscreteTarget) -> Self {
        let atoms = (0..target.len())
            .map(|i| {
                let p = target.locations()[i];
                AtomRow {
                    index: i,
                    original_index: target.original_indices()[i],
                    location: [p.x, p.y, p.z],
                    focal: rep.focal.values[i],
                    g: rep.targets[i],
                    mu: rep.measure.values[i],
                    residual: rep.residuals[i],
                }
            })
            .collect();
        SolveSection {
            atoms,
            measure_total: rep.measure.total,
            max_residual: rep.max_residual,
            overshoot: rep.overshoot,
            overshoot_case: match rep.overshoot_case {
                OvershootCase::Strict => "strict",
                OvershootCase::Matched => "matched",
            },
            sweeps: rep.sweeps,
            polished: rep.polished,
            tie_fraction: rep.tie_fraction,
            coverage: rep.coverage,
            floor: rep.floor,
            trace: rep.trace.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Regularity {
    pub lipschitz_est: f64,
    pub harnack_ratio: f64,
    pub min_rho: f64,
    pub max_rho: f64,
}

impl From<&RegularityReport> for Regularity {
    fn from(r: &RegularityReport) -> Self {
        Regularity {
            lipschitz_est: r.lipschitz_est,
            harnack_ratio: r.harnack_ratio,
            min_rho: r.min_rho,
            max_rho: r.max_rho,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Level {
    pub level: usize,
    pub cells: usize,
    pub max_diameter: f64,
    pub sweeps: usize,
    pub max_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sup_change: Option<f64>,
    pub warm_start: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Refinement {
    pub levels: Vec<Level>,
    pub converged_uniformly: bool,
}

impl Refinement {
    pub fn new(levels: &[LevelSummary], converged_uniformly: bool) -> Self {
        Refinement {
            levels: levels
                .iter()
                .map(|l| Level {
                    level: l.level,
                    cells: l.cells,
                    max_diameter: l.max_diameter,
                    sweeps: l.sweeps,
                    max_residual: l.max_residual,
                    sup_change: l.sup_change,
                    warm_start: l.warm_start,
                })
                .collect(),
            converged_uniformly,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Validation {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raytrace: Option<RayTrace>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transport: Option<Transport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub obstruction: Option<Obstruction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
    /// Sections that were requested but do not apply, with the reason.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RayTrace {
    pub rays: usize,
    pub seed: u64,
    pub totals: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// `|mc - mu| / se` per atom.
    pub z_scores: Vec<f64>,
    pub focus_miss: Vec<f64>,
    pub unmatched: usize,
    pub unmatched_weight: f64,
    pub mismatched: usize,
    pub total: f64,
}

impl RayTrace {
    pub fn new(r: &RayTraceResult, mu: &[f64], seed: u64) -> Self {
        RayTrace {
            rays: r.samples,
            seed,
            totals: r.totals.clone(),
            std_errors: r.std_errors.clone(),
            z_scores: r
                .totals
                .iter()
                .zip(&r.std_errors)
                .zip(mu)
                .map(|((t, s), m)| if *s > 0.0 { (t - m).abs() / s } else { 0.0 })
                .collect(),
            focus_miss: r.focus_miss.clone(),
            unmatched: r.unmatched,
            unmatched_weight: r.unmatched_weight,
            mismatched: r.mismatched,
            total: r.total,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Transport {
    pub h: f64,
    pub scale: f64,
    pub checked: usize,
    pub skipped: usize,
    pub violations: usize,
    pub max_violation: f64,
    pub max_abs_residual: f64,
}

impl From<&TransportCheck> for Transport {
    fn from(t: &TransportCheck) -> Self {
        Transport {
            h: t.h,
            scale: t.scale,
            checked: t.samples.len(),
            skipped: t.skipped,
            violations: t.violations,
            max_violation: t.max_violation,
            max_abs_residual: t.max_abs_residual,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Obstruction {
    pub samples: usize,
    pub violations: usize,
    pub max_excess: f64,
}

impl From<&ObstructionReport> for Obstruction {
    fn from(o: &ObstructionReport) -> Self {
        Obstruction { samples: o.samples, violations: o.violations, max_excess: o.max_excess }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub delta: f64,
    pub c: f64,
    pub constant: f64,
    pub bound_factor: f64,
    pub calibration_scale: f64,
    pub eta_d: f64,
    pub eta_e: f64,
    pub mu_star_e: f64,
    pub gap: f64,
    pub bound: f64,
    pub holds: bool,
    pub inverse_square_gap: f64,
}

impl From<&ComparisonReport> for Comparison {
    fn from(c: &ComparisonReport) -> Self {
        Comparison {
            delta: c.delta,
            c: c.c,
            constant: c.constant,
            bound_factor: c.bound_factor,
            calibration_scale: c.calibration_scale,
            eta_d: c.eta_d,
            eta_e: c.eta_e,
            mu_star_e: c.mu_star_e,
            gap: c.gap,
            bound: c.bound,
            holds: c.holds,
            inverse_square_gap: c.inverse_square_gap,
        }
    }
}

/// Pretty JSON with a trailing newline. Optional result fields are omitted
/// rather than written as `null`, so a `null` outside the config echo marks a
/// non-finite number. The echo holds only parsed JSON, which is finite.
pub fn render(report: &ReportFile) -> Result<String, CliError> {
    let value = serde_json::to_value(report).map_err(|e| CliError::Config(e.to_string()))?;
    let results = value.as_object().into_iter().flatten().filter(|(k, _)| k.as_str() != "config");
    if let Some(path) = results.into_iter().find_map(|(k, v)| find_null(v, &format!(".{k}"))) {
        return Err(CliError::Core(lumen_core::LumenError::ConstraintViolated(format!(
            "report field {path} is not finite"
        ))));
    }
    let mut text = serde_json::to_string_pretty(&value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn find_null(v: &Value, path: &str) -> Option<String> {
    match v {
        Value::Null => Some(if path.is_empty() { "<root>".into() } else { path.to_string() }),
        Value::Array(items) => items.iter().enumerate().find_map(|(i, x)| find_null(x, &format!("{path}[{i}]"))),
        Value::Object(map) => map.iter().find_map(|(k, x)| find_null(x, &format!("{path}.{k}"))),
        _ => None,
    }
}

/// RFC 4180 CSV of `atom, original_index, g, mu, residual`.
pub fn atoms_csv(section: &SolveSection) -> Result<Vec<u8>, CliError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Config(e.to_string());
    w.write_record(["atom", "original_index", "g", "mu", "residual"]).map_err(err)?;
    for a in &section.atoms {
        w.write_record([
            a.index.to_string(),
            a.original_index.to_string(),
            a.g.to_string(),
            a.mu.to_string(),
            a.residual.to_string(),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nulls_are_located() {
        let v = serde_json::json!({"a": [1.0, {"b": null}]});
        assert_eq!(find_null(&v, "").as_deref(), Some(".a[1].b"));
        assert_eq!(find_null(&serde_json::json!({"a": 1}), ""), None);
    }

    #[test]
    fn csv_rows_end_in_crlf() {
        let section = SolveSection {
            atoms: vec![AtomRow {
                index: 0,
                original_index: 2,
                location: [0.0, 0.0, -1.0],
                focal: 3.0,
                g: 0.25,
                mu: 0.5,
                residual: 0.0,
            }],
            measure_total: 0.5,
            max_residual: 0.0,
            overshoot: 0.25,
            overshoot_case: "strict",
            sweeps: 1,
            polished: true,
            tie_fraction: 0.0,
            coverage: 1.0,
            floor: 1.0,
            trace: vec![],
        };
        let text = String::from_utf8(atoms_csv(&section).unwrap()).unwrap();
        assert_eq!(text, "atom,original_index,g,mu,residual\r\n0,2,0.25,0.5,0\r\n");
    }
}

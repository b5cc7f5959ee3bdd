//! Reflector synthesis for a point source under the inverse-square law.
//!
//! A reflector is the pointwise minimum of supporting quadrics with one focus
//! at the source `O`: ellipsoids for targets at finite distance, paraboloids
//! for targets given as directions. The crate provides
//!
//! * [`geometry`]: closed forms for the quadrics, normals and reflection,
//! * [`sphere_domain`]: quadrature on the aperture and target measures,
//! * [`envelope`]: reflectors, tracing regions and the reflector measure,
//! * [`solver`]: feasibility gating, the discrete and refinement solvers,
//! * [`validate`]: ray tracing and the transport, comparison and obstruction checks.

pub mod envelope;
pub mod error;
pub mod geometry;
pub mod numeric;
pub mod solver;
pub mod sphere_domain;
pub mod validate;

pub use envelope::{
    FocalVector, MeasureVector, Reflector, ReflectorKind, RegionAssignment, RegularityReport,
    WeightModel,
};
pub use error::{LumenError, Result};
pub use geometry::{DeltaBound, Ellipsoid, Paraboloid, Quadric};
pub use numeric::Vec3;
pub use solver::{FieldMode, GeneralReport, SolveReport, SolverConfig, VisibilityReport};
pub use sphere_domain::{
    CellPartition, DiscreteTarget, DomainSpec, IntensityField, PlanarDensity, SphericalGrid,
    TargetMeasure,
};

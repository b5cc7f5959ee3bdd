//! Independent checks of synthesized reflectors: forward ray tracing, the
//! transport determinant inequality, the constant-weight comparison and
//! obstruction of reflected rays.

mod comparison;
mod obstruction;
mod raytrace;
mod transport;

pub use comparison::{compare_constant_weight, ComparisonReport};
pub use obstruction::{obstruction_raycheck, ObstructionReport};
pub use raytrace::{raytrace, RayTraceResult, RAY_CHUNK};
pub use transport::{chart_lift, transport_map, transport_residual, TransportCheck, TransportSample};

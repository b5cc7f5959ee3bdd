use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use super::SphericalGrid;
use crate::error::{LumenError, Result};
use crate::numeric::Vec3;

type Evaluator = Arc<dyn Fn(&Vec3) -> f64 + Send + Sync>;

/// Radiant intensity `f` (W/sr), sampled on a grid.
///
/// Node values and the total flux are cached for the grid the field was
/// bound to; [`IntensityField::rebind`] resamples on another grid.
#[derive(Clone)]
pub struct IntensityField {
    eval: Evaluator,
    values: Vec<f64>,
    total_flux: f64,
}

impl fmt::Debug for IntensityField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntensityField")
            .field("nodes", &self.values.len())
            .field("total_flux", &self.total_flux)
            .finish()
    }
}

impl IntensityField {
    pub fn new<F>(f: F, grid: &SphericalGrid) -> Result<Self>
    where
        F: Fn(&Vec3) -> f64 + Send + Sync + 'static,
    {
        Self::from_arc(Arc::new(f), grid)
    }

    pub fn constant(value: f64, grid: &SphericalGrid) -> Result<Self> {
        Self::new(move |_| value, grid)
    }

    fn from_arc(eval: Evaluator, grid: &SphericalGrid) -> Result<Self> {
        let values: Vec<f64> = grid.nodes().par_iter().map(|x| eval(x)).collect();
        for (node, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(LumenError::Numeric { node, value });
            }
            if value < 0.0 {
                return Err(LumenError::invalid(format!(
                    "intensity must be nonnegative, got {value} at node {node}"
                )));
            }
        }
        let total_flux = grid.integrate(|j, _| values[j])?;
        Ok(Self { eval, values, total_flux })
    }

    /// The same field sampled on another grid.
    pub fn rebind(&self, grid: &SphericalGrid) -> Result<Self> {
        Self::from_arc(self.eval.clone(), grid)
    }

    #[inline]
    pub fn eval(&self, x: &Vec3) -> f64 {
        (self.eval)(x)
    }

    /// Values at the nodes of the bound grid.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `integral of f over Omega` by the bound grid's quadrature.
    pub fn total_flux(&self) -> f64 {
        self.total_flux
    }

    /// Rescaled copy, `lambda f`.
    pub fn scaled(&self, lambda: f64, grid: &SphericalGrid) -> Result<Self> {
        let inner = self.eval.clone();
        Self::new(move |x| lambda * inner(x), grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere_domain::DomainSpec;
    use std::f64::consts::PI;

    #[test]
    fn constant_flux_is_value_times_area() {
        let g = SphericalGrid::build(&DomainSpec::hemisphere(Vec3::z()).unwrap(), 2000).unwrap();
        let f = IntensityField::constant(2.0, &g).unwrap();
        assert!((f.total_flux() - 4.0 * PI).abs() / (4.0 * PI) < 1e-3);
        assert_eq!(f.values().len(), g.len());
    }

    #[test]
    fn rejects_negative_or_nan() {
        let g = SphericalGrid::at_level(&DomainSpec::Sphere, 1).unwrap();
        assert!(IntensityField::new(|x: &Vec3| x.z, &g).is_err());
        assert!(matches!(IntensityField::new(|_| f64::NAN, &g), Err(LumenError::Numeric { node: 0, .. })));
    }
}

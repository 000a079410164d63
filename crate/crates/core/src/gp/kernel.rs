use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared-exponential kernel
/// `κ(z, z') = σ_f² exp(-½ Σ_d ((z_d - z'_d) / ℓ_d)²)` together with the
/// observation noise variance `σ²` used when conditioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelConfig {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let cfg = Self {
            signal_variance,
            lengthscales,
            noise_variance,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance > 0.0) || !self.signal_variance.is_finite() {
            return Err(Error::invalid("signal variance must be positive"));
        }
        if self.lengthscales.is_empty() || self.lengthscales.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::invalid("lengthscales must be positive"));
        }
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return Err(Error::invalid("noise variance must be non-negative"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn signal_std(&self) -> f64 {
        self.signal_variance.sqrt()
    }

    /// Squared lengthscale-weighted distance `Σ ((a_d - b_d)/ℓ_d)²`.
    #[inline]
    pub fn scaled_sq_dist(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| {
                let t = (x - y) / l;
                t * t
            })
            .sum()
    }

    #[inline]
    pub fn from_sq_dist(&self, r2: f64) -> f64 {
        self.signal_variance * (-0.5 * r2).exp()
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.from_sq_dist(self.scaled_sq_dist(a, b))
    }

    /// Smallest and largest scaled squared distance from `point` to a box with
    /// the given center and half-widths.
    #[inline]
    pub fn sq_dist_range(&self, point: &[f64], center: &[f64], radius: &[f64]) -> (f64, f64) {
        let mut near = 0.0;
        let mut far = 0.0;
        for d in 0..point.len() {
            let gap = (point[d] - center[d]).abs();
            let l = self.lengthscales[d];
            let n = (gap - radius[d]).max(0.0) / l;
            let f = (gap + radius[d]) / l;
            near += n * n;
            far += f * f;
        }
        (near, far)
    }

    /// `Σ_d r_d² / ℓ_d²`, the squared scaled length of the half-diagonal.
    pub fn scaled_radius_sq(&self, radius: &[f64]) -> f64 {
        radius
            .iter()
            .zip(&self.lengthscales)
            .map(|(r, l)| (r / l) * (r / l))
            .sum()
    }
}

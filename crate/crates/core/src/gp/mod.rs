//! Gaussian process regression of the unknown vector field, one independent
//! GP per output dimension over the joint input `z = (x, u)`.
//!
//! All output dimensions share the kernel and the training inputs, so a single
//! Cholesky factor of `K = κ(Z, Z) + σ² I` serves every dimension and the
//! posterior standard deviation is the same for all of them.

mod bounds;
mod kernel;

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use bounds::{confidence_scale, error_radius, BoundOptions, ErrorBoundConfig, InformationGain, RegionBounds};
pub use kernel::KernelConfig;

use crate::error::{Error, Result};
use crate::systems::Dataset;

/// Floor applied to the noise variance when the configured value is zero.
pub const JITTER_FLOOR: f64 = 1e-10;
/// Largest diagonal jitter tried before declaring `K` singular.
pub const JITTER_CEILING: f64 = 1e-6;

/// Posterior of a zero-mean GP prior conditioned on a dataset.
#[derive(Debug)]
pub struct GpModel {
    kernel: KernelConfig,
    state_dim: usize,
    control_dim: usize,
    /// Training inputs, row-major `M x (n + m)`.
    inputs: Vec<f64>,
    chol: DMatrix<f64>,
    /// `K⁻¹ y_i` per output dimension.
    weights: Vec<Vec<f64>>,
    noise_variance: f64,
    rkhs_norms: Vec<f64>,
    information_gain: f64,
    chol_inverse: OnceLock<DMatrix<f64>>,
}

/// Summary of a fitted model, written by the `fit-gp` stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub samples: usize,
    pub state_dim: usize,
    pub control_dim: usize,
    pub kernel: KernelConfig,
    pub effective_noise_variance: f64,
    pub information_gain: f64,
    pub posterior_mean_rkhs_norms: Vec<f64>,
}

impl GpModel {
    /// Conditions the prior on `dataset`.
    pub fn fit(dataset: &Dataset, kernel: &KernelConfig) -> Result<Self> {
        kernel.validate()?;
        if dataset.is_empty() {
            return Err(Error::invalid("cannot fit a GP to an empty dataset"));
        }
        let (n, m) = (dataset.state_dim(), dataset.control_dim());
        let dim = n + m;
        if kernel.input_dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: kernel.input_dim(),
            });
        }
        let points = dataset.inputs();
        let count = points.len();
        let gram = DMatrix::from_fn(count, count, |i, j| kernel.eval(&points[i], &points[j]));

        let mut jitter = kernel.noise_variance.max(JITTER_FLOOR);
        let chol = loop {
            let mut k = gram.clone();
            for i in 0..count {
                k[(i, i)] += jitter;
            }
            if let Some(c) = k.cholesky() {
                break c;
            }
            if jitter >= JITTER_CEILING {
                return Err(Error::Numerical(format!(
                    "kernel matrix is not positive definite even with jitter {jitter:e}"
                )));
            }
            log::warn!("Cholesky failed with diagonal {jitter:e}; increasing jitter");
            jitter = (jitter * 10.0).min(JITTER_CEILING);
        };

        let mut weights = Vec::with_capacity(n);
        let mut rkhs_norms = Vec::with_capacity(n);
        for d in 0..n {
            let y = DVector::from_vec(dataset.outputs(d));
            let w = chol.solve(&y);
            // ‖f̂‖² = wᵀ K₀ w = wᵀ y − σ² wᵀ w
            let norm_sq = w.dot(&y) - jitter * w.dot(&w);
            rkhs_norms.push(norm_sq.max(0.0).sqrt());
            weights.push(w.as_slice().to_vec());
        }
        let l = chol.unpack();
        let log_det_k: f64 = 2.0 * (0..count).map(|i| l[(i, i)].ln()).sum::<f64>();
        let information_gain = 0.5 * (log_det_k - count as f64 * jitter.ln());

        Ok(Self {
            kernel: kernel.clone(),
            state_dim: n,
            control_dim: m,
            inputs: points.into_iter().flatten().collect(),
            chol: l,
            weights,
            noise_variance: jitter,
            rkhs_norms,
            information_gain: information_gain.max(0.0),
            chol_inverse: OnceLock::new(),
        })
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn input_dim(&self) -> usize {
        self.state_dim + self.control_dim
    }

    pub fn num_samples(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// Noise variance actually used on the diagonal of `K` (after jitter).
    pub fn effective_noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// `½ log det(I + K₀/σ²)`.
    pub fn information_gain(&self) -> f64 {
        self.information_gain
    }

    /// RKHS norm of each posterior mean component.
    pub fn mean_rkhs_norms(&self) -> &[f64] {
        &self.rkhs_norms
    }

    pub fn summary(&self) -> FitSummary {
        FitSummary {
            samples: self.num_samples(),
            state_dim: self.state_dim,
            control_dim: self.control_dim,
            kernel: self.kernel.clone(),
            effective_noise_variance: self.noise_variance,
            information_gain: self.information_gain,
            posterior_mean_rkhs_norms: self.rkhs_norms.clone(),
        }
    }

    pub(crate) fn input(&self, j: usize) -> &[f64] {
        let d = self.input_dim();
        &self.inputs[j * d..(j + 1) * d]
    }

    pub(crate) fn weights(&self, output: usize) -> &[f64] {
        &self.weights[output]
    }

    pub(crate) fn cross_kernel(&self, z: &[f64]) -> Vec<f64> {
        (0..self.num_samples())
            .map(|j| self.kernel.eval(z, self.input(j)))
            .collect()
    }

    /// `L⁻¹ v` for the Cholesky factor `L`.
    pub(crate) fn whiten(&self, v: Vec<f64>) -> DVector<f64> {
        let mut v = DVector::from_vec(v);
        self.chol.solve_lower_triangular_mut(&mut v);
        v
    }

    pub(crate) fn chol_inverse(&self) -> &DMatrix<f64> {
        self.chol_inverse.get_or_init(|| {
            let count = self.num_samples();
            self.chol
                .solve_lower_triangular(&DMatrix::identity(count, count))
                .expect("Cholesky factor has a positive diagonal")
        })
    }

    fn check_input(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: z.len(),
            });
        }
        Ok(())
    }

    /// Posterior mean `f̂_D(z)` for every output dimension.
    pub fn mean_at(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_input(z)?;
        let k = self.cross_kernel(z);
        Ok(self.weights.iter().map(|w| dot(w, &k)).collect())
    }

    /// Posterior standard deviation `σ_D(z)` (shared by all outputs).
    pub fn std_at(&self, z: &[f64]) -> Result<f64> {
        self.check_input(z)?;
        Ok(self.std_from_cross(self.cross_kernel(z)))
    }

    fn std_from_cross(&self, k: Vec<f64>) -> f64 {
        let v = self.whiten(k);
        let var = (self.kernel.signal_variance - v.dot(&v)).clamp(0.0, self.kernel.signal_variance);
        var.sqrt()
    }

    /// Posterior mean and standard deviation per output dimension.
    pub fn posterior_at(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(z)?;
        let k = self.cross_kernel(z);
        let mean = self.weights.iter().map(|w| dot(w, &k)).collect();
        let std = self.std_from_cross(k);
        Ok((mean, vec![std; self.state_dim]))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

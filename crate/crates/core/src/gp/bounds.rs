//! Sound enclosures of the posterior over a box and the confidence radius
//! that turns them into enclosures of the true dynamics.
//!
//! The mean enclosure intersects two bounds that are each valid on their
//! own: interval accumulation of the kernel range per training point, and a
//! second-order Taylor expansion about the box center with a third-order
//! remainder controlled by the RKHS norm of the posterior mean. The standard
//! deviation bound is the smallest of the prior standard deviation, an
//! interval bound on `‖L⁻¹ k(z)‖`, and a Taylor bound on the posterior
//! feature map.

use serde::{Deserialize, Serialize};

use super::GpModel;
use crate::error::{Error, Result};
use crate::geometry::Hyperrect;

/// Posterior enclosure over one box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionBounds {
    pub mean_lower: Vec<f64>,
    pub mean_upper: Vec<f64>,
    /// Upper bound on the posterior standard deviation (all outputs).
    pub std_upper: f64,
}

/// Options for [`GpModel::region_bounds_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundOptions {
    /// Splits per dimension; the box is covered by `subdivisions^d` pieces.
    pub subdivisions: usize,
    /// Also evaluate the `O(M²)` interval bound on the standard deviation.
    pub interval_std: bool,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self {
            subdivisions: 1,
            interval_std: true,
        }
    }
}

/// Source of the information gain `γ` in the confidence scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InformationGain {
    /// Use `½ log det(I + K₀/σ²)` of the fitted model.
    Computed,
    Given(f64),
}

/// Parameters of the probabilistic error bound `|f_i - f̂_i| ≤ α_i σ_D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundConfig {
    /// Failure probability of the bound, shared across output dimensions.
    pub delta: f64,
    /// Upper bounds `C_i` on the RKHS norm of each true component.
    pub rkhs_bounds: Vec<f64>,
    pub information_gain: InformationGain,
}

impl ErrorBoundConfig {
    pub fn validate(&self, state_dim: usize) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta must lie in (0, 1)"));
        }
        if self.rkhs_bounds.len() != state_dim {
            return Err(Error::DimensionMismatch {
                expected: state_dim,
                got: self.rkhs_bounds.len(),
            });
        }
        if self.rkhs_bounds.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::invalid("RKHS norm bounds must be non-negative"));
        }
        if let InformationGain::Given(g) = self.information_gain {
            if !(g >= 0.0) || !g.is_finite() {
                return Err(Error::invalid("information gain must be non-negative"));
            }
        }
        Ok(())
    }
}

/// `α = C + σ sqrt(2 (γ + 1 + ln(n/δ)))`.
pub fn confidence_scale(rkhs_bound: f64, noise_std: f64, gamma: f64, delta: f64, dims: usize) -> f64 {
    rkhs_bound + noise_std * (2.0 * (gamma + 1.0 + (dims as f64 / delta).ln())).sqrt()
}

/// `ε = α σ̄` for a standard deviation bound `σ̄`.
pub fn error_radius(rkhs_bound: f64, noise_std: f64, gamma: f64, delta: f64, dims: usize, std_upper: f64) -> f64 {
    confidence_scale(rkhs_bound, noise_std, gamma, delta, dims) * std_upper
}

struct Gauss3 {
    value: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl GpModel {
    /// Confidence scales `α_i` for every output dimension.
    pub fn confidence_scales(&self, cfg: &ErrorBoundConfig) -> Result<Vec<f64>> {
        cfg.validate(self.state_dim)?;
        let gamma = match cfg.information_gain {
            InformationGain::Computed => self.information_gain,
            InformationGain::Given(g) => g,
        };
        let noise_std = self.kernel.noise_variance.sqrt();
        Ok(cfg
            .rkhs_bounds
            .iter()
            .map(|&c| confidence_scale(c, noise_std, gamma, cfg.delta, self.state_dim))
            .collect())
    }

    /// Error radii `ε_i = α_i σ̄` over a box with posterior enclosure `bounds`.
    pub fn error_radii(&self, cfg: &ErrorBoundConfig, bounds: &RegionBounds) -> Result<Vec<f64>> {
        Ok(self
            .confidence_scales(cfg)?
            .into_iter()
            .map(|a| a * bounds.std_upper)
            .collect())
    }

    pub fn region_bounds(&self, cell: &Hyperrect) -> Result<RegionBounds> {
        self.region_bounds_with(cell, BoundOptions::default())
    }

    /// Enclosure of the posterior mean and standard deviation over `cell`,
    /// optionally refined by covering the cell with smaller boxes.
    pub fn region_bounds_with(&self, cell: &Hyperrect, options: BoundOptions) -> Result<RegionBounds> {
        if cell.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: cell.dim(),
            });
        }
        let mut out = RegionBounds {
            mean_lower: vec![f64::INFINITY; self.state_dim],
            mean_upper: vec![f64::NEG_INFINITY; self.state_dim],
            std_upper: 0.0,
        };
        for piece in cell.subdivide(options.subdivisions) {
            let b = self.box_bounds(&piece, options.interval_std);
            for d in 0..self.state_dim {
                out.mean_lower[d] = out.mean_lower[d].min(b.mean_lower[d]);
                out.mean_upper[d] = out.mean_upper[d].max(b.mean_upper[d]);
            }
            out.std_upper = out.std_upper.max(b.std_upper);
        }
        Ok(out)
    }

    fn box_bounds(&self, cell: &Hyperrect, interval_std: bool) -> RegionBounds {
        let center = cell.center();
        let radius = cell.radius();
        let count = self.num_samples();

        let mut k_min = Vec::with_capacity(count);
        let mut k_max = Vec::with_capacity(count);
        for j in 0..count {
            let (near, far) = self.kernel.sq_dist_range(self.input(j), &center, &radius);
            k_max.push(self.kernel.from_sq_dist(near));
            k_min.push(self.kernel.from_sq_dist(far));
        }

        let (mean_lower, mean_upper) = self.mean_bounds(&center, &radius, &k_min, &k_max);
        let mut std_upper = self.kernel.signal_std().min(self.taylor_std_bound(&center, &radius));
        if interval_std && std_upper > 0.0 {
            std_upper = std_upper.min(self.interval_std_bound(&k_min, &k_max));
        }
        RegionBounds {
            mean_lower,
            mean_upper,
            std_upper,
        }
    }

    fn mean_bounds(&self, center: &[f64], radius: &[f64], k_min: &[f64], k_max: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let dim = self.input_dim();
        let s = self.kernel.scaled_radius_sq(radius);
        let remainder_unit = 15f64.sqrt() * self.kernel.signal_std() * s.powf(1.5) / 6.0;
        let expansions = self.mean_expansion(center);

        let mut lower = Vec::with_capacity(self.state_dim);
        let mut upper = Vec::with_capacity(self.state_dim);
        for (d, taylor) in expansions.iter().enumerate() {
            let w = self.weights(d);
            let (mut ilo, mut ihi, mut mag) = (0.0, 0.0, 0.0);
            for j in 0..w.len() {
                if w[j] >= 0.0 {
                    ilo += w[j] * k_min[j];
                    ihi += w[j] * k_max[j];
                } else {
                    ilo += w[j] * k_max[j];
                    ihi += w[j] * k_min[j];
                }
                mag += w[j].abs() * k_max[j];
            }
            // allowance for accumulated rounding in sums of M terms
            let fp = 4.0 * f64::EPSILON * (w.len() as f64 + 8.0) * mag;

            let mut tlo = taylor.value;
            let mut thi = taylor.value;
            for a in 0..dim {
                let (qlo, qhi) = quadratic_range(taylor.grad[a], taylor.hess[a * dim + a], radius[a]);
                tlo += qlo;
                thi += qhi;
                for b in a + 1..dim {
                    let cross = taylor.hess[a * dim + b].abs() * radius[a] * radius[b];
                    tlo -= cross;
                    thi += cross;
                }
            }
            let rem = self.rkhs_norms[d] * (1.0 + 1e-9) * remainder_unit;
            tlo -= rem + fp;
            thi += rem + fp;

            let lo = (ilo - fp).max(tlo);
            let hi = (ihi + fp).min(thi);
            if lo <= hi {
                lower.push(lo);
                upper.push(hi);
            } else {
                // both enclosures are sound, so this only happens at rounding level
                lower.push(lo.min(hi));
                upper.push(lo.max(hi));
            }
        }
        (lower, upper)
    }

    /// Value, gradient and Hessian of each posterior mean component at `c`.
    fn mean_expansion(&self, c: &[f64]) -> Vec<Gauss3> {
        let dim = self.input_dim();
        let inv_l2: Vec<f64> = self.kernel.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
        let mut out: Vec<Gauss3> = (0..self.state_dim)
            .map(|_| Gauss3 {
                value: 0.0,
                grad: vec![0.0; dim],
                hess: vec![0.0; dim * dim],
            })
            .collect();
        let mut t = vec![0.0; dim];
        for j in 0..self.num_samples() {
            let z = self.input(j);
            let k = self.kernel.eval(c, z);
            for a in 0..dim {
                t[a] = (c[a] - z[a]) * inv_l2[a];
            }
            for (d, e) in out.iter_mut().enumerate() {
                let wk = self.weights(d)[j] * k;
                e.value += wk;
                for a in 0..dim {
                    e.grad[a] -= wk * t[a];
                    for b in 0..dim {
                        let delta = if a == b { inv_l2[a] } else { 0.0 };
                        e.hess[a * dim + b] += wk * (t[a] * t[b] - delta);
                    }
                }
            }
        }
        out
    }

    /// `σ_D(c) + sqrt(Σ |G_ab| r_a r_b) + ½ √3 σ_f s`, where `G` is the
    /// posterior covariance of the gradient at `c`.
    fn taylor_std_bound(&self, center: &[f64], radius: &[f64]) -> f64 {
        let dim = self.input_dim();
        let count = self.num_samples();
        let sf2 = self.kernel.signal_variance;
        let inv_l2: Vec<f64> = self.kernel.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();

        let k = self.cross_kernel(center);
        let mut columns = Vec::with_capacity(dim);
        for a in 0..dim {
            let col: Vec<f64> = (0..count)
                .map(|j| -k[j] * (center[a] - self.input(j)[a]) * inv_l2[a])
                .collect();
            columns.push(self.whiten(col));
        }
        let v = self.whiten(k);
        let var_c = (sf2 - v.dot(&v)).max(0.0) + 1e-12 * sf2;

        let mut quad = 0.0;
        for a in 0..dim {
            for b in 0..dim {
                let prior = if a == b { sf2 * inv_l2[a] } else { 0.0 };
                let g = prior - columns[a].dot(&columns[b]);
                quad += g.abs() * radius[a] * radius[b];
            }
        }
        let s = self.kernel.scaled_radius_sq(radius);
        let bound = var_c.sqrt() + quad.sqrt() + 0.5 * 3f64.sqrt() * self.kernel.signal_std() * s;
        bound * (1.0 + 1e-9)
    }

    /// `σ_f² - Σ_i mig([L⁻¹ k]_i)²` with `k` ranging over its interval.
    fn interval_std_bound(&self, k_min: &[f64], k_max: &[f64]) -> f64 {
        let linv = self.chol_inverse();
        let count = k_min.len();
        let mut q_low = 0.0;
        let mut mag_total = 0.0;
        for i in 0..count {
            let (mut lo, mut hi, mut mag) = (0.0, 0.0, 0.0);
            for j in 0..=i {
                let a = linv[(i, j)];
                if a >= 0.0 {
                    lo += a * k_min[j];
                    hi += a * k_max[j];
                } else {
                    lo += a * k_max[j];
                    hi += a * k_min[j];
                }
                mag += a.abs() * k_max[j];
            }
            let fp = 4.0 * f64::EPSILON * (i as f64 + 8.0) * mag;
            let (lo, hi) = (lo - fp, hi + fp);
            let mig = if lo > 0.0 {
                lo
            } else if hi < 0.0 {
                -hi
            } else {
                0.0
            };
            q_low += mig * mig;
            mag_total += mag * mag;
        }
        let sf2 = self.kernel.signal_variance;
        let var = sf2 - q_low + 1e-12 * (sf2 + mag_total);
        var.max(0.0).sqrt()
    }

    /// Posterior mean at the center of `cell`, a cheap point estimate.
    pub fn center_mean(&self, cell: &Hyperrect) -> Result<Vec<f64>> {
        self.mean_at(&cell.center())
    }
}

/// Exact range of `g h + ½ q h²` over `h ∈ [-r, r]`.
fn quadratic_range(g: f64, q: f64, r: f64) -> (f64, f64) {
    let f = |h: f64| g * h + 0.5 * q * h * h;
    let (mut lo, mut hi) = {
        let (a, b) = (f(-r), f(r));
        (a.min(b), a.max(b))
    };
    if q != 0.0 {
        let h = -g / q;
        if h.abs() <= r {
            let v = f(h);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

//! Interval bounds on the one-step transition kernel between grid cells.
//!
//! For a state-control cell the drift is enclosed in a box `[m̲, m̄]`, the
//! learning error in `[-ε, ε]` (with failure probability `δ`), and the noise is
//! Gaussian with a diagonal covariance. The probability of landing in a box
//! target then factorises over dimensions.

use libm::erfc;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Hyperrect, StateControlPartition};
use crate::gp::{BoundOptions, ErrorBoundConfig, GpModel};
use crate::systems::{NoiseModel, SystemModel};

/// Tolerance on `Σ p̲ ≤ 1` before a row is declared unsound.
const ROW_SUM_TOL: f64 = 1e-12;

/// Everything known about the successor of a state-control cell apart from
/// the noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enclosure {
    pub mean_lower: Vec<f64>,
    pub mean_upper: Vec<f64>,
    /// Learning-error radius per dimension.
    pub epsilon: Vec<f64>,
    /// Probability that the learning-error bound fails.
    pub delta: f64,
}

impl Enclosure {
    /// An exact drift range: no learning error.
    pub fn exact(mean_lower: Vec<f64>, mean_upper: Vec<f64>) -> Self {
        let n = mean_lower.len();
        Self {
            mean_lower,
            mean_upper,
            epsilon: vec![0.0; n],
            delta: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean_lower.len()
    }
}

/// Source of drift enclosures for state-control cells.
pub trait TransitionModel: Sync {
    fn state_dim(&self) -> usize;
    fn enclose(&self, state_cell: &Hyperrect, control_cell: &Hyperrect) -> Result<Enclosure>;
}

/// Dynamics known exactly.
#[derive(Debug, Clone)]
pub struct KnownModel {
    pub system: SystemModel,
}

impl TransitionModel for KnownModel {
    fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    fn enclose(&self, state_cell: &Hyperrect, control_cell: &Hyperrect) -> Result<Enclosure> {
        let (lo, hi) = self.system.image_bounds(state_cell, control_cell);
        Ok(Enclosure::exact(lo, hi))
    }
}

/// Dynamics learned by GP regression with a probabilistic error bound.
#[derive(Debug)]
pub struct LearnedModel {
    gp: GpModel,
    delta: f64,
    scales: Vec<f64>,
    options: BoundOptions,
}

impl LearnedModel {
    pub fn new(gp: GpModel, error: &ErrorBoundConfig, options: BoundOptions) -> Result<Self> {
        let scales = gp.confidence_scales(error)?;
        Ok(Self {
            gp,
            delta: error.delta,
            scales,
            options,
        })
    }

    pub fn gp(&self) -> &GpModel {
        &self.gp
    }

    pub fn confidence_scales(&self) -> &[f64] {
        &self.scales
    }
}

impl TransitionModel for LearnedModel {
    fn state_dim(&self) -> usize {
        self.gp.state_dim()
    }

    fn enclose(&self, state_cell: &Hyperrect, control_cell: &Hyperrect) -> Result<Enclosure> {
        let b = self
            .gp
            .region_bounds_with(&state_cell.product(control_cell), self.options)?;
        Ok(Enclosure {
            epsilon: self.scales.iter().map(|a| a * b.std_upper).collect(),
            mean_lower: b.mean_lower,
            mean_upper: b.mean_upper,
            delta: self.delta,
        })
    }
}

/// Closed probability interval `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbInterval {
    pub lower: f64,
    pub upper: f64,
}

impl ProbInterval {
    pub fn contains(&self, p: f64) -> bool {
        self.lower <= p && p <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// `Φ(b) - Φ(a)` for `a ≤ b`, accurate far into either tail; zero if `a ≥ b`.
pub fn gaussian_mass(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() || a >= b {
        return 0.0;
    }
    let mass = if a >= 0.0 {
        0.5 * (erfc(a / SQRT_2) - erfc(b / SQRT_2))
    } else if b <= 0.0 {
        0.5 * (erfc(-b / SQRT_2) - erfc(-a / SQRT_2))
    } else {
        1.0 - 0.5 * (erfc(-a / SQRT_2) + erfc(b / SQRT_2))
    };
    mass.clamp(0.0, 1.0)
}

/// Minkowski sum of the mean enclosure and an uncertainty box.
pub fn post_image(mean_lower: &[f64], mean_upper: &[f64], uncertainty: &Hyperrect) -> Result<Hyperrect> {
    let mean = Hyperrect::new(mean_lower.to_vec(), mean_upper.to_vec())?;
    mean.minkowski_sum(uncertainty)
}

/// Sound bounds on `T(target | z)` over all `z` in the enclosed cell.
pub fn transition_interval(enc: &Enclosure, noise: &NoiseModel, target: &Hyperrect) -> Result<ProbInterval> {
    let n = enc.dim();
    for got in [target.dim(), noise.dim(), enc.mean_upper.len(), enc.epsilon.len()] {
        if got != n {
            return Err(Error::DimensionMismatch { expected: n, got });
        }
    }
    let mut lower = 1.0 - enc.delta;
    let mut upper = 1.0;
    for d in 0..n {
        let s = noise.std[d];
        let (xl, xu) = (target.lower()[d], target.upper()[d]);
        let (ml, mu, e) = (enc.mean_lower[d], enc.mean_upper[d], enc.epsilon[d]);
        if s > 0.0 {
            lower *= gaussian_mass((xl + e - ml) / s, (xu - e - mu) / s);
            upper *= gaussian_mass((xl - e - mu) / s, (xu + e - ml) / s);
        } else {
            // noiseless dimension: the successor is the drift itself
            lower *= if xl + e <= ml && mu <= xu - e { 1.0 } else { 0.0 };
            upper *= if xl - e <= mu && ml <= xu + e { 1.0 } else { 0.0 };
        }
    }
    let upper = (upper + enc.delta).clamp(0.0, 1.0);
    let lower = lower.clamp(0.0, upper);
    Ok(ProbInterval { lower, upper })
}

/// Bounds on the probability of leaving `safe_set` in one step.
pub fn unsafe_interval(enc: &Enclosure, noise: &NoiseModel, safe_set: &Hyperrect) -> Result<ProbInterval> {
    let stay = transition_interval(enc, noise, safe_set)?;
    Ok(ProbInterval {
        lower: (1.0 - stay.upper).clamp(0.0, 1.0),
        upper: (1.0 - stay.lower).clamp(0.0, 1.0),
    })
}

/// One row: intervals to each of the `K` state cells followed by the unsafe
/// set.
pub fn transition_row(
    enc: &Enclosure,
    noise: &NoiseModel,
    partition: &StateControlPartition,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = partition.num_states();
    let mut lower = Vec::with_capacity(k + 1);
    let mut upper = Vec::with_capacity(k + 1);
    for j in 0..k {
        let p = transition_interval(enc, noise, &partition.state_cell(j))?;
        lower.push(p.lower);
        upper.push(p.upper);
    }
    let u = unsafe_interval(enc, noise, partition.safe_set())?;
    lower.push(u.lower);
    upper.push(u.upper);
    Ok((lower, upper))
}

/// Intervals `[p̲, p̄]` for every state-control cell `(i, l)` and every
/// destination `j ∈ {0..K-1, unsafe}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionIntervalMatrix {
    num_states: usize,
    num_controls: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RowExport {
    i: usize,
    l: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MatrixExport {
    num_states: usize,
    num_controls: usize,
    rows: Vec<RowExport>,
}

impl TransitionIntervalMatrix {
    /// Assembles a matrix from rows ordered by `(i, l)` with `l` fastest,
    /// enforcing `Σ p̲ ≤ 1 ≤ Σ p̄` per row.
    pub fn from_rows(num_states: usize, num_controls: usize, rows: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        if rows.len() != num_states * num_controls {
            return Err(Error::DimensionMismatch {
                expected: num_states * num_controls,
                got: rows.len(),
            });
        }
        let width = num_states + 1;
        let mut lower = Vec::with_capacity(rows.len() * width);
        let mut upper = Vec::with_capacity(rows.len() * width);
        for (idx, (lo, mut hi)) in rows.into_iter().enumerate() {
            let (i, l) = (idx / num_controls, idx % num_controls);
            if lo.len() != width || hi.len() != width {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    got: lo.len().min(hi.len()),
                });
            }
            for (a, b) in lo.iter().zip(&hi) {
                if !(0.0..=1.0).contains(a) || !(0.0..=1.0).contains(b) || a > b {
                    return Err(Error::Soundness(format!(
                        "row ({i}, {l}) has an invalid interval [{a}, {b}]"
                    )));
                }
            }
            let sum_lo: f64 = lo.iter().sum();
            if sum_lo > 1.0 + ROW_SUM_TOL {
                return Err(Error::Soundness(format!(
                    "row ({i}, {l}) has lower bounds summing to {sum_lo}"
                )));
            }
            let sum_hi: f64 = hi.iter().sum();
            if sum_hi < 1.0 {
                let deficit = 1.0 - sum_hi;
                log::warn!("row ({i}, {l}): upper bounds sum to {sum_hi}; widening the unsafe entry by {deficit:e}");
                hi[width - 1] = (hi[width - 1] + deficit).min(1.0);
            }
            lower.extend(lo);
            upper.extend(hi);
        }
        Ok(Self {
            num_states,
            num_controls,
            lower,
            upper,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_controls(&self) -> usize {
        self.num_controls
    }

    /// Column index of the unsafe destination.
    pub fn unsafe_index(&self) -> usize {
        self.num_states
    }

    fn offset(&self, i: usize, l: usize) -> usize {
        assert!(
            i < self.num_states && l < self.num_controls,
            "cell ({i}, {l}) out of range"
        );
        (i * self.num_controls + l) * (self.num_states + 1)
    }

    /// Lower and upper bounds of row `(i, l)`, unsafe entry last.
    pub fn row(&self, i: usize, l: usize) -> (&[f64], &[f64]) {
        let o = self.offset(i, l);
        let w = self.num_states + 1;
        (&self.lower[o..o + w], &self.upper[o..o + w])
    }

    pub fn interval(&self, i: usize, l: usize, j: usize) -> ProbInterval {
        let (lo, hi) = self.row(i, l);
        ProbInterval {
            lower: lo[j],
            upper: hi[j],
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let rows = (0..self.num_states)
            .flat_map(|i| (0..self.num_controls).map(move |l| (i, l)))
            .map(|(i, l)| {
                let (lo, hi) = self.row(i, l);
                RowExport {
                    i,
                    l,
                    lower: lo.to_vec(),
                    upper: hi.to_vec(),
                }
            })
            .collect();
        Ok(serde_json::to_string(&MatrixExport {
            num_states: self.num_states,
            num_controls: self.num_controls,
            rows,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let export: MatrixExport = serde_json::from_str(text)?;
        let mut rows = export.rows;
        rows.sort_by_key(|r| (r.i, r.l));
        for (idx, r) in rows.iter().enumerate() {
            if (r.i, r.l) != (idx / export.num_controls.max(1), idx % export.num_controls.max(1)) {
                return Err(Error::invalid(format!(
                    "missing or duplicate row near ({}, {})",
                    r.i, r.l
                )));
            }
        }
        Self::from_rows(
            export.num_states,
            export.num_controls,
            rows.into_iter().map(|r| (r.lower, r.upper)).collect(),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Computes every row of the interval matrix in parallel.
pub fn build_matrix<M: TransitionModel + ?Sized>(
    model: &M,
    noise: &NoiseModel,
    partition: &StateControlPartition,
) -> Result<TransitionIntervalMatrix> {
    let n = model.state_dim();
    if partition.safe_set().dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: partition.safe_set().dim(),
        });
    }
    let (k, l) = (partition.num_states(), partition.num_controls());
    let rows = (0..k * l)
        .into_par_iter()
        .map(|idx| {
            let (i, c) = (idx / l, idx % l);
            let enc = model.enclose(&partition.state_cell(i), &partition.control_cell(c))?;
            transition_row(&enc, noise, partition)
        })
        .collect::<Result<Vec<_>>>()?;
    TransitionIntervalMatrix::from_rows(k, l, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Grid;
    use crate::gp::{InformationGain, KernelConfig};
    use crate::systems::generate_dataset;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Standard normal mass over `[a, b]` by composite Simpson quadrature of
    /// the density, split at zero and truncated at ±40.
    fn quad_mass(a: f64, b: f64) -> f64 {
        let (a, b) = (a.max(-40.0), b.min(40.0));
        if a >= b {
            return 0.0;
        }
        let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let simpson = |lo: f64, hi: f64| {
            let n = 20_000;
            let h = (hi - lo) / n as f64;
            let mut s = pdf(lo) + pdf(hi);
            for k in 1..n {
                s += pdf(lo + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        if a < 0.0 && b > 0.0 {
            simpson(a, 0.0) + simpson(0.0, b)
        } else {
            simpson(a, b)
        }
    }

    #[test]
    fn gaussian_mass_matches_quadrature() {
        for (a, b) in [
            (-1.0, 1.0),
            (0.3, 2.5),
            (-3.0, -0.1),
            (2.0, 9.0),
            (-50.0, 0.5),
            (-0.2, 0.2),
        ] {
            let m = gaussian_mass(a, b);
            assert!((m - quad_mass(a, b)).abs() < 1e-12, "{a} {b}: {m}");
        }
        assert_eq!(gaussian_mass(1.0, 1.0), 0.0);
        assert_eq!(gaussian_mass(2.0, -2.0), 0.0);
        assert_eq!(gaussian_mass(f64::NEG_INFINITY, f64::INFINITY), 1.0);
        // far tail keeps relative precision
        let tail = gaussian_mass(10.0, f64::INFINITY);
        assert!((tail / 7.619_853_024_160_527e-24 - 1.0).abs() < 1e-10, "{tail:e}");
    }

    #[test]
    fn post_image_examples() {
        let zero = Hyperrect::point(&[0.0, 0.0]).unwrap();
        let p = post_image(&[0.3, 0.3], &[0.4, 0.4], &zero).unwrap();
        assert_eq!(p, Hyperrect::cube(0.3, 0.4, 2).unwrap());
        let c = Hyperrect::cube(-0.05, 0.05, 2).unwrap();
        let p = post_image(&[0.3, 0.3], &[0.4, 0.4], &c).unwrap();
        for d in 0..2 {
            assert!((p.lower()[d] - 0.25).abs() < 1e-15 && (p.upper()[d] - 0.45).abs() < 1e-15);
        }
        let p = post_image(&[0.2, 0.7], &[0.2, 0.7], &Hyperrect::point(&[0.01, -0.01]).unwrap()).unwrap();
        assert!((p.lower()[0] - 0.21).abs() < 1e-15 && p.width(0) == 0.0 && p.width(1) == 0.0);
    }

    fn noise(s: f64) -> NoiseModel {
        NoiseModel::isotropic(s, 2).unwrap()
    }

    #[test]
    fn point_enclosure_gives_exact_rectangle_probability() {
        let enc = Enclosure::exact(vec![0.42, 0.61], vec![0.42, 0.61]);
        let target = Hyperrect::new(vec![0.4, 0.6], vec![0.5, 0.7]).unwrap();
        let s = 0.03;
        let p = transition_interval(&enc, &noise(s), &target).unwrap();
        let exact = quad_mass((0.4 - 0.42) / s, (0.5 - 0.42) / s) * quad_mass((0.6 - 0.61) / s, (0.7 - 0.61) / s);
        assert!(
            (p.lower - exact).abs() < 1e-12 && (p.upper - exact).abs() < 1e-12,
            "{p:?} vs {exact}"
        );
    }

    #[test]
    fn deep_interior_and_far_targets() {
        let enc = Enclosure::exact(vec![0.45, 0.45], vec![0.55, 0.55]);
        let unit = Hyperrect::cube(0.0, 1.0, 2).unwrap();
        let p = transition_interval(&enc, &noise(0.01), &unit).unwrap();
        assert!(p.lower >= 1.0 - 1e-12);
        let u = unsafe_interval(&enc, &noise(0.01), &unit).unwrap();
        assert!(u.upper <= 1e-9);

        let far = Hyperrect::cube(2.0, 3.0, 2).unwrap();
        let mut enc_d = enc.clone();
        enc_d.delta = 0.05;
        enc_d.epsilon = vec![0.01, 0.01];
        let p = transition_interval(&enc_d, &noise(0.01), &far).unwrap();
        assert!(p.upper <= 0.05 + 1e-9 && p.lower == 0.0);
        let u = unsafe_interval(&enc_d, &noise(0.01), &unit).unwrap();
        assert!(u.upper <= 0.05 + 1e-9);
    }

    #[test]
    fn certain_exit() {
        let enc = Enclosure::exact(vec![3.0, 3.0], vec![3.2, 3.1]);
        let u = unsafe_interval(&enc, &noise(0.01), &Hyperrect::cube(0.0, 1.0, 2).unwrap()).unwrap();
        assert!(u.lower >= 1.0 - 1e-12 && u.upper >= 1.0 - 1e-12);
    }

    #[test]
    fn absorbing_single_cell() {
        // x' = x/2 keeps the only cell [-1, 1]^2 with overwhelming probability
        let system = SystemModel::linear(
            vec![vec![0.5, 0.0], vec![0.0, 0.5]],
            vec![vec![0.0], vec![0.0]],
            Hyperrect::new(vec![0.0], vec![1.0]).unwrap(),
        )
        .unwrap();
        let safe = Hyperrect::cube(-1.0, 1.0, 2).unwrap();
        let part = StateControlPartition::new(
            Grid::with_counts(safe.clone(), &[1, 1]).unwrap(),
            Grid::with_counts(system.control_box.clone(), &[1]).unwrap(),
            safe,
        )
        .unwrap();
        let m = build_matrix(&KnownModel { system }, &noise(1e-3), &part).unwrap();
        let (lo, hi) = m.row(0, 0);
        assert!(lo[0] >= 1.0 - 1e-12 && hi[0] == 1.0);
        assert!(lo[1] == 0.0 && hi[1] <= 1e-12);
    }

    fn linear_partition() -> StateControlPartition {
        let safe = Hyperrect::cube(0.0, 1.0, 2).unwrap();
        StateControlPartition::uniform(
            safe,
            &[0.1, 0.1],
            Hyperrect::new(vec![0.0], vec![0.5]).unwrap(),
            &[5],
            Hyperrect::cube(0.4, 0.5, 2).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn linear_known_matrix_shape_and_feasibility() {
        let part = linear_partition();
        let m = build_matrix(
            &KnownModel {
                system: SystemModel::linear_benchmark(),
            },
            &noise(0.01),
            &part,
        )
        .unwrap();
        assert_eq!((m.num_states(), m.num_controls()), (100, 5));
        for i in 0..100 {
            for l in 0..5 {
                let (lo, hi) = m.row(i, l);
                assert_eq!(lo.len(), 101);
                assert!(lo.iter().sum::<f64>() <= 1.0 + 1e-12);
                assert!(hi.iter().sum::<f64>() >= 1.0);
            }
        }
        let back = TransitionIntervalMatrix::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn feasibility_repair_and_soundness_error() {
        let rows = vec![(vec![0.1, 0.0], vec![0.5, 0.2])];
        let m = TransitionIntervalMatrix::from_rows(1, 1, rows).unwrap();
        let (_, hi) = m.row(0, 0);
        assert!((hi.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let bad = vec![(vec![0.7, 0.6], vec![0.8, 0.7])];
        assert!(matches!(
            TransitionIntervalMatrix::from_rows(1, 1, bad),
            Err(Error::Soundness(_))
        ));
    }

    fn learned_model(delta: f64) -> LearnedModel {
        let sys = SystemModel::linear_benchmark();
        let region = Hyperrect::new(vec![-0.1, -0.1, 0.0], vec![1.1, 1.1, 0.5]).unwrap();
        let data = generate_dataset(&sys, &noise(0.01), &region, 150, 5).unwrap();
        let kernel = KernelConfig::new(1.0, vec![2.0, 2.0, 2.0], 1e-4).unwrap();
        let gp = GpModel::fit(&data, &kernel).unwrap();
        let cfg = ErrorBoundConfig {
            delta,
            rkhs_bounds: vec![2.0, 2.0],
            information_gain: InformationGain::Computed,
        };
        LearnedModel::new(gp, &cfg, BoundOptions::default()).unwrap()
    }

    #[test]
    fn monte_carlo_containment_of_learned_mean() {
        let model = learned_model(1e-3);
        let part = linear_partition();
        let nz = noise(0.01);
        let mut rng = crate::rng::seeded(11);
        let draws = 4000;
        for _ in 0..50 {
            let i = rng.random_range(0..part.num_states());
            let l = rng.random_range(0..part.num_controls());
            let enc = model.enclose(&part.state_cell(i), &part.control_cell(l)).unwrap();
            // aim the target near the enclosure so the test is not trivial
            let mid: Vec<f64> = (0..2).map(|d| 0.5 * (enc.mean_lower[d] + enc.mean_upper[d])).collect();
            let j = part
                .state_grid()
                .locate(&[mid[0].clamp(0.0, 1.0), mid[1].clamp(0.0, 1.0)])
                .unwrap()
                .unwrap_or(0);
            let target = part.state_cell(j);
            let p = transition_interval(&enc, &nz, &target).unwrap();
            let cell = part.joint_cell(i, l);
            for _ in 0..20 {
                let z = crate::rng::uniform_in(&cell, &mut rng);
                let m = model.gp().mean_at(&z).unwrap();
                let mut hits = 0usize;
                for _ in 0..draws {
                    let y: Vec<f64> = m
                        .iter()
                        .map(|v| {
                            let w: f64 = StandardNormal.sample(&mut rng);
                            v + 0.01 * w
                        })
                        .collect();
                    if target.contains(&y) {
                        hits += 1;
                    }
                }
                let est = hits as f64 / draws as f64;
                let se = (est * (1.0 - est) / draws as f64).sqrt().max(1.0 / draws as f64);
                assert!(est >= p.lower - 3.0 * se && est <= p.upper + 3.0 * se, "{est} vs {p:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn enlarging_target_is_monotone(
            ml in 0.0f64..1.0, w in 0.0f64..0.2, e in 0.0f64..0.05, delta in 0.0f64..0.1,
            tl in -0.5f64..1.0, tw in 0.0f64..0.5, grow in 0.0f64..0.3, s in 0.001f64..0.1,
        ) {
            let enc = Enclosure {
                mean_lower: vec![ml, ml], mean_upper: vec![ml + w, ml + w],
                epsilon: vec![e, e], delta,
            };
            let small = Hyperrect::new(vec![tl, tl], vec![tl + tw, tl + tw]).unwrap();
            let big = small.dilate(&[grow, grow]).unwrap();
            let a = transition_interval(&enc, &noise(s), &small).unwrap();
            let b = transition_interval(&enc, &noise(s), &big).unwrap();
            prop_assert!(b.lower >= a.lower - 1e-15 && b.upper >= a.upper - 1e-15);
            prop_assert!(0.0 <= a.lower && a.lower <= a.upper && a.upper <= 1.0);
        }

        #[test]
        fn point_case_collapses(m0 in 0.0f64..1.0, m1 in 0.0f64..1.0, s in 0.005f64..0.2) {
            let enc = Enclosure::exact(vec![m0, m1], vec![m0, m1]);
            let t = Hyperrect::new(vec![0.2, 0.3], vec![0.6, 0.9]).unwrap();
            let p = transition_interval(&enc, &noise(s), &t).unwrap();
            prop_assert!((p.upper - p.lower).abs() < 1e-15);
        }
    }
}

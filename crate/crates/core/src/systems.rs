//! Ground-truth dynamics `x' = f(x, u) + w`, the Gaussian noise model,
//! and input/output datasets.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Hyperrect;
use crate::rng;

/// Slack allowed when checking that a control lies in the control box.
const CONTROL_TOL: f64 = 1e-12;

/// Vector field of the system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dynamics {
    /// `f(x, u) = A x + B u`, with `A` stored row-major as `n` rows of length `n`
    /// and `B` as `n` rows of length `m`.
    Linear { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
    /// `f(x, u) = x + speed * (cos u, sin u)`.
    Dubins { speed: f64 },
}

/// A known system: dynamics plus the admissible control box `U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemModel {
    pub dynamics: Dynamics,
    pub control_box: Hyperrect,
}

impl SystemModel {
    pub fn linear(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, control_box: Hyperrect) -> Result<Self> {
        let n = a.len();
        if n == 0 || a.iter().any(|row| row.len() != n) {
            return Err(Error::invalid("A must be a non-empty square matrix"));
        }
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: b.len(),
            });
        }
        let m = control_box.dim();
        if let Some(row) = b.iter().find(|row| row.len() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: row.len(),
            });
        }
        Ok(Self {
            dynamics: Dynamics::Linear { a, b },
            control_box,
        })
    }

    /// The simplified Dubins car with heading set directly, `u ∈ [-π, π]`.
    pub fn dubins(speed: f64) -> Self {
        Self {
            dynamics: Dynamics::Dubins { speed },
            control_box: Hyperrect::new(vec![-std::f64::consts::PI], vec![std::f64::consts::PI]).expect("valid box"),
        }
    }

    /// `A = 0.5 I`, `B = (1, 1)^T`, `u ∈ [0, 0.5]`.
    pub fn linear_benchmark() -> Self {
        Self::linear(
            vec![vec![0.5, 0.0], vec![0.0, 0.5]],
            vec![vec![1.0], vec![1.0]],
            Hyperrect::new(vec![0.0], vec![0.5]).expect("valid box"),
        )
        .expect("valid benchmark")
    }

    pub fn state_dim(&self) -> usize {
        match &self.dynamics {
            Dynamics::Linear { a, .. } => a.len(),
            Dynamics::Dubins { .. } => 2,
        }
    }

    pub fn control_dim(&self) -> usize {
        self.control_box.dim()
    }

    /// Deterministic part `f(x, u)`; does not check the control box.
    pub fn drift(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        match &self.dynamics {
            Dynamics::Linear { a, b } => a
                .iter()
                .zip(b)
                .map(|(ar, br)| {
                    ar.iter().zip(x).map(|(p, q)| p * q).sum::<f64>()
                        + br.iter().zip(u).map(|(p, q)| p * q).sum::<f64>()
                })
                .collect(),
            Dynamics::Dubins { speed } => {
                vec![x[0] + speed * u[0].cos(), x[1] + speed * u[0].sin()]
            }
        }
    }

    /// One step `f(x, u) + noise_draw`.
    pub fn step(&self, x: &[f64], u: &[f64], noise_draw: &[f64]) -> Result<Vec<f64>> {
        let n = self.state_dim();
        for (len, expected) in [(x.len(), n), (noise_draw.len(), n), (u.len(), self.control_dim())] {
            if len != expected {
                return Err(Error::DimensionMismatch { expected, got: len });
            }
        }
        let tolerant = self
            .control_box
            .dilate(&vec![CONTROL_TOL; self.control_dim()])
            .expect("non-negative margin");
        if !tolerant.contains(u) {
            return Err(Error::invalid(format!("control {u:?} outside the control box")));
        }
        let mut next = self.drift(x, u);
        for (v, w) in next.iter_mut().zip(noise_draw) {
            *v += w;
        }
        Ok(next)
    }

    /// Exact per-dimension range of `f` over `x ∈ state_cell`, `u ∈ control_cell`.
    pub fn image_bounds(&self, state_cell: &Hyperrect, control_cell: &Hyperrect) -> (Vec<f64>, Vec<f64>) {
        match &self.dynamics {
            Dynamics::Linear { a, b } => {
                let mut lo = Vec::with_capacity(a.len());
                let mut hi = Vec::with_capacity(a.len());
                for (ar, br) in a.iter().zip(b) {
                    let (mut l, mut h) = (0.0, 0.0);
                    let terms = ar
                        .iter()
                        .zip(state_cell.lower().iter().zip(state_cell.upper()))
                        .chain(br.iter().zip(control_cell.lower().iter().zip(control_cell.upper())));
                    for (coef, (xl, xu)) in terms {
                        let (p, q) = (coef * xl, coef * xu);
                        l += p.min(q);
                        h += p.max(q);
                    }
                    lo.push(l);
                    hi.push(h);
                }
                (lo, hi)
            }
            Dynamics::Dubins { speed } => {
                let (ul, uu) = (control_cell.lower()[0], control_cell.upper()[0]);
                let (cl, cu) = cos_range(ul, uu);
                let (sl, su) = cos_range(ul - std::f64::consts::FRAC_PI_2, uu - std::f64::consts::FRAC_PI_2);
                let s = *speed;
                let (c_lo, c_hi) = if s >= 0.0 { (s * cl, s * cu) } else { (s * cu, s * cl) };
                let (s_lo, s_hi) = if s >= 0.0 { (s * sl, s * su) } else { (s * su, s * sl) };
                (
                    vec![state_cell.lower()[0] + c_lo, state_cell.lower()[1] + s_lo],
                    vec![state_cell.upper()[0] + c_hi, state_cell.upper()[1] + s_hi],
                )
            }
        }
    }
}

/// Exact range of `cos` over `[a, b]`.
fn cos_range(a: f64, b: f64) -> (f64, f64) {
    use std::f64::consts::PI;
    let (ca, cb) = (a.cos(), b.cos());
    let mut lo = ca.min(cb);
    let mut hi = ca.max(cb);
    // extrema of cos sit at integer multiples of π
    let first = (a / PI).ceil() as i64;
    let last = (b / PI).floor() as i64;
    for k in first..=last {
        if k.rem_euclid(2) == 0 {
            hi = 1.0;
        } else {
            lo = -1.0;
        }
    }
    (lo, hi)
}

/// Zero-mean Gaussian noise with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub std: Vec<f64>,
}

impl NoiseModel {
    pub fn new(std: Vec<f64>) -> Result<Self> {
        if std.is_empty() || std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("noise standard deviations must be positive"));
        }
        Ok(Self { std })
    }

    pub fn isotropic(std: f64, dim: usize) -> Result<Self> {
        Self::new(vec![std; dim])
    }

    pub fn dim(&self) -> usize {
        self.std.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.std
            .iter()
            .map(|&s| Normal::new(0.0, s).expect("positive std").sample(rng))
            .collect()
    }
}

/// One transition `(x, u, x')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub next: Vec<f64>,
}

/// Input/output samples of the unknown system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    state_dim: usize,
    control_dim: usize,
    records: Vec<Record>,
}

impl Dataset {
    pub fn new(state_dim: usize, control_dim: usize, records: Vec<Record>) -> Result<Self> {
        for (k, r) in records.iter().enumerate() {
            if r.x.len() != state_dim || r.next.len() != state_dim || r.u.len() != control_dim {
                return Err(Error::invalid(format!("record {k} has inconsistent dimensions")));
            }
        }
        Ok(Self {
            state_dim,
            control_dim,
            records,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    /// Joint inputs `z = (x, u)`, one per record.
    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .map(|r| r.x.iter().chain(&r.u).copied().collect())
            .collect()
    }

    /// Observed `x'_d` for every record.
    pub fn outputs(&self, d: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.next[d]).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = format!("# n={} m={}\n", self.state_dim, self.control_dim);
        for r in &self.records {
            let fields: Vec<String> =
                r.x.iter()
                    .chain(&r.u)
                    .chain(&r.next)
                    .map(|v| format!("{v:?}"))
                    .collect();
            let _ = writeln!(out, "{}", fields.join(","));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses the CSV format written by [`Dataset::save`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (header_no, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "no records".into(),
        })?;
        let (n, m) = parse_header(header).ok_or_else(|| Error::Parse {
            line: header_no + 1,
            message: "expected header `# n=<n> m=<m>`".into(),
        })?;
        let width = 2 * n + m;
        let mut records = Vec::new();
        for (no, line) in lines {
            if line.trim_start().starts_with('#') {
                continue;
            }
            let values: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: no + 1,
                    message: format!("invalid number: {e}"),
                })?;
            if values.len() != width {
                return Err(Error::Parse {
                    line: no + 1,
                    message: format!("expected {width} fields, found {}", values.len()),
                });
            }
            records.push(Record {
                x: values[..n].to_vec(),
                u: values[n..n + m].to_vec(),
                next: values[n + m..].to_vec(),
            });
        }
        if records.is_empty() {
            return Err(Error::Parse {
                line: header_no + 1,
                message: "no records".into(),
            });
        }
        Dataset::new(n, m, records)
    }
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let rest = line.trim().strip_prefix('#')?;
    let mut n = None;
    let mut m = None;
    for token in rest.split_whitespace() {
        if let Some(v) = token.strip_prefix("n=") {
            n = v.parse().ok();
        } else if let Some(v) = token.strip_prefix("m=") {
            m = v.parse().ok();
        }
    }
    Some((n?, m?))
}

/// Draws `count` i.i.d. records with `(x, u)` uniform over `sampling_region`
/// (a box over states x controls) and `x' = f(x, u) + w`.
pub fn generate_dataset(
    system: &SystemModel,
    noise: &NoiseModel,
    sampling_region: &Hyperrect,
    count: usize,
    seed: u64,
) -> Result<Dataset> {
    let mut rng = rng::seeded(seed);
    generate_dataset_with(system, noise, sampling_region, count, &mut rng)
}

pub fn generate_dataset_with<R: Rng + ?Sized>(
    system: &SystemModel,
    noise: &NoiseModel,
    sampling_region: &Hyperrect,
    count: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::invalid("dataset size must be at least one"));
    }
    let (n, m) = (system.state_dim(), system.control_dim());
    if sampling_region.dim() != n + m {
        return Err(Error::DimensionMismatch {
            expected: n + m,
            got: sampling_region.dim(),
        });
    }
    if noise.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: noise.dim(),
        });
    }
    let control_part = Hyperrect::new(
        sampling_region.lower()[n..].to_vec(),
        sampling_region.upper()[n..].to_vec(),
    )?;
    if !system.control_box.contains_box(&control_part) {
        return Err(Error::invalid("sampling region exceeds the control box"));
    }
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let z = rng::uniform_in(sampling_region, rng);
        let (x, u) = z.split_at(n);
        let w = noise.sample(rng);
        let next = system.step(x, u, &w)?;
        records.push(Record {
            x: x.to_vec(),
            u: u.to_vec(),
            next,
        });
    }
    Dataset::new(n, m, records)
}

//! Empirical checks of a permissible strategy set against the true system:
//! Monte Carlo rollouts under randomly sampled permissible controls and a
//! greedy boundary-seeking adversary.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Hyperrect, StateControlPartition};
use crate::pruning::{strategy_sample, PermissibleStrategySet};
use crate::rng::{self, Stream};
use crate::systems::{NoiseModel, SystemModel};

/// Candidate controls evaluated per allowed control cell by the adversary.
pub const ADVERSARIAL_CANDIDATES: usize = 25;

/// One simulated path. `controls[k]` moves `states[k]` to `states[k + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub trial: usize,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    /// Whether the path left the safe set (it stops at the first exit).
    pub exited: bool,
}

/// Where the adversary may pick its controls from.
#[derive(Debug, Clone, Copy)]
pub enum ControlSource<'a> {
    Full,
    Permissible(&'a PermissibleStrategySet),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub trials: usize,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub violations: usize,
    pub empirical_safety: f64,
    pub certified_lower_bound: f64,
    /// 99.9% binomial quantile of the violation count implied by the bound.
    pub violation_quantile: usize,
    /// `violations ≤ violation_quantile` and the empirical safety is within
    /// three standard errors of the bound. Reported, never enforced.
    pub consistent_with_bound: bool,
    pub adversarial_full_set_exited: bool,
    pub adversarial_permissible_exited: bool,
}

/// Settings for [`validate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub trials: usize,
    pub seed: u64,
}

/// Monte Carlo rollouts from uniform starts in the initial set, each control
/// drawn by [`strategy_sample`]. Trial `t` uses its own stream derived from
/// `seed + t`, so serial and parallel execution agree.
pub fn monte_carlo(
    system: &SystemModel,
    noise: &NoiseModel,
    set: &PermissibleStrategySet,
    partition: &StateControlPartition,
    trials: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if trials == 0 {
        return Err(Error::invalid("at least one validation trial is required"));
    }
    check_dims(system, noise, partition)?;
    let safe = partition.safe_set();
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = rng::substream(seed.wrapping_add(trial as u64), Stream::Validation);
            let mut x = rng::uniform_in(partition.initial_set(), &mut rng);
            let mut path = Trajectory {
                trial,
                states: vec![x.clone()],
                controls: Vec::with_capacity(set.horizon),
                exited: !safe.contains(&x),
            };
            for _ in 0..set.horizon {
                if path.exited {
                    break;
                }
                let u = strategy_sample(set, partition, &x, &mut rng)?;
                x = system.step(&x, &u, &noise.sample(&mut rng))?;
                path.exited = !safe.contains(&x);
                path.controls.push(u);
                path.states.push(x.clone());
            }
            Ok(path)
        })
        .collect()
}

/// Candidate controls of one control cell: a tensor grid with
/// `round(25^(1/m))` points per dimension, endpoints included.
fn candidates(cell: &Hyperrect) -> Vec<Vec<f64>> {
    let m = cell.dim();
    let per_dim = ((ADVERSARIAL_CANDIDATES as f64).powf(1.0 / m as f64).round() as usize).max(2);
    let total = per_dim.pow(m as u32);
    (0..total)
        .map(|mut idx| {
            let mut u = vec![0.0; m];
            for d in (0..m).rev() {
                let k = idx % per_dim;
                idx /= per_dim;
                let t = k as f64 / (per_dim - 1) as f64;
                u[d] = cell.lower()[d] + t * cell.width(d);
            }
            u
        })
        .collect()
}

/// Greedy adversary: at every step it evaluates the candidate controls of
/// the allowed cells under the noise-free true dynamics and applies the one
/// whose successor is closest to (or furthest beyond) the safe-set boundary,
/// followed by one noisy step. Stops at the first exit.
pub fn adversarial_rollout(
    system: &SystemModel,
    noise: &NoiseModel,
    partition: &StateControlPartition,
    source: ControlSource<'_>,
    x0: &[f64],
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    check_dims(system, noise, partition)?;
    if !partition.initial_set().contains(x0) {
        return Err(Error::invalid("adversarial start must lie in the initial set"));
    }
    let safe = partition.safe_set();
    let all: Vec<usize> = (0..partition.num_controls()).collect();
    let cell_candidates: Vec<Vec<Vec<f64>>> = all.iter().map(|&l| candidates(&partition.control_cell(l))).collect();
    let mut rng = rng::substream(seed, Stream::Adversarial);
    let mut x = x0.to_vec();
    let mut path = Trajectory {
        trial: 0,
        states: vec![x.clone()],
        controls: Vec::with_capacity(horizon),
        exited: false,
    };
    for _ in 0..horizon {
        let i = partition.state_grid().locate(&x)?.ok_or(Error::OutOfDomain)?;
        let allowed: &[usize] = match source {
            ControlSource::Full => &all,
            ControlSource::Permissible(set) => set.retained.get(&i).map(Vec::as_slice).unwrap_or(&[]),
        };
        let mut best: Option<(f64, &Vec<f64>)> = None;
        for &l in allowed {
            for u in &cell_candidates[l] {
                let score = safe.boundary_distance(&system.drift(&x, u));
                if best.is_none_or(|(s, _)| score < s) {
                    best = Some((score, u));
                }
            }
        }
        let Some((_, u)) = best else {
            return Err(Error::invalid(format!("state cell {i} has no allowed control")));
        };
        let u = u.clone();
        x = system.step(&x, &u, &noise.sample(&mut rng))?;
        path.controls.push(u);
        path.states.push(x.clone());
        if !safe.contains(&x) {
            path.exited = true;
            break;
        }
    }
    Ok(path)
}

/// Smallest `k` with `P[Binomial(trials, q) ≤ k] ≥ level`.
pub fn binomial_quantile(trials: usize, q: f64, level: f64) -> usize {
    let q = q.clamp(0.0, 1.0);
    if q == 0.0 {
        return 0;
    }
    if q == 1.0 {
        return trials;
    }
    let n = trials as f64;
    // log pmf(0) = n ln(1 - q), then the ratio recursion
    let mut log_pmf = n * (-q).ln_1p();
    let mut cdf = log_pmf.exp();
    let ratio = (q / (1.0 - q)).ln();
    for k in 0..trials {
        if cdf >= level {
            return k;
        }
        log_pmf += ((n - k as f64) / (k as f64 + 1.0)).ln() + ratio;
        cdf += log_pmf.exp();
    }
    trials
}

/// Monte Carlo plus both adversarial rollouts (started at the centre of the
/// initial set) for one permissible set.
pub fn validate(
    system: &SystemModel,
    noise: &NoiseModel,
    set: &PermissibleStrategySet,
    partition: &StateControlPartition,
    config: &ValidationConfig,
) -> Result<(ValidationReport, Vec<Trajectory>, [Trajectory; 2])> {
    let runs = monte_carlo(system, noise, set, partition, config.trials, config.seed)?;
    let violations = runs.iter().filter(|t| t.exited).count();
    let trials = config.trials as f64;
    let bound = set.certificate.safety_lower_bound;
    let q = 1.0 - bound;
    let empirical_safety = 1.0 - violations as f64 / trials;
    let quantile = binomial_quantile(config.trials, q, 0.999);
    let three_se = 3.0 * (q * (1.0 - q) / trials).sqrt();
    let x0 = partition.initial_set().center();
    let full = adversarial_rollout(
        system,
        noise,
        partition,
        ControlSource::Full,
        &x0,
        set.horizon,
        config.seed,
    )?;
    let mut perm = adversarial_rollout(
        system,
        noise,
        partition,
        ControlSource::Permissible(set),
        &x0,
        set.horizon,
        config.seed,
    )?;
    perm.trial = 1;
    let report = ValidationReport {
        trials: config.trials,
        horizon: set.horizon,
        violations,
        empirical_safety,
        certified_lower_bound: bound,
        violation_quantile: quantile,
        consistent_with_bound: violations <= quantile && empirical_safety >= bound - three_se,
        adversarial_full_set_exited: full.exited,
        adversarial_permissible_exited: perm.exited,
    };
    if !report.consistent_with_bound {
        log::warn!(
            "{violations} violations in {} trials exceed what the certified bound {bound} allows",
            config.trials
        );
    }
    Ok((report, runs, [full, perm]))
}

fn check_dims(system: &SystemModel, noise: &NoiseModel, partition: &StateControlPartition) -> Result<()> {
    for (got, expected) in [
        (noise.dim(), system.state_dim()),
        (partition.safe_set().dim(), system.state_dim()),
        (partition.control_box().dim(), system.control_dim()),
    ] {
        if got != expected {
            return Err(Error::DimensionMismatch { expected, got });
        }
    }
    Ok(())
}

/// Writes `trial,step,x1..xn,u1..um,in_safe_set`. The control columns of the
/// final state of each path are empty.
pub fn write_trajectories_csv(
    path: impl AsRef<Path>,
    trajectories: &[Trajectory],
    safe_set: &Hyperrect,
    control_dim: usize,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    let n = safe_set.dim();
    let mut header = vec!["trial".to_string(), "step".to_string()];
    header.extend((1..=n).map(|d| format!("x{d}")));
    header.extend((1..=control_dim).map(|d| format!("u{d}")));
    header.push("in_safe_set".into());
    writeln!(out, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
    for t in trajectories {
        for (k, x) in t.states.iter().enumerate() {
            let mut row = vec![t.trial.to_string(), k.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            match t.controls.get(k) {
                Some(u) => row.extend(u.iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), control_dim)),
            }
            row.push(safe_set.contains(x).to_string());
            writeln!(out, "{}", row.join(",")).map_err(|e| Error::io(path, e))?;
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::BarrierCertificate;
    use std::collections::BTreeMap;

    fn partition() -> StateControlPartition {
        StateControlPartition::uniform(
            Hyperrect::cube(0.0, 1.0, 2).unwrap(),
            &[0.1, 0.1],
            Hyperrect::new(vec![0.0], vec![0.5]).unwrap(),
            &[5],
            Hyperrect::cube(0.4, 0.5, 2).unwrap(),
        )
        .unwrap()
    }

    fn set_with(retained: impl Fn(usize) -> Vec<usize>, bound: f64) -> PermissibleStrategySet {
        PermissibleStrategySet {
            p: 0.9,
            horizon: 100,
            retained: (0..100).map(|i| (i, retained(i))).collect::<BTreeMap<_, _>>(),
            removal_log: vec![],
            certificate: BarrierCertificate {
                eta: 0.0,
                beta: 0.0,
                horizon: 100,
                safety_lower_bound: bound,
                b: vec![0.0; 100],
                beta_matrix: vec![],
                iterations: 1,
            },
            retained_fraction: 1.0,
            admissible_pairs: 0,
        }
    }

    #[test]
    fn binomial_quantile_matches_direct_sum() {
        // oracle: explicit cdf with exact binomial coefficients
        let (n, q) = (40usize, 0.1f64);
        let pmf = |k: usize| {
            let mut c = 1.0f64;
            for j in 0..k {
                c *= (n - j) as f64 / (j + 1) as f64;
            }
            c * q.powi(k as i32) * (1.0 - q).powi((n - k) as i32)
        };
        let mut cdf = 0.0;
        let mut expected = n;
        for k in 0..=n {
            cdf += pmf(k);
            if cdf >= 0.999 {
                expected = k;
                break;
            }
        }
        assert_eq!(binomial_quantile(n, q, 0.999), expected);
        assert_eq!(binomial_quantile(1000, 0.0, 0.999), 0);
        assert_eq!(binomial_quantile(1000, 1.0, 0.999), 1000);
        assert_eq!(binomial_quantile(1000, 1e-4, 0.999), 2);
    }

    #[test]
    fn candidate_grid_covers_cell_endpoints() {
        let c = candidates(&Hyperrect::new(vec![0.0], vec![0.1]).unwrap());
        assert_eq!(c.len(), 25);
        assert_eq!(c[0], vec![0.0]);
        assert!((c[24][0] - 0.1).abs() < 1e-15);
        let c2 = candidates(&Hyperrect::cube(0.0, 1.0, 2).unwrap());
        assert_eq!(c2.len(), 25);
    }

    #[test]
    fn absorbing_system_never_violates() {
        let part = partition();
        let sys = SystemModel::linear(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0], vec![0.0]],
            Hyperrect::new(vec![0.0], vec![0.5]).unwrap(),
        )
        .unwrap();
        let noise = NoiseModel::isotropic(1e-6, 2).unwrap();
        let set = set_with(|_| vec![0, 1, 2, 3, 4], 1.0);
        let runs = monte_carlo(&sys, &noise, &set, &part, 1, 7).unwrap();
        assert_eq!(runs.len(), 1);
        assert!(!runs[0].exited);
        assert_eq!(runs[0].states.len(), 101);
        for source in [ControlSource::Full, ControlSource::Permissible(&set)] {
            let t = adversarial_rollout(&sys, &noise, &part, source, &[0.45, 0.45], 100, 3).unwrap();
            assert!(!t.exited);
        }
    }

    #[test]
    fn always_unsafe_dynamics_violate_every_trial() {
        let part = partition();
        let sys = SystemModel::linear(
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![vec![10.0], vec![10.0]],
            Hyperrect::new(vec![0.0], vec![0.5]).unwrap(),
        )
        .unwrap();
        let noise = NoiseModel::isotropic(0.01, 2).unwrap();
        // controls from [0.2, 0.5] send every state to ≥ 2
        let set = set_with(|_| vec![2, 3, 4], 0.0);
        let runs = monte_carlo(&sys, &noise, &set, &part, 50, 1).unwrap();
        assert_eq!(runs.iter().filter(|t| t.exited).count(), 50);
        assert!(runs.iter().all(|t| t.states.len() == 2));
    }

    #[test]
    fn seeds_reproduce_and_parallel_matches_serial() {
        let part = partition();
        let sys = SystemModel::linear_benchmark();
        let noise = NoiseModel::isotropic(0.01, 2).unwrap();
        let set = set_with(|_| vec![0, 1, 2], 1.0);
        let a = monte_carlo(&sys, &noise, &set, &part, 20, 5).unwrap();
        let b = monte_carlo(&sys, &noise, &set, &part, 20, 5).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| monte_carlo(&sys, &noise, &set, &part, 20, 5).unwrap());
        assert_eq!(a, serial);
        // trial t only depends on seed + t
        let shifted = monte_carlo(&sys, &noise, &set, &part, 19, 6).unwrap();
        assert_eq!(a[1].states, shifted[0].states);
        assert_ne!(
            a[0].states,
            monte_carlo(&sys, &noise, &set, &part, 1, 99).unwrap()[0].states
        );
    }

    #[test]
    fn adversary_respects_the_retained_cells() {
        let part = partition();
        let sys = SystemModel::linear_benchmark();
        let noise = NoiseModel::isotropic(0.01, 2).unwrap();
        let set = set_with(|i| if i % 2 == 0 { vec![0] } else { vec![1, 2] }, 1.0);
        let t = adversarial_rollout(
            &sys,
            &noise,
            &part,
            ControlSource::Permissible(&set),
            &[0.42, 0.47],
            100,
            11,
        )
        .unwrap();
        for (x, u) in t.states.iter().zip(&t.controls) {
            let i = part.state_grid().locate(x).unwrap().unwrap();
            let l = part.control_grid().locate(u).unwrap().unwrap();
            let allowed = &set.retained[&i];
            // boundary controls may locate to the lower neighbouring cell
            let inside = allowed.iter().any(|&a| part.control_cell(a).contains(u));
            assert!(inside, "control {u:?} (cell {l}) not in {allowed:?}");
        }
    }

    #[test]
    fn full_control_adversary_exits_linear_benchmark() {
        let part = partition();
        let sys = SystemModel::linear_benchmark();
        let noise = NoiseModel::isotropic(0.01, 2).unwrap();
        let t = adversarial_rollout(&sys, &noise, &part, ControlSource::Full, &[0.45, 0.45], 100, 0).unwrap();
        assert!(t.exited);
        assert!(t.states.len() <= 101);
        assert!(adversarial_rollout(&sys, &noise, &part, ControlSource::Full, &[0.9, 0.9], 10, 0).is_err());
    }

    #[test]
    fn csv_has_one_row_per_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let t = Trajectory {
            trial: 3,
            states: vec![vec![0.1, 0.2], vec![1.5, 0.2]],
            controls: vec![vec![0.4]],
            exited: true,
        };
        write_trajectories_csv(&path, &[t], &Hyperrect::cube(0.0, 1.0, 2).unwrap(), 1).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines,
            [
                "trial,step,x1,x2,u1,in_safe_set",
                "3,0,0.1,0.2,0.4,true",
                "3,1,1.5,0.2,,false"
            ]
        );
    }
}

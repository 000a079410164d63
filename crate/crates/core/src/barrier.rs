//! Piecewise-constant stochastic barrier synthesis.
//!
//! The barrier takes value `b_i ∈ [0, 1]` on state cell `i` and `1` outside the
//! safe set. For every active state-control pair the worst-case expected
//! barrier value over the interval transition set must not exceed
//! `b_i + β_i^l`; the certificate then bounds the probability of staying safe
//! for `N` steps from below by `1 - (η + N β)`.
//!
//! The inner maximisation is linear in `b` once the destination ordering is
//! fixed, so synthesis alternates an LP over a pool of witness distributions
//! with exact verification, adding the violating witnesses to the pool.

use std::collections::HashMap;

use microlp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem, Solution, SolveOutcome, Variable};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transition::TransitionIntervalMatrix;

/// Coefficients below this magnitude are dropped from LP columns.
const COEFF_FLUSH: f64 = 1e-15;
/// Coefficient flush thresholds after the first, second and third numerical
/// LP failure within one synthesis.
const RETRY_FLUSH: [f64; 3] = [1e-12, 1e-9, 1e-6];

/// Worst case of `Σ_j v_j p_j` with `v = (b, 1)` over the interval
/// distributions of one row, together with a maximising distribution.
///
/// Mass starts at the lower bounds and is then raised toward the upper
/// bounds in decreasing order of `v` (ties by index, the unsafe entry last)
/// until it sums to one.
pub fn worst_case_expectation(b: &[f64], lower: &[f64], upper: &[f64]) -> Result<(f64, Vec<f64>)> {
    let k = b.len();
    if lower.len() != k + 1 || upper.len() != k + 1 {
        return Err(Error::DimensionMismatch {
            expected: k + 1,
            got: lower.len().min(upper.len()),
        });
    }
    let sum_lo: f64 = lower.iter().sum();
    let sum_hi: f64 = upper.iter().sum();
    if sum_lo > 1.0 + 1e-12 || sum_hi < 1.0 - 1e-12 || lower.iter().zip(upper).any(|(a, b)| a > b) {
        return Err(Error::invalid(format!(
            "infeasible interval row: Σ lower = {sum_lo}, Σ upper = {sum_hi}"
        )));
    }
    let value_of = |j: usize| if j == k { 1.0 } else { b[j] };
    let mut order: Vec<usize> = (0..=k).collect();
    order.sort_by(|&p, &q| value_of(q).total_cmp(&value_of(p)).then(p.cmp(&q)));
    let p = greedy_witness(&order, lower, upper);
    let value = p.iter().enumerate().map(|(j, pj)| value_of(j) * pj).sum();
    Ok((value, p))
}

/// Distribution obtained by filling entries in the given order.
fn greedy_witness(order: &[usize], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    let mut p = lower.to_vec();
    let mut budget = 1.0 - lower.iter().sum::<f64>();
    for &j in order {
        if budget <= 0.0 {
            break;
        }
        let add = (upper[j] - lower[j]).min(budget);
        p[j] += add;
        budget -= add;
    }
    p
}

/// A linear cut `Σ_j p_j b_j + p_u ≤ b_i + β` for one pair.
#[derive(Debug, Clone, PartialEq)]
struct Cut {
    i: usize,
    l: usize,
    /// Non-zero `(j, p_j)` over state cells.
    mass: Vec<(usize, f64)>,
    unsafe_mass: f64,
}

impl Cut {
    fn from_witness(i: usize, l: usize, p: &[f64]) -> Self {
        let k = p.len() - 1;
        Self {
            i,
            l,
            mass: (0..k).filter(|&j| p[j] > 0.0).map(|j| (j, p[j])).collect(),
            unsafe_mass: p[k],
        }
    }

    fn value(&self, b: &[f64]) -> f64 {
        self.mass.iter().map(|&(j, pj)| pj * b[j]).sum::<f64>() + self.unsafe_mass
    }
}

/// Witness distributions already used to linearise the inner maximum,
/// grouped by state-control pair. Each witness is the greedy distribution of
/// one destination ordering.
#[derive(Debug, Clone, Default)]
pub struct CounterexamplePool {
    cuts: Vec<Cut>,
    by_pair: HashMap<(usize, usize), Vec<usize>>,
}

impl CounterexamplePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    pub fn cuts_for(&self, i: usize, l: usize) -> usize {
        self.by_pair.get(&(i, l)).map_or(0, Vec::len)
    }

    fn contains(&self, cut: &Cut) -> bool {
        self.by_pair
            .get(&(cut.i, cut.l))
            .is_some_and(|ids| ids.iter().any(|&c| self.cuts[c] == *cut))
    }

    /// Adds a cut unless an identical one is pooled; returns whether it was new.
    fn insert(&mut self, cut: Cut) -> bool {
        if self.contains(&cut) {
            return false;
        }
        self.by_pair.entry((cut.i, cut.l)).or_default().push(self.cuts.len());
        self.cuts.push(cut);
        true
    }

    /// Largest pooled linearisation of pair `(i, l)` at `b`.
    fn pooled_value(&self, i: usize, l: usize, b: &[f64]) -> f64 {
        self.by_pair.get(&(i, l)).map_or(f64::NEG_INFINITY, |ids| {
            ids.iter()
                .map(|&c| self.cuts[c].value(b))
                .fold(f64::NEG_INFINITY, f64::max)
        })
    }

    /// Keeps, per pair, only the cuts within `tol` of the pair's pooled
    /// maximum at `b`. Used between solves to stop the pool from growing
    /// with witnesses that no longer bind.
    pub fn retain_tight(&mut self, b: &[f64], tol: f64) {
        let best: HashMap<(usize, usize), f64> = self
            .by_pair
            .keys()
            .map(|&(i, l)| ((i, l), self.pooled_value(i, l, b)))
            .collect();
        self.cuts.retain(|c| c.value(b) >= best[&(c.i, c.l)] - tol);
        self.reindex();
    }

    fn reindex(&mut self) {
        self.by_pair.clear();
        for (idx, c) in self.cuts.iter().enumerate() {
            self.by_pair.entry((c.i, c.l)).or_default().push(idx);
        }
    }

    /// Drops every cut of pair `(i, l)`.
    pub fn remove_pair(&mut self, i: usize, l: usize) {
        if self.by_pair.remove(&(i, l)).is_none() {
            return;
        }
        self.cuts.retain(|c| (c.i, c.l) != (i, l));
        self.reindex();
    }
}

/// `β_i^l` of one active pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairBeta {
    pub i: usize,
    pub l: usize,
    pub beta_il: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierCertificate {
    pub eta: f64,
    pub beta: f64,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub safety_lower_bound: f64,
    pub b: Vec<f64>,
    pub beta_matrix: Vec<PairBeta>,
    /// Counterexample-guided iterations used by the last synthesis.
    #[serde(default)]
    pub iterations: usize,
}

impl BarrierCertificate {
    /// `η + N β`.
    pub fn objective(&self) -> f64 {
        self.eta + self.horizon as f64 * self.beta
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Re-checks the certificate against `matrix`: `b_i ≤ η` on initial
    /// cells and `E[B] ≤ b_i + β_i^l ≤ b_i + β` on every listed pair.
    pub fn verify(&self, matrix: &TransitionIntervalMatrix, initial_cells: &[usize], tol: f64) -> Result<()> {
        for &i in initial_cells {
            if self.b[i] > self.eta + tol {
                return Err(Error::Soundness(format!(
                    "b[{i}] = {} exceeds η = {}",
                    self.b[i], self.eta
                )));
            }
        }
        for pb in &self.beta_matrix {
            let (lo, hi) = matrix.row(pb.i, pb.l);
            let (wce, _) = worst_case_expectation(&self.b, lo, hi)?;
            if wce > self.b[pb.i] + pb.beta_il + tol || pb.beta_il > self.beta + tol || pb.beta_il < 0.0 {
                return Err(Error::Soundness(format!(
                    "pair ({}, {}): E[B] = {wce}, b = {}, β_il = {}, β = {}",
                    pb.i, pb.l, self.b[pb.i], pb.beta_il, self.beta
                )));
            }
        }
        Ok(())
    }
}

/// Whether every control of a pair with this `β_i^l` is permissible for
/// threshold `p`: `β_i^l ≤ (1 - η - p) / N`.
pub fn admissible(beta_il: f64, eta: f64, p: f64, horizon: usize) -> bool {
    let threshold = (1.0 - eta - p) / horizon as f64;
    beta_il <= threshold + 1e-12 * (1.0 + threshold.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierConfig {
    /// Time horizon `N`.
    pub horizon: usize,
    /// Cap on counterexample-guided iterations.
    pub max_iterations: usize,
    /// Violation tolerance for the exact inner maximum.
    pub tolerance: f64,
    /// Optional upper limit on `η`. Pruning sets it to `1 - p`, the largest
    /// `η` compatible with the target.
    pub eta_cap: Option<f64>,
}

impl BarrierConfig {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            max_iterations: 200,
            tolerance: 1e-9,
            eta_cap: None,
        }
    }
}

/// Active control cells per state cell.
pub type ActiveSet = Vec<Vec<usize>>;

/// Every control cell active in every state cell.
pub fn full_active_set(matrix: &TransitionIntervalMatrix) -> ActiveSet {
    vec![(0..matrix.num_controls()).collect(); matrix.num_states()]
}

fn lp_solution(outcome: std::result::Result<SolveOutcome, microlp::Error>) -> Result<Solution> {
    match outcome {
        Ok(SolveOutcome::Solution(s)) => Ok(s),
        Ok(SolveOutcome::Interrupted(_)) => Err(Error::Numerical("LP solve was interrupted".into())),
        Err(microlp::Error::Infeasible) => Err(Error::Infeasible),
        Err(microlp::Error::Unbounded) => Err(Error::Unbounded),
        Err(e) => Err(Error::Numerical(format!("LP solver: {e}"))),
    }
}

/// Solves the LP over `(b, η, β)` restricted to the pooled cuts of the
/// active pairs; returns `b` and the optimal `η + N β`.
fn solve_relaxation(
    k: usize,
    initial_cells: &[usize],
    pairs: &[(usize, usize)],
    pool: &CounterexamplePool,
    horizon: usize,
    eta_cap: f64,
    flush: f64,
) -> Result<(Vec<f64>, f64)> {
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let bvars: Vec<Variable> = (0..k).map(|_| problem.add_var(0.0, (0.0, 1.0))).collect();
    let eta_var = problem.add_var(1.0, (0.0, eta_cap));
    let beta_var = problem.add_var(horizon as f64, (0.0, 1.0));
    for &i in initial_cells {
        problem.add_constraint([(bvars[i], 1.0), (eta_var, -1.0)], ComparisonOp::Le, 0.0);
    }
    // each cut reads Σ_j p_j b_j + p_u ≤ b_i + β
    let mut coeff = vec![0.0; k];
    for &(i, l) in pairs {
        for &cid in &pool.by_pair[&(i, l)] {
            let cut = &pool.cuts[cid];
            for &(j, pj) in &cut.mass {
                coeff[j] += pj;
            }
            coeff[cut.i] -= 1.0;
            let mut expr = LinearExpr::empty();
            let touched = cut.mass.iter().map(|&(j, _)| j).chain(std::iter::once(cut.i));
            for j in touched {
                let v = std::mem::take(&mut coeff[j]);
                if v.abs() >= flush {
                    expr.add(bvars[j], v);
                }
            }
            expr.add(beta_var, -1.0);
            let rhs = if cut.unsafe_mass.abs() < flush {
                0.0
            } else {
                -cut.unsafe_mass
            };
            problem.add_constraint(expr, ComparisonOp::Le, rhs);
        }
    }
    let solution = lp_solution(problem.solve())?;
    let b = bvars.iter().map(|&v| solution.var_value(v).clamp(0.0, 1.0)).collect();
    let objective = solution.var_value(eta_var) + horizon as f64 * solution.var_value(beta_var);
    Ok((b, objective))
}

/// Synthesises a barrier certificate minimising `η + N β` over the active
/// pairs. The pool is reused and extended, so callers can warm start.
pub fn synthesize_barrier(
    matrix: &TransitionIntervalMatrix,
    active: &ActiveSet,
    initial_cells: &[usize],
    config: &BarrierConfig,
    pool: &mut CounterexamplePool,
) -> Result<BarrierCertificate> {
    let k = matrix.num_states();
    if active.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: active.len(),
        });
    }
    if config.horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    if let Some(i) = active.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("state cell {i} has no active control")));
    }
    if let Some(&i) = initial_cells.iter().find(|&&i| i >= k) {
        return Err(Error::invalid(format!("initial cell {i} out of range")));
    }
    let pairs = active_pairs(active);
    if let Some(&(i, l)) = pairs.iter().find(|&&(_, l)| l >= matrix.num_controls()) {
        return Err(Error::invalid(format!("control cell {l} of state {i} out of range")));
    }

    let eta_cap = config.eta_cap.unwrap_or(1.0);
    if !(0.0..=1.0).contains(&eta_cap) {
        return Err(Error::invalid("η cap must lie in [0, 1]"));
    }

    // seed pairs without cuts with their witness at b = 0
    let zero = vec![0.0; k];
    for &(i, l) in &pairs {
        if pool.cuts_for(i, l) == 0 {
            let (lo, hi) = matrix.row(i, l);
            let (_, p) = worst_case_expectation(&zero, lo, hi)?;
            pool.insert(Cut::from_witness(i, l, &p));
        }
    }

    let violated = |b: &[f64], pool: &CounterexamplePool| -> Result<Vec<Cut>> {
        let cuts: Vec<Option<Cut>> = pairs
            .par_iter()
            .map(|&(i, l)| -> Result<Option<Cut>> {
                let (lo, hi) = matrix.row(i, l);
                let (wce, p) = worst_case_expectation(b, lo, hi)?;
                if wce > pool.pooled_value(i, l, b) + config.tolerance {
                    let cut = Cut::from_witness(i, l, &p);
                    Ok((!pool.contains(&cut)).then_some(cut))
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        Ok(cuts.into_iter().flatten().collect())
    };

    let mut iterations = 0;
    let mut last_b = zero;
    let mut retries = 0;
    let b = loop {
        iterations += 1;
        if iterations > config.max_iterations {
            return Err(Error::NoConvergence(iterations - 1));
        }
        let flush = if retries == 0 {
            COEFF_FLUSH
        } else {
            RETRY_FLUSH[retries - 1]
        };
        let (b, objective) = match solve_relaxation(k, initial_cells, &pairs, pool, config.horizon, eta_cap, flush) {
            Ok(solved) => solved,
            // near-parallel cuts can make the basis singular; keep only the
            // binding cuts, drop more tiny coefficients and solve again. The
            // LP stays a relaxation and `certify` evaluates the result exactly.
            Err(Error::Numerical(msg)) if retries < RETRY_FLUSH.len() => {
                retries += 1;
                pool.retain_tight(&last_b, 0.0);
                log::warn!("barrier LP failed ({msg}); retrying with {} binding cuts", pool.len());
                continue;
            }
            Err(e) => return Err(e),
        };
        last_b.clone_from(&b);
        let new_cuts = violated(&b, pool)?;
        log::debug!(
            "barrier iteration {iterations}: LP objective {objective:.6e}, {} new cuts, pool {}",
            new_cuts.len(),
            pool.len()
        );
        if new_cuts.is_empty() {
            break b;
        }
        for cut in new_cuts {
            pool.insert(cut);
        }
    };

    let mut cert = certify(matrix, &pairs, initial_cells, config.horizon, b)?;
    cert.iterations = iterations;
    Ok(cert)
}

/// Lists the active `(state, control)` pairs in index order.
pub fn active_pairs(active: &ActiveSet) -> Vec<(usize, usize)> {
    active
        .iter()
        .enumerate()
        .flat_map(|(i, ls)| ls.iter().map(move |&l| (i, l)))
        .collect()
}

/// Evaluates a fixed barrier `b` exactly over the given pairs: `η` is the
/// largest initial value and every `β_i^l` is the tightest admissible one.
pub fn certify(
    matrix: &TransitionIntervalMatrix,
    pairs: &[(usize, usize)],
    initial_cells: &[usize],
    horizon: usize,
    b: Vec<f64>,
) -> Result<BarrierCertificate> {
    let beta_matrix: Vec<PairBeta> = pairs
        .par_iter()
        .map(|&(i, l)| {
            let (lo, hi) = matrix.row(i, l);
            let (wce, _) = worst_case_expectation(&b, lo, hi)?;
            Ok(PairBeta {
                i,
                l,
                beta_il: (wce - b[i]).max(0.0),
            })
        })
        .collect::<Result<_>>()?;
    let eta = initial_cells.iter().map(|&i| b[i]).fold(0.0, f64::max);
    let beta = beta_matrix.iter().map(|p| p.beta_il).fold(0.0, f64::max);
    let bound = 1.0 - (eta + horizon as f64 * beta);
    Ok(BarrierCertificate {
        eta,
        beta,
        horizon,
        safety_lower_bound: bound.clamp(0.0, 1.0),
        b,
        beta_matrix,
        iterations: 0,
    })
}

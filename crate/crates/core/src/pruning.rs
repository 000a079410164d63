//! Iterative pruning of state-control pairs until the barrier certificate
//! reaches the required safety probability.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::{
    active_pairs, admissible, certify, full_active_set, synthesize_barrier, worst_case_expectation, ActiveSet,
    BarrierCertificate, BarrierConfig, CounterexamplePool, PairBeta,
};
use crate::error::{Error, Result};
use crate::geometry::StateControlPartition;
use crate::transition::TransitionIntervalMatrix;

/// Cuts further than this below their pair's binding cut are dropped from
/// the pool between pruning iterations.
const POOL_SLACK: f64 = 1e-9;
/// Relative band below the largest `β_i^l` within which pairs count as tied.
const NEAR_MAX: f64 = 1e-3;

/// One pruning step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub iteration: usize,
    pub i: usize,
    pub l: usize,
    pub beta_il: f64,
    /// `η + Nβ` of the certificate that prompted this removal.
    pub objective: f64,
}

/// Retained control cells per state cell with the certificate proving the
/// safety threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermissibleStrategySet {
    pub p: f64,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub retained: BTreeMap<usize, Vec<usize>>,
    pub removal_log: Vec<Removal>,
    pub certificate: BarrierCertificate,
    pub retained_fraction: f64,
    /// Retained pairs passing the per-pair admissibility test.
    pub admissible_pairs: usize,
}

impl PermissibleStrategySet {
    pub fn active_set(&self) -> ActiveSet {
        self.retained.values().cloned().collect()
    }

    pub fn retained_pairs(&self) -> usize {
        self.retained.values().map(Vec::len).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PruningOutcome {
    Permissible(PermissibleStrategySet),
    /// Some state cell lost its last control cell.
    Infeasible {
        removal_log: Vec<Removal>,
        cell: usize,
    },
}

impl PruningOutcome {
    pub fn permissible(self) -> Option<PermissibleStrategySet> {
        match self {
            PruningOutcome::Permissible(s) => Some(s),
            PruningOutcome::Infeasible { .. } => None,
        }
    }

    pub fn removal_log(&self) -> &[Removal] {
        match self {
            PruningOutcome::Permissible(s) => &s.removal_log,
            PruningOutcome::Infeasible { removal_log, .. } => removal_log,
        }
    }
}

/// Removes the pair with the largest `β_i^l` until `1 - (η + N β) ≥ p`.
///
/// The barrier LP is solved with `η ≤ 1 - p`: larger `η` can never meet the
/// target, and without the cap the optimum often sits at `η = 1`, `β = 0`,
/// where `β_i^l` says nothing about which pair is to blame.
///
/// Pairs within a relative `1e-3` of the largest `β_i^l` count as tied. Along
/// a chain of cells leading out of the safe set the LP spreads `β` evenly, so
/// the entry and the exit of the chain sit at nearly the same `β_i^l`, and an
/// exact comparison lets interval noise pick the entry. Ties go to the pair
/// with the largest worst-case one-step exit probability, then to the lowest
/// `(i, l)`.
pub fn synthesize_permissible_set(
    matrix: &TransitionIntervalMatrix,
    initial_cells: &[usize],
    barrier: &BarrierConfig,
    p: f64,
) -> Result<PruningOutcome> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid("safety threshold p must lie in (0, 1)"));
    }
    let horizon = barrier.horizon as f64;
    let barrier = &BarrierConfig {
        eta_cap: Some(barrier.eta_cap.map_or(1.0 - p, |c| c.min(1.0 - p))),
        ..*barrier
    };
    let leakage = unsafe_leakage(matrix)?;
    let mut active = full_active_set(matrix);
    let mut pool = CounterexamplePool::new();
    let mut cert = synthesize_barrier(matrix, &active, initial_cells, barrier, &mut pool)?;
    let mut removal_log = Vec::new();
    let mut iteration = 0;
    log::info!("initial certificate: η + Nβ = {:.6e}", cert.objective());

    while 1.0 - (cert.eta + horizon * cert.beta) < p {
        iteration += 1;
        // among pairs near the maximal β_il, prefer the one that can leak the
        // most mass in one step, then the lowest index
        let tol = (NEAR_MAX * cert.beta).max(1e-12);
        let nc = matrix.num_controls();
        let worst = cert
            .beta_matrix
            .iter()
            .filter(|pb| pb.beta_il >= cert.beta - tol)
            .fold(None, |best: Option<PairBeta>, pb| match best {
                Some(b) if leakage[b.i * nc + b.l] >= leakage[pb.i * nc + pb.l] => Some(b),
                _ => Some(*pb),
            })
            .ok_or_else(|| Error::Numerical("certificate has no active pair".into()))?;
        let removal = Removal {
            iteration,
            i: worst.i,
            l: worst.l,
            beta_il: worst.beta_il,
            objective: cert.objective(),
        };
        log::info!(
            "iteration {iteration}: removing (i={}, l={}) with β_il = {:.6e}",
            removal.i,
            removal.l,
            removal.beta_il
        );
        removal_log.push(removal);
        active[worst.i].retain(|&l| l != worst.l);
        if active[worst.i].is_empty() {
            log::warn!("state cell {} lost its last control cell", worst.i);
            return Ok(PruningOutcome::Infeasible {
                removal_log,
                cell: worst.i,
            });
        }
        pool.remove_pair(worst.i, worst.l);
        pool.retain_tight(&cert.b, POOL_SLACK);
        let previous = cert.objective();
        let fresh = synthesize_barrier(matrix, &active, initial_cells, barrier, &mut pool)?;
        // the previous barrier stays valid on the smaller set; keep it when
        // the LP returns a slightly worse vertex
        if fresh.objective() > previous {
            let pairs = active_pairs(&active);
            let iterations = fresh.iterations;
            cert = certify(
                matrix,
                &pairs,
                initial_cells,
                barrier.horizon,
                std::mem::take(&mut cert.b),
            )?;
            cert.iterations = iterations;
        } else {
            cert = fresh;
        }
        log::info!("iteration {iteration}: η + Nβ = {:.6e}", cert.objective());
        let slack = 1e-7 * (1.0 + horizon);
        if cert.objective() > previous + slack {
            return Err(Error::Soundness(format!(
                "η + Nβ increased from {previous} to {} after a removal",
                cert.objective()
            )));
        }
    }

    let total = (matrix.num_states() * matrix.num_controls()) as f64;
    let retained: BTreeMap<usize, Vec<usize>> = active.into_iter().enumerate().collect();
    let kept: usize = retained.values().map(Vec::len).sum();
    let admissible_pairs = cert
        .beta_matrix
        .iter()
        .filter(|pb| admissible(pb.beta_il, cert.eta, p, barrier.horizon))
        .count();
    Ok(PruningOutcome::Permissible(PermissibleStrategySet {
        p,
        horizon: barrier.horizon,
        retained,
        removal_log,
        certificate: cert,
        retained_fraction: kept as f64 / total,
        admissible_pairs,
    }))
}

/// Worst-case one-step probability of leaving the safe set, per pair.
fn unsafe_leakage(matrix: &TransitionIntervalMatrix) -> Result<Vec<f64>> {
    let zero = vec![0.0; matrix.num_states()];
    (0..matrix.num_states() * matrix.num_controls())
        .into_par_iter()
        .map(|idx| {
            let (lo, hi) = matrix.row(idx / matrix.num_controls(), idx % matrix.num_controls());
            Ok(worst_case_expectation(&zero, lo, hi)?.0)
        })
        .collect()
}

/// Result of pruning with a single state cell as the initial set.
#[derive(Debug, Clone, PartialEq)]
pub struct CellInvariance {
    pub cell: usize,
    pub outcome: PruningOutcome,
}

impl CellInvariance {
    pub fn invariant(&self) -> bool {
        matches!(self.outcome, PruningOutcome::Permissible(_))
    }
}

/// Runs the pruning with every state cell in turn as the initial set.
pub fn control_invariant_set(
    matrix: &TransitionIntervalMatrix,
    barrier: &BarrierConfig,
    p: f64,
) -> Result<Vec<CellInvariance>> {
    (0..matrix.num_states())
        .into_par_iter()
        .map(|cell| {
            Ok(CellInvariance {
                cell,
                outcome: synthesize_permissible_set(matrix, &[cell], barrier, p)?,
            })
        })
        .collect()
}

/// Draws a control for state `x`: a retained control cell of `x`'s cell
/// uniformly, then a point uniformly inside it.
pub fn strategy_sample<R: Rng + ?Sized>(
    set: &PermissibleStrategySet,
    partition: &StateControlPartition,
    x: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let i = partition.state_grid().locate(x)?.ok_or(Error::OutOfDomain)?;
    let cells = set
        .retained
        .get(&i)
        .filter(|c| !c.is_empty())
        .ok_or(Error::OutOfDomain)?;
    let l = cells[rng.random_range(0..cells.len())];
    Ok(crate::rng::uniform_in(&partition.control_cell(l), rng))
}

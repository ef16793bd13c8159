//! Exact Bellman optimality operator, value iteration and greedy policies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::ValidatedMdp;
use crate::stats::sup_abs;

/// Real-valued function on `S x A`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn constant(n_states: usize, n_actions: usize, value: f64) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![value; n_states * n_actions],
        }
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::constant(n_states, n_actions, 0.0)
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", n_states * n_actions),
                got: format!("{}", values.len()),
            });
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn for_mdp(mdp: &ValidatedMdp, value: f64) -> Self {
        Self::constant(mdp.n_states(), mdp.n_actions(), value)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// `max_b q(s, b)`.
    pub fn max_row(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Lowest-index maximizer of `q(s, .)`.
    pub fn argmax_row(&self, s: usize) -> usize {
        argmax(self.row(s))
    }

    /// `max_x |q(x)|`.
    pub fn sup_norm(&self) -> f64 {
        sup_abs(&self.values)
    }

    /// `max_x |self(x) - other(x)|`.
    pub fn sup_dist(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `max_{x,y} |q(x) - q(y)|`.
    pub fn range(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if self.values.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_dims(&self, mdp: &ValidatedMdp) -> Result<()> {
        if self.n_states != mdp.n_states() || self.n_actions != mdp.n_actions() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", mdp.n_states(), mdp.n_actions()),
                got: format!("{}x{}", self.n_states, self.n_actions),
            });
        }
        Ok(())
    }
}

/// Lowest index of the maximum; NaNs are never selected over numbers.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] || (xs[best].is_nan() && !x.is_nan()) {
            best = i;
        }
    }
    best
}

/// Per-state action distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub probs: Vec<Vec<f64>>,
}

impl PolicyTable {
    /// Index of the action with probability one, if the row is one-hot.
    pub fn deterministic_action(&self, s: usize) -> Option<usize> {
        let row = &self.probs[s];
        row.iter().position(|&p| p == 1.0)
    }
}

/// `(T q)(s, a) = E[r(s,a)] + gamma * sum_{s'} p(s'|s,a) max_b q(s', b)`.
pub fn bellman_apply(mdp: &ValidatedMdp, q: &QTable) -> Result<QTable> {
    q.check_dims(mdp)?;
    let maxes: Vec<f64> = (0..q.n_states).map(|s| q.max_row(s)).collect();
    let mut out = QTable::for_mdp(mdp, 0.0);
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            out.set(s, a, backup(mdp, s, a, &maxes));
        }
    }
    Ok(out)
}

/// One cell of the Bellman operator given precomputed `max_b q(s', b)`.
pub(crate) fn backup(mdp: &ValidatedMdp, s: usize, a: usize, maxes: &[f64]) -> f64 {
    let boot: f64 = mdp
        .trans(s, a)
        .iter()
        .zip(maxes)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, m)| p * m)
        .sum();
    mdp.reward_mean(s, a) + mdp.gamma() * boot
}

/// `(T q)(s, a)` for a single cell, computing the needed row maxima.
pub fn bellman_cell(mdp: &ValidatedMdp, q: &QTable, s: usize, a: usize) -> f64 {
    let boot: f64 = mdp
        .trans(s, a)
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(s2, p)| p * q.max_row(s2))
        .sum();
    mdp.reward_mean(s, a) + mdp.gamma() * boot
}

/// Iteration cap for [`value_iterate`].
pub const VALUE_ITERATION_CAP: u64 = 10_000_000;

/// Fixed-point iteration from zero. Stops once
/// `||Tq - q|| <= tol (1 - gamma) / (2 gamma)`, which guarantees
/// `||q - Q*|| <= tol` for the returned table.
pub fn value_iterate(mdp: &ValidatedMdp, tol: f64) -> Result<(QTable, u64)> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    let gamma = mdp.gamma();
    let stop = tol * (1.0 - gamma) / (2.0 * gamma);
    let mut q = QTable::for_mdp(mdp, 0.0);
    for it in 0..VALUE_ITERATION_CAP {
        let next = bellman_apply(mdp, &q)?;
        let resid = next.sup_dist(&q);
        if resid <= stop {
            // `q` satisfies the stopping rule; `next` is at least as close.
            return Ok((next, it + 1));
        }
        q = next;
    }
    Err(Error::NonConvergence(VALUE_ITERATION_CAP))
}

/// One-hot greedy policy, ties to the lowest action index.
pub fn greedy_policy(q: &QTable) -> PolicyTable {
    let probs = (0..q.n_states)
        .map(|s| {
            let mut row = vec![0.0; q.n_actions];
            row[q.argmax_row(s)] = 1.0;
            row
        })
        .collect();
    PolicyTable { probs }
}

/// `(||T q1 - T q2||, gamma ||q1 - q2||)`.
pub fn contraction_check(mdp: &ValidatedMdp, q1: &QTable, q2: &QTable) -> Result<(f64, f64)> {
    let t1 = bellman_apply(mdp, q1)?;
    let t2 = bellman_apply(mdp, q2)?;
    Ok((t1.sup_dist(&t2), mdp.gamma() * q1.sup_dist(q2)))
}

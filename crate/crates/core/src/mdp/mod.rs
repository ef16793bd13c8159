//! Finite MDPs with unbounded (finite second moment) rewards.
//!
//! Rewards and next states are drawn independently given `(s, a)`, and the
//! reward law does not change over time.

mod dist;
mod file;
mod generate;

use std::sync::Arc;

use rand::Rng;

pub use dist::{reward_moments, RewardDist};
pub use file::{CellSpec, MdpFile};
pub use generate::{generate_mdp, RewardFamily};

use crate::error::{Error, Result};
use dist::RewardSampler;

/// Tolerance on transition row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Unchecked description of a finite MDP. Cells are stored row-major,
/// index `s * n_actions + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub trans: Vec<Vec<f64>>,
    pub rewards: Vec<RewardDist>,
    pub gamma: f64,
}

impl MdpSpec {
    pub fn cell(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }
}

/// One sampled step `(r_t, s_{t+1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub reward: f64,
    pub next_state: usize,
}

/// An MDP whose invariants have been checked. Cheap to clone and safe to
/// share across threads.
#[derive(Debug, Clone)]
pub struct ValidatedMdp {
    inner: Arc<Inner>,
}

#[derive(Debug)]
struct Inner {
    spec: MdpSpec,
    cumulative: Vec<Vec<f64>>,
    samplers: Vec<RewardSampler>,
    means: Vec<f64>,
}

/// Check every invariant of `spec` and seal it.
pub fn validate_mdp(spec: MdpSpec) -> Result<ValidatedMdp> {
    let MdpSpec {
        n_states,
        n_actions,
        ref trans,
        ref rewards,
        gamma,
    } = spec;
    if n_states == 0 || n_actions == 0 {
        return Err(Error::DimensionMismatch {
            expected: "at least one state and one action".into(),
            got: format!("{n_states} states, {n_actions} actions"),
        });
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::BadGamma(gamma));
    }
    let n_cells = n_states * n_actions;
    if trans.len() != n_cells || rewards.len() != n_cells {
        return Err(Error::DimensionMismatch {
            expected: format!("{n_cells} transition rows and reward cells"),
            got: format!("{} rows, {} rewards", trans.len(), rewards.len()),
        });
    }
    let mut cumulative = Vec::with_capacity(n_cells);
    for (cell, row) in trans.iter().enumerate() {
        let (state, action) = (cell / n_actions, cell % n_actions);
        if row.len() != n_states {
            return Err(Error::DimensionMismatch {
                expected: format!("row of length {n_states} at (s={state}, a={action})"),
                got: format!("length {}", row.len()),
            });
        }
        let sum: f64 = row.iter().sum();
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::NonStochasticRow { state, action, sum });
        }
        let mut acc = 0.0;
        cumulative.push(
            row.iter()
                .map(|p| {
                    acc += p;
                    acc
                })
                .collect(),
        );
    }
    let samplers = rewards.iter().map(RewardDist::sampler).collect::<Result<Vec<_>>>()?;
    let means = rewards.iter().map(RewardDist::mean).collect();
    Ok(ValidatedMdp {
        inner: Arc::new(Inner {
            spec,
            cumulative,
            samplers,
            means,
        }),
    })
}

/// Index drawn from a cumulative probability row with one uniform variate.
pub(crate) fn sample_cumulative<R: Rng + ?Sized>(cumulative: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    cumulative.iter().position(|&c| u < c).unwrap_or_else(|| {
        // Round-off left the last cumulative value just below u; pick the
        // last state with positive mass.
        let mut last = cumulative.len() - 1;
        while last > 0 && cumulative[last] == cumulative[last - 1] {
            last -= 1;
        }
        last
    })
}

impl ValidatedMdp {
    pub fn spec(&self) -> &MdpSpec {
        &self.inner.spec
    }

    pub fn n_states(&self) -> usize {
        self.inner.spec.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.inner.spec.n_actions
    }

    pub fn n_cells(&self) -> usize {
        self.n_states() * self.n_actions()
    }

    pub fn gamma(&self) -> f64 {
        self.inner.spec.gamma
    }

    pub fn cell(&self, s: usize, a: usize) -> usize {
        s * self.n_actions() + a
    }

    pub fn trans(&self, s: usize, a: usize) -> &[f64] {
        &self.inner.spec.trans[self.cell(s, a)]
    }

    pub fn reward(&self, s: usize, a: usize) -> &RewardDist {
        &self.inner.spec.rewards[self.cell(s, a)]
    }

    /// Closed-form `E[r(s, a)]`.
    pub fn reward_mean(&self, s: usize, a: usize) -> f64 {
        self.inner.means[self.cell(s, a)]
    }

    fn check_index(&self, s: usize, a: usize) -> Result<()> {
        if s >= self.n_states() {
            return Err(Error::IndexOutOfRange {
                what: "state",
                index: s,
                bound: self.n_states(),
            });
        }
        if a >= self.n_actions() {
            return Err(Error::IndexOutOfRange {
                what: "action",
                index: a,
                bound: self.n_actions(),
            });
        }
        Ok(())
    }

    /// Draw `(r, s')` from `p(r, s' | s, a)`. The reward is drawn first, then
    /// the next state, each from its own marginal.
    pub fn sample_transition<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> Result<Transition> {
        self.check_index(s, a)?;
        Ok(self.sample_unchecked(s, a, rng))
    }

    pub(crate) fn sample_unchecked<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> Transition {
        let cell = self.cell(s, a);
        let reward = self.inner.samplers[cell].sample(rng);
        let next_state = sample_cumulative(&self.inner.cumulative[cell], rng);
        Transition { reward, next_state }
    }

    /// States where every action stays put with probability one and pays a
    /// point mass at zero.
    pub fn absorbing_sinks(&self) -> Vec<bool> {
        (0..self.n_states())
            .map(|s| {
                (0..self.n_actions()).all(|a| {
                    self.trans(s, a)[s] == 1.0
                        && matches!(self.reward(s, a), RewardDist::PointMass { value } if *value == 0.0)
                })
            })
            .collect()
    }
}

/// `C_R := max_{(s,a)} E[r(s,a)^2]`.
pub fn compute_cr(mdp: &ValidatedMdp) -> f64 {
    mdp.spec().rewards.iter().map(|d| d.moments().1).fold(0.0, f64::max)
}

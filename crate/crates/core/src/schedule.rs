//! Robbins-Monro step-size families.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::CompensatedSum;

/// Step-size family `c`. `VisitHarmonic` is indexed by the per-cell visit
/// count `k`, `GlobalPolynomial` by the global clock `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    /// `c0 / (k + 1)`.
    VisitHarmonic { c0: f64 },
    /// `c0 / (t + 1)^p`.
    GlobalPolynomial { c0: f64, p: f64 },
    /// `c0` forever. Violates square summability; kept as a control.
    Constant { c0: f64 },
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::VisitHarmonic { c0: 1.0 }
    }
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        let c0 = match *self {
            StepSchedule::VisitHarmonic { c0 } | StepSchedule::Constant { c0 } => c0,
            StepSchedule::GlobalPolynomial { c0, p } => {
                if !(p.is_finite() && p > 0.0) {
                    return Err(Error::BadSchedule(format!("exponent must be positive, got {p}")));
                }
                c0
            }
        };
        if !(c0 > 0.0 && c0 <= 1.0) {
            return Err(Error::BadSchedule(format!("c0 must lie in (0, 1], got {c0}")));
        }
        Ok(())
    }

    /// Step size at global step `t` for a cell visited `k` times before.
    pub fn step_size(&self, t: u64, k: u64) -> f64 {
        match *self {
            StepSchedule::VisitHarmonic { c0 } => c0 / (k as f64 + 1.0),
            StepSchedule::GlobalPolynomial { c0, p } => c0 / (t as f64 + 1.0).powf(p),
            StepSchedule::Constant { c0 } => c0,
        }
    }

    /// Like [`Self::step_size`] but with a real-valued visit mass, used by the
    /// ripple learner.
    pub fn step_size_mass(&self, t: u64, mass: f64) -> f64 {
        match *self {
            StepSchedule::VisitHarmonic { c0 } => c0 / (mass + 1.0),
            _ => self.step_size(t, 0),
        }
    }

    /// `sum_n c_n^2` along one cell's update subsequence, or `None` when it
    /// diverges. Upper-bounds `sum_t b_t^2` for the steps applied to any cell.
    pub fn square_sum(&self) -> Option<f64> {
        match *self {
            StepSchedule::VisitHarmonic { c0 } => Some(c0 * c0 * std::f64::consts::PI.powi(2) / 6.0),
            StepSchedule::GlobalPolynomial { c0, p } if 2.0 * p > 1.0 => Some(c0 * c0 * zeta(2.0 * p)),
            _ => None,
        }
    }

    /// Analytic Robbins-Monro verdict for the family.
    pub fn analytic_verdict(&self) -> RmVerdict {
        match *self {
            StepSchedule::VisitHarmonic { .. } => RmVerdict::Satisfies,
            StepSchedule::GlobalPolynomial { p, .. } if p > 1.0 => RmVerdict::ViolatesDivergence,
            StepSchedule::GlobalPolynomial { p, .. } if p <= 0.5 => RmVerdict::ViolatesSquareSummability,
            StepSchedule::GlobalPolynomial { .. } => RmVerdict::Satisfies,
            StepSchedule::Constant { .. } => RmVerdict::ViolatesSquareSummability,
        }
    }
}

/// Riemann zeta for `s > 1`: direct sum plus an Euler-Maclaurin tail.
pub fn zeta(s: f64) -> f64 {
    assert!(s > 1.0, "zeta diverges for s <= 1");
    let n = 200.0_f64;
    let mut acc = CompensatedSum::new();
    for k in 1..200 {
        acc.add((k as f64).powf(-s));
    }
    acc.add(n.powf(1.0 - s) / (s - 1.0));
    acc.add(0.5 * n.powf(-s));
    acc.add(s * n.powf(-s - 1.0) / 12.0);
    acc.add(-s * (s + 1.0) * (s + 2.0) * n.powf(-s - 3.0) / 720.0);
    acc.value()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RmVerdict {
    Satisfies,
    ViolatesDivergence,
    ViolatesSquareSummability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub horizon: u64,
    /// `sum_{n < horizon} c_n`.
    pub partial_sum: f64,
    /// `sum_{n < horizon} c_n^2`.
    pub partial_sum_sq: f64,
    /// Increment of the sum over the last decade divided by the increment
    /// over the decade before it.
    pub decade_ratio: f64,
    pub decade_ratio_sq: f64,
    pub verdict: RmVerdict,
    pub analytic: RmVerdict,
}

/// Ratio above which a decade-increment sequence is read as non-summable.
/// A tail `n^{-q}` gives a ratio of `10^{1-q}`, so this flags `q < 1.046`.
const DECADE_RATIO_DIVERGENT: f64 = 0.9;

/// Finite-horizon Robbins-Monro check along one cell's update sequence
/// (`t = k = n`). A series is read as divergent when its increment over
/// `[H/10, H)` is at least 0.9 times its increment over `[H/100, H/10)`.
pub fn validate_schedule(schedule: &StepSchedule, horizon: u64) -> Result<ScheduleReport> {
    schedule.validate()?;
    if horizon < 1000 {
        return Err(Error::InvalidConfig(format!(
            "horizon must be at least 1000, got {horizon}"
        )));
    }
    let (d1, d2) = (horizon / 100, horizon / 10);
    let mut sums = [CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new()];
    let mut sq = [CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new()];
    for n in 0..horizon {
        let c = schedule.step_size(n, n);
        let bucket = if n < d1 {
            0
        } else if n < d2 {
            1
        } else {
            2
        };
        sums[bucket].add(c);
        sq[bucket].add(c * c);
    }
    let total = |xs: &[CompensatedSum; 3]| xs.iter().map(|s| s.value()).sum::<f64>();
    let ratio = |xs: &[CompensatedSum; 3]| xs[2].value() / xs[1].value();
    let decade_ratio = ratio(&sums);
    let decade_ratio_sq = ratio(&sq);
    let verdict = if decade_ratio < DECADE_RATIO_DIVERGENT {
        RmVerdict::ViolatesDivergence
    } else if decade_ratio_sq >= DECADE_RATIO_DIVERGENT {
        RmVerdict::ViolatesSquareSummability
    } else {
        RmVerdict::Satisfies
    };
    Ok(ScheduleReport {
        horizon,
        partial_sum: total(&sums),
        partial_sum_sq: total(&sq),
        decade_ratio,
        decade_ratio_sq,
        verdict,
        analytic: schedule.analytic_verdict(),
    })
}

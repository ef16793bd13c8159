//! Deterministic recurrences behind the stochastic-approximation argument:
//!
//! * `x_{n+1} = (1 - a_n) x_n + gamma a_n |x_n|`            (tends to 0)
//! * `x_{n+1} = (1 - a_n) x_n + gamma a_n |x_n + eps|`      (tends to eps gamma / (1 - gamma))
//! * `x_{n+1} = (1 - a_n) x_n + gamma a_n |x_n + c_n|`, `c_n -> 0` (tends to 0)
//!
//! Each is iterated literally and compared with an independent closed form
//! evaluated as a compensated sum of logarithms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::StepSchedule;
use crate::stats::CompensatedSum;

/// Nonnegative perturbation `c_n = scale / (n + 1)^power`. `power = 0` gives
/// a constant sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub scale: f64,
    pub power: f64,
}

impl Perturbation {
    pub const ZERO: Perturbation = Perturbation { scale: 0.0, power: 1.0 };

    pub fn at(&self, n: u64) -> f64 {
        if self.power == 0.0 {
            self.scale
        } else {
            self.scale / (n as f64 + 1.0).powf(self.power)
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.scale >= 0.0 && self.scale.is_finite() && self.power >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "perturbation needs scale >= 0 and power >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// One recorded point of a recurrence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecurrencePoint {
    pub n: u64,
    pub x: f64,
    /// Closed-form (or envelope) value at `n`; NaN where none applies.
    pub oracle: f64,
}

impl RecurrencePoint {
    pub fn abs_err(&self) -> f64 {
        (self.x - self.oracle).abs()
    }
}

/// First index after which `|x_n| < eps` held, and whether the iterate
/// climbed back above `eps` later in the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub eps: f64,
    pub first: Option<u64>,
    pub recrossed: bool,
}

impl Crossing {
    pub fn achieved(&self) -> bool {
        self.first.is_some() && !self.recrossed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceResult {
    pub series: Vec<RecurrencePoint>,
    /// `x_N`.
    pub limit_estimate: f64,
    /// The value the recurrence should approach.
    pub target: f64,
    /// Max over all `n` of `|x_n - oracle_n| / |oracle_n|`, where an oracle
    /// applies.
    pub max_rel_dev: Option<f64>,
    pub crossings: Vec<Crossing>,
    /// `Some(true)` when the comparison process dominated `|x_n|` at every
    /// step after its restart.
    pub envelope_dominates: Option<bool>,
}

impl RecurrenceResult {
    /// First crossing below `eps`, if it was tracked and achieved.
    pub fn n_at_tolerance(&self, eps: f64) -> Option<u64> {
        self.crossings.iter().find(|c| c.eps == eps).and_then(|c| c.first)
    }
}

/// Tolerance ladder reported by [`recurrence_lemma5`].
pub const TOLERANCE_LADDER: [f64; 3] = [0.1, 0.01, 0.001];

fn check_inputs(gamma: f64, schedule: &StepSchedule) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::BadGamma(gamma));
    }
    schedule.validate()
}

/// Step size `a_n`, with the schedule indexed by `n` on both clocks.
fn a_at(schedule: &StepSchedule, n: u64) -> f64 {
    schedule.step_size(n, n)
}

/// Track a tolerance crossing over a full series.
struct CrossingTracker {
    eps: f64,
    first: Option<u64>,
    recrossed: bool,
}

impl CrossingTracker {
    fn new(eps: f64) -> Self {
        Self {
            eps,
            first: None,
            recrossed: false,
        }
    }

    fn push(&mut self, n: u64, x: f64) {
        if x.abs() < self.eps {
            if self.first.is_none() {
                self.first = Some(n);
            }
        } else if self.first.is_some() {
            self.recrossed = true;
        }
    }

    fn finish(self) -> Crossing {
        Crossing {
            eps: self.eps,
            first: self.first,
            recrossed: self.recrossed,
        }
    }
}

/// `sign * exp(log_abs)` bookkeeping for a running product.
struct LogProduct {
    log_abs: CompensatedSum,
    negative: bool,
    zero: bool,
}

impl LogProduct {
    fn new(start: f64) -> Self {
        let mut log_abs = CompensatedSum::new();
        let zero = start == 0.0;
        if !zero {
            log_abs.add(start.abs().ln());
        }
        Self {
            log_abs,
            negative: start < 0.0,
            zero,
        }
    }

    fn mul(&mut self, factor: f64) {
        if factor == 0.0 {
            self.zero = true;
        } else {
            // ln|factor| via ln_1p keeps factors close to 1 exact.
            self.log_abs.add((factor - 1.0).ln_1p_abs());
            self.negative ^= factor < 0.0;
        }
    }

    fn value(&self) -> f64 {
        if self.zero {
            return 0.0;
        }
        let m = self.log_abs.value().exp();
        if self.negative {
            -m
        } else {
            m
        }
    }
}

trait Ln1pAbs {
    fn ln_1p_abs(self) -> f64;
}

impl Ln1pAbs for f64 {
    /// `ln|1 + self|`.
    fn ln_1p_abs(self) -> f64 {
        if self > -1.0 {
            self.ln_1p()
        } else {
            (1.0 + self).abs().ln()
        }
    }
}

fn record_at(n: u64, total: u64, stride: u64) -> bool {
    n.is_multiple_of(stride) || n == total
}

/// Iterate `x_{n+1} = (1 - a_n) x_n + gamma a_n |x_n|` for `N` steps.
///
/// The oracle is the piecewise product `x_0 prod (1 - a_i (1 -+ gamma))`,
/// choosing `1 - gamma` while the oracle is nonnegative and `1 + gamma`
/// while it is negative; for `x_0 >= 0` it is the plain product
/// `x_0 prod (1 - b_i)` with `b_i = a_i - gamma a_i`.
pub fn recurrence_lemma3(
    x0: f64,
    gamma: f64,
    schedule: &StepSchedule,
    n_steps: u64,
    stride: u64,
) -> Result<RecurrenceResult> {
    check_inputs(gamma, schedule)?;
    let stride = stride.max(1);
    let mut x = x0;
    let mut oracle = LogProduct::new(x0);
    let mut series = vec![RecurrencePoint { n: 0, x, oracle: x0 }];
    let mut max_rel = 0.0_f64;
    for n in 0..n_steps {
        let a = a_at(schedule, n);
        let o = oracle.value();
        x = (1.0 - a) * x + gamma * a * x.abs();
        let sign = if o >= 0.0 { 1.0 - gamma } else { 1.0 + gamma };
        oracle.mul(1.0 - a * sign);
        let o = oracle.value();
        if o != 0.0 {
            max_rel = max_rel.max((x - o).abs() / o.abs());
        } else if x != 0.0 {
            max_rel = f64::INFINITY;
        }
        if record_at(n + 1, n_steps, stride) {
            series.push(RecurrencePoint { n: n + 1, x, oracle: o });
        }
    }
    Ok(RecurrenceResult {
        series,
        limit_estimate: x,
        target: 0.0,
        max_rel_dev: Some(max_rel),
        crossings: Vec::new(),
        envelope_dominates: None,
    })
}

/// Iterate `x_{n+1} = (1 - a_n) x_n + gamma a_n |x_n + eps|`.
///
/// The oracle is `L + (x_0 - L) prod (1 - a_i (1 - gamma))` with
/// `L = eps gamma / (1 - gamma)`, valid while `x_n + eps >= 0`.
pub fn recurrence_lemma4(
    x0: f64,
    gamma: f64,
    eps: f64,
    schedule: &StepSchedule,
    n_steps: u64,
    stride: u64,
) -> Result<RecurrenceResult> {
    check_inputs(gamma, schedule)?;
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidConfig(format!("eps must be nonnegative, got {eps}")));
    }
    let stride = stride.max(1);
    let limit = eps * gamma / (1.0 - gamma);
    let mut x = x0;
    let mut y = LogProduct::new(x0 - limit);
    let mut valid = x0 + eps >= 0.0;
    let mut series = vec![RecurrencePoint { n: 0, x, oracle: x0 }];
    let mut max_rel = 0.0_f64;
    for n in 0..n_steps {
        let a = a_at(schedule, n);
        x = (1.0 - a) * x + gamma * a * (x + eps).abs();
        y.mul(1.0 - a * (1.0 - gamma));
        let yv = y.value();
        valid &= x + eps >= 0.0;
        let o = if valid { limit + yv } else { f64::NAN };
        if valid && o != 0.0 {
            max_rel = max_rel.max((x - o).abs() / o.abs());
        }
        if record_at(n + 1, n_steps, stride) {
            series.push(RecurrencePoint { n: n + 1, x, oracle: o });
        }
    }
    Ok(RecurrenceResult {
        series,
        limit_estimate: x,
        target: limit,
        max_rel_dev: valid.then_some(max_rel),
        crossings: Vec::new(),
        envelope_dominates: None,
    })
}

/// Iterate `x_{n+1} = (1 - a_n) x_n + gamma a_n |x_n + c_n|` without any
/// requirement that `c_n` vanish. The oracle column holds the comparison
/// process `z` restarted at `n = restart` from `|x_restart|` with the
/// constant perturbation `eps1 = sup_{n >= restart} c_n`:
/// `z_{n+1} = (1 - a_n) z_n + gamma a_n |z_n + eps1|`.
pub fn recurrence_perturbed(
    x0: f64,
    gamma: f64,
    schedule: &StepSchedule,
    c: &Perturbation,
    n_steps: u64,
    restart: u64,
    stride: u64,
) -> Result<RecurrenceResult> {
    check_inputs(gamma, schedule)?;
    c.validate()?;
    let stride = stride.max(1);
    // c_n is nonincreasing for every admissible family.
    let eps1 = c.at(restart);
    let mut x = x0;
    let mut z = f64::NAN;
    let mut dominates = true;
    let mut trackers: Vec<CrossingTracker> = TOLERANCE_LADDER.iter().map(|&e| CrossingTracker::new(e)).collect();
    let mut series = Vec::new();
    for n in 0..=n_steps {
        if n == restart {
            z = x.abs();
        }
        if n >= restart {
            dominates &= z + 1e-15 * z.abs().max(1.0) >= x.abs();
        }
        trackers.iter_mut().for_each(|t| t.push(n, x));
        if record_at(n, n_steps, stride) {
            series.push(RecurrencePoint { n, x, oracle: z });
        }
        if n == n_steps {
            break;
        }
        let a = a_at(schedule, n);
        let cn = c.at(n);
        x = (1.0 - a) * x + gamma * a * (x + cn).abs();
        if n >= restart {
            z = (1.0 - a) * z + gamma * a * (z + eps1).abs();
        }
    }
    let limit = if c.power == 0.0 {
        c.scale * gamma / (1.0 - gamma)
    } else {
        0.0
    };
    Ok(RecurrenceResult {
        series,
        limit_estimate: x,
        target: limit,
        max_rel_dev: None,
        crossings: trackers.into_iter().map(CrossingTracker::finish).collect(),
        envelope_dominates: (restart <= n_steps).then_some(dominates),
    })
}

/// Perturbations above this at `n = N` are treated as not vanishing.
pub const VANISHING_TOL: f64 = 1e-3;

/// [`recurrence_perturbed`] for a vanishing perturbation, with the
/// comparison process restarted at `N / 2`. Rejects perturbations that are
/// still at or above [`VANISHING_TOL`] at the end of the horizon.
pub fn recurrence_lemma5(
    x0: f64,
    gamma: f64,
    schedule: &StepSchedule,
    c: &Perturbation,
    n_steps: u64,
    stride: u64,
) -> Result<RecurrenceResult> {
    c.validate()?;
    let last = c.at(n_steps);
    if c.scale > 0.0 && (c.power == 0.0 || last >= VANISHING_TOL) {
        return Err(Error::NonVanishingPerturbation {
            last,
            tol: VANISHING_TOL,
        });
    }
    recurrence_perturbed(x0, gamma, schedule, c, n_steps, n_steps / 2, stride)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HARMONIC: StepSchedule = StepSchedule::VisitHarmonic { c0: 1.0 };

    #[test]
    fn contraction_zero_fixed_point() {
        let r = recurrence_lemma3(0.0, 0.7, &HARMONIC, 1000, 100).unwrap();
        assert!(r.series.iter().all(|p| p.x == 0.0 && p.oracle == 0.0));
    }

    #[test]
    fn contraction_matches_product() {
        let n = 1_000_000;
        let r = recurrence_lemma3(1.0, 0.5, &HARMONIC, n, 1000).unwrap();
        // Direct product prod_{i=1}^{N} (1 - 0.5 / i), accumulated in order.
        let mut p = 1.0_f64;
        for i in 1..=n {
            p *= 1.0 - 0.5 / i as f64;
        }
        assert!(r.max_rel_dev.unwrap() <= 1e-12, "rel dev {:?}", r.max_rel_dev);
        assert!((r.limit_estimate - p).abs() / p < 1e-9);
        assert!(r.limit_estimate < 1e-2);
        // Monotone decrease for x0 > 0.
        assert!(r.series.windows(2).all(|w| w[1].x <= w[0].x));
    }

    #[test]
    fn contraction_negative_start() {
        let r = recurrence_lemma3(-1.0, 0.5, &HARMONIC, 100_000, 1).unwrap();
        // a_0 = 1 flips the sign once: x_1 = -gamma x_0.
        assert_eq!(r.series[1].x, 0.5);
        assert!(r.series.windows(2).all(|w| w[1].x.abs() <= w[0].x.abs()));
        assert!(r.max_rel_dev.unwrap() < 1e-12);
        assert!(r.limit_estimate.abs() < 1e-2);
    }

    #[test]
    fn contraction_summable_schedule_stalls() {
        // a_n = 1/(n+1)^2 has finite sum; the iterate stalls at
        // prod (1 - 0.5/(n+1)^2) = sin(pi z)/(pi z), z = 1/sqrt(2).
        let s = StepSchedule::GlobalPolynomial { c0: 1.0, p: 2.0 };
        let r = recurrence_lemma3(1.0, 0.5, &s, 1_000_000, 1000).unwrap();
        let z = std::f64::consts::FRAC_1_SQRT_2 * std::f64::consts::PI;
        let stall = z.sin() / z;
        assert!(
            (r.limit_estimate - stall).abs() < 1e-6,
            "{} vs {stall}",
            r.limit_estimate
        );
        // Lower bound prod(1 - u) >= exp(-sum u / (1 - u)).
        let bound: f64 = (0..1_000_000u64)
            .map(|n| {
                let u = 0.5 / ((n + 1) as f64).powi(2);
                u / (1.0 - u)
            })
            .sum();
        assert!(r.limit_estimate > (-bound).exp());
    }

    #[test]
    fn offset_limit_and_fixed_point() {
        let s = StepSchedule::GlobalPolynomial { c0: 1.0, p: 0.7 };
        let r = recurrence_lemma4(1.0, 0.5, 0.2, &s, 1_000_000, 1000).unwrap();
        assert!((r.target - 0.2).abs() < 1e-15);
        assert!((r.limit_estimate - 0.2).abs() < 1e-4);
        assert!(r.max_rel_dev.unwrap() < 1e-9);

        let start = 0.2 * 0.5 / 0.5;
        let r = recurrence_lemma4(start, 0.5, 0.2, &HARMONIC, 10_000, 1).unwrap();
        // Constant up to accumulated round-off.
        assert!(r.series.iter().all(|p| (p.x - start).abs() < 1e-13));

        let r = recurrence_lemma4(1.0, 0.5, 0.0, &HARMONIC, 100_000, 100).unwrap();
        let r3 = recurrence_lemma3(1.0, 0.5, &HARMONIC, 100_000, 100).unwrap();
        assert_eq!(r.limit_estimate, r3.limit_estimate);
    }

    #[test]
    fn offset_harmonic_tracks_closed_form_rate() {
        // With a_n = 1/(n+1) the gap y_N = y_0 prod(1 - (1-gamma)/(n+1)),
        // which decays only like N^{-(1-gamma)}.
        let r = recurrence_lemma4(1.0, 0.5, 0.2, &HARMONIC, 1_000_000, 1000).unwrap();
        let mut y = 0.8_f64;
        for i in 1..=1_000_000u64 {
            y *= 1.0 - 0.5 / i as f64;
        }
        assert!(((r.limit_estimate - 0.2) - y).abs() / y < 1e-9);
    }

    #[test]
    fn zero_perturbation_is_contraction() {
        let r5 = recurrence_lemma5(1.0, 0.5, &HARMONIC, &Perturbation::ZERO, 10_000, 1).unwrap();
        let r3 = recurrence_lemma3(1.0, 0.5, &HARMONIC, 10_000, 1).unwrap();
        let xs5: Vec<f64> = r5.series.iter().map(|p| p.x).collect();
        let xs3: Vec<f64> = r3.series.iter().map(|p| p.x).collect();
        assert_eq!(xs5, xs3);
    }

    #[test]
    fn vanishing_perturbation() {
        let c = Perturbation { scale: 1.0, power: 1.0 };
        let r = recurrence_lemma5(1.0, 0.5, &HARMONIC, &c, 1_000_000, 1000).unwrap();
        assert!(r.limit_estimate.abs() < 0.01, "x_N = {}", r.limit_estimate);
        assert_eq!(r.envelope_dominates, Some(true));
        assert!(r.crossings[0].achieved() && r.crossings[1].achieved());
    }

    #[test]
    fn vanishing_rejects_constant_perturbation() {
        let c = Perturbation { scale: 0.3, power: 0.0 };
        assert!(matches!(
            recurrence_lemma5(1.0, 0.5, &HARMONIC, &c, 1000, 1),
            Err(Error::NonVanishingPerturbation { .. })
        ));
        // The raw iteration settles at the constant-eps level instead.
        let r = recurrence_perturbed(1.0, 0.5, &HARMONIC, &c, 1_000_000, 500_000, 1000).unwrap();
        assert!((r.limit_estimate - 0.3).abs() < 1e-3);
        assert!(!r.crossings[0].achieved() || r.crossings[0].eps > 0.3);
    }

    #[test]
    fn bad_schedule_and_gamma() {
        assert!(matches!(
            recurrence_lemma3(1.0, 0.5, &StepSchedule::Constant { c0: 2.0 }, 10, 1),
            Err(Error::BadSchedule(_))
        ));
        assert!(matches!(
            recurrence_lemma3(1.0, 1.0, &HARMONIC, 10, 1),
            Err(Error::BadGamma(_))
        ));
    }
}

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, StudentT, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reward distribution attached to one state-action cell.
///
/// Every family has a finite second moment; heavy-tailed Student-t rewards
/// are accepted only for `dof > 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardDist {
    Gaussian { mean: f64, stddev: f64 },
    Uniform { lo: f64, hi: f64 },
    StudentT { dof: f64, loc: f64, scale: f64 },
    ShiftedExponential { rate: f64, shift: f64 },
    PointMass { value: f64 },
}

impl RewardDist {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDistribution(msg));
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match *self {
            RewardDist::Gaussian { mean, stddev } => {
                if !finite(&[mean, stddev]) || stddev <= 0.0 {
                    return bad(format!(
                        "gaussian needs finite mean and stddev > 0, got ({mean}, {stddev})"
                    ));
                }
            }
            RewardDist::Uniform { lo, hi } => {
                if !finite(&[lo, hi]) || hi <= lo {
                    return bad(format!("uniform needs hi > lo, got [{lo}, {hi}]"));
                }
            }
            RewardDist::StudentT { dof, loc, scale } => {
                if !finite(&[dof, loc, scale]) || scale <= 0.0 {
                    return bad(format!(
                        "student-t needs finite parameters and scale > 0, got scale {scale}"
                    ));
                }
                if dof <= 2.0 {
                    return bad(format!("student-t with dof = {dof} has infinite second moment"));
                }
            }
            RewardDist::ShiftedExponential { rate, shift } => {
                if !finite(&[rate, shift]) || rate <= 0.0 {
                    return bad(format!("shifted exponential needs rate > 0, got {rate}"));
                }
            }
            RewardDist::PointMass { value } => {
                if !value.is_finite() {
                    return bad(format!("point mass at non-finite value {value}"));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.moments().0
    }

    /// Exact first and second raw moments `(E[X], E[X^2])`.
    pub fn moments(&self) -> (f64, f64) {
        match *self {
            RewardDist::Gaussian { mean, stddev } => (mean, mean * mean + stddev * stddev),
            RewardDist::Uniform { lo, hi } => ((lo + hi) / 2.0, (lo * lo + lo * hi + hi * hi) / 3.0),
            RewardDist::StudentT { dof, loc, scale } => (loc, loc * loc + scale * scale * dof / (dof - 2.0)),
            RewardDist::ShiftedExponential { rate, shift } => {
                let m = shift + 1.0 / rate;
                (m, m * m + 1.0 / (rate * rate))
            }
            RewardDist::PointMass { value } => (value, value * value),
        }
    }

    pub(crate) fn sampler(&self) -> Result<RewardSampler> {
        self.validate()?;
        let err = |e: &dyn std::fmt::Display| Error::InvalidDistribution(e.to_string());
        Ok(match *self {
            RewardDist::Gaussian { mean, stddev } => {
                RewardSampler::Gaussian(Normal::new(mean, stddev).map_err(|e| err(&e))?)
            }
            RewardDist::Uniform { lo, hi } => RewardSampler::Uniform(Uniform::new(lo, hi).map_err(|e| err(&e))?),
            RewardDist::StudentT { dof, loc, scale } => RewardSampler::StudentT {
                t: StudentT::new(dof).map_err(|e| err(&e))?,
                loc,
                scale,
            },
            RewardDist::ShiftedExponential { rate, shift } => RewardSampler::ShiftedExp {
                exp: Exp::new(rate).map_err(|e| err(&e))?,
                shift,
            },
            RewardDist::PointMass { value } => RewardSampler::PointMass(value),
        })
    }

    /// Draw one reward. Builds the sampler on every call, so prefer
    /// [`crate::mdp::ValidatedMdp::sample_transition`] inside hot loops.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        Ok(self.sampler()?.sample(rng))
    }
}

/// Pre-built sampler; constructed once per cell when an MDP is validated.
#[derive(Debug, Clone)]
pub(crate) enum RewardSampler {
    Gaussian(Normal<f64>),
    Uniform(Uniform<f64>),
    StudentT { t: StudentT<f64>, loc: f64, scale: f64 },
    ShiftedExp { exp: Exp<f64>, shift: f64 },
    PointMass(f64),
}

impl RewardSampler {
    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            RewardSampler::Gaussian(d) => d.sample(rng),
            RewardSampler::Uniform(d) => d.sample(rng),
            RewardSampler::StudentT { t, loc, scale } => loc + scale * t.sample(rng),
            RewardSampler::ShiftedExp { exp, shift } => shift + exp.sample(rng),
            RewardSampler::PointMass(v) => *v,
        }
    }
}

/// `(mean, second moment)` of a reward distribution.
pub fn reward_moments(dist: &RewardDist) -> (f64, f64) {
    dist.moments()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_form_moments() {
        assert_eq!(
            reward_moments(&RewardDist::Gaussian { mean: 1.0, stddev: 2.0 }),
            (1.0, 5.0)
        );
        let (m, s) = reward_moments(&RewardDist::Uniform { lo: 0.0, hi: 1.0 });
        assert_eq!(m, 0.5);
        assert!((s - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            reward_moments(&RewardDist::StudentT {
                dof: 3.0,
                loc: 0.0,
                scale: 1.0
            }),
            (0.0, 3.0)
        );
        assert_eq!(reward_moments(&RewardDist::PointMass { value: -2.0 }), (-2.0, 4.0));
        // Exp(2) shifted by 1: mean 1.5, var 0.25.
        assert_eq!(
            reward_moments(&RewardDist::ShiftedExponential { rate: 2.0, shift: 1.0 }),
            (1.5, 2.5)
        );
    }

    #[test]
    fn rejects_infinite_second_moment() {
        let d = RewardDist::StudentT {
            dof: 2.0,
            loc: 0.0,
            scale: 1.0,
        };
        assert!(matches!(d.validate(), Err(Error::InvalidDistribution(_))));
        assert!(RewardDist::StudentT {
            dof: 2.0001,
            loc: 0.0,
            scale: 1.0
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn rejects_bad_parameters() {
        for d in [
            RewardDist::Gaussian { mean: 0.0, stddev: 0.0 },
            RewardDist::Uniform { lo: 1.0, hi: 1.0 },
            RewardDist::StudentT {
                dof: 5.0,
                loc: 0.0,
                scale: -1.0,
            },
            RewardDist::ShiftedExponential { rate: 0.0, shift: 0.0 },
            RewardDist::PointMass { value: f64::NAN },
        ] {
            assert!(d.validate().is_err(), "{d:?} should be rejected");
        }
    }

    /// Monte-Carlo cross-check of every family's second moment.
    #[test]
    fn sampled_second_moments_match_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 400_000;
        for d in [
            RewardDist::Gaussian { mean: 1.0, stddev: 2.0 },
            RewardDist::Uniform { lo: -1.0, hi: 3.0 },
            RewardDist::StudentT {
                dof: 5.0,
                loc: 0.5,
                scale: 1.0,
            },
            RewardDist::ShiftedExponential { rate: 2.0, shift: -1.0 },
        ] {
            let s = d.sampler().unwrap();
            let mut w = crate::stats::Welford::default();
            for _ in 0..n {
                let x = s.sample(&mut rng);
                w.push(x * x);
            }
            let (_, m2) = d.moments();
            assert!(
                (w.mean() - m2).abs() < 4.0 * w.std_error(),
                "{d:?}: {} vs {m2} (se {})",
                w.mean(),
                w.std_error()
            );
        }
    }
}

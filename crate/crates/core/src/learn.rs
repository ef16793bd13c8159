//! Tabular Q-learning and SARSA with full run diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::ValidatedMdp;
use crate::schedule::StepSchedule;
use crate::solver::{argmax, QTable};

/// Multiplicative decay applied to an exploration parameter at step `t`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    #[default]
    None,
    /// `1 / sqrt(t + 1)`.
    InvSqrt,
    /// `1 / (t + 1)`.
    Harmonic,
}

impl Decay {
    pub fn factor(self, t: u64) -> f64 {
        match self {
            Decay::None => 1.0,
            Decay::InvSqrt => 1.0 / (t as f64 + 1.0).sqrt(),
            Decay::Harmonic => 1.0 / (t as f64 + 1.0),
        }
    }
}

/// Exploration policy generating `(s_t, a_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Behavior {
    /// `eps_t = max(eps * decay(t), eps_min)`.
    EpsilonGreedy {
        eps: f64,
        #[serde(default)]
        eps_min: f64,
        #[serde(default)]
        decay: Decay,
    },
    /// Boltzmann exploration with temperature `temperature * decay(t)`.
    Softmax {
        temperature: f64,
        #[serde(default)]
        decay: Decay,
    },
    UniformRandom,
}

impl Behavior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Behavior::EpsilonGreedy { eps, eps_min, .. } => {
                if !(0.0..=1.0).contains(&eps) || !(0.0..=eps).contains(&eps_min) {
                    return Err(Error::InvalidConfig(format!(
                        "epsilon-greedy needs 0 <= eps_min <= eps <= 1, got eps {eps}, eps_min {eps_min}"
                    )));
                }
            }
            Behavior::Softmax { temperature, .. } => {
                if !(temperature > 0.0 && temperature.is_finite()) {
                    return Err(Error::InvalidConfig(format!(
                        "softmax temperature must be positive, got {temperature}"
                    )));
                }
            }
            Behavior::UniformRandom => {}
        }
        Ok(())
    }

    pub fn epsilon(&self, t: u64) -> Option<f64> {
        match *self {
            Behavior::EpsilonGreedy { eps, eps_min, decay } => Some((eps * decay.factor(t)).max(eps_min)),
            _ => None,
        }
    }

    /// Draw an action in state `s` at step `t`.
    pub fn choose<R: Rng + ?Sized>(&self, q: &QTable, s: usize, t: u64, rng: &mut R) -> usize {
        let n = q.n_actions();
        match *self {
            Behavior::EpsilonGreedy { .. } => {
                let eps = self.epsilon(t).unwrap_or(0.0);
                let u: f64 = rng.random();
                if u < eps {
                    rng.random_range(0..n)
                } else {
                    q.argmax_row(s)
                }
            }
            Behavior::Softmax { temperature, decay } => {
                let tau = (temperature * decay.factor(t)).max(f64::MIN_POSITIVE);
                let row = q.row(s);
                let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = row.iter().map(|v| ((v - top) / tau).exp()).collect();
                let total: f64 = weights.iter().sum();
                let u: f64 = rng.random::<f64>() * total;
                let mut acc = 0.0;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        return i;
                    }
                }
                argmax(row)
            }
            Behavior::UniformRandom => rng.random_range(0..n),
        }
    }
}

/// Initial Q table: a constant or explicit row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QInit {
    Constant(f64),
    Values(Vec<f64>),
}

impl Default for QInit {
    fn default() -> Self {
        QInit::Constant(0.0)
    }
}

impl QInit {
    pub fn build(&self, n_states: usize, n_actions: usize) -> Result<QTable> {
        match self {
            QInit::Constant(c) => Ok(QTable::constant(n_states, n_actions, *c)),
            QInit::Values(v) => QTable::from_values(n_states, n_actions, v.clone()),
        }
    }
}

fn default_record_every() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnConfig {
    #[serde(default)]
    pub schedule: StepSchedule,
    pub behavior: Behavior,
    pub horizon: u64,
    #[serde(default)]
    pub q_init: QInit,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
}

impl LearnConfig {
    pub fn new(schedule: StepSchedule, behavior: Behavior, horizon: u64, seed: u64) -> Self {
        Self {
            schedule,
            behavior,
            horizon,
            q_init: QInit::default(),
            seed,
            record_every: default_record_every(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.behavior.validate()?;
        if self.horizon < 1 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if self.record_every < 1 {
            return Err(Error::InvalidConfig("record_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// One recorded row of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: u64,
    /// `||Q_t - Q*||`.
    pub sup_error: f64,
    /// `L_t = max_x |Q_t(x)|`.
    pub l_t: f64,
    /// `L'_t = max_{x,y} |Q_t(x) - Q_t(y)|`.
    pub lprime_t: f64,
    /// Mean over cells of `|Q_t - Q*|`.
    pub mean_error: f64,
    pub min_visits: u64,
    pub max_visits: u64,
    pub visits: Vec<u64>,
}

impl Record {
    pub(crate) fn capture(t: u64, q: &QTable, qstar: &QTable, visits: &[u64]) -> Self {
        Record {
            t,
            sup_error: q.sup_dist(qstar),
            l_t: q.sup_norm(),
            lprime_t: q.range(),
            mean_error: q
                .values()
                .iter()
                .zip(qstar.values())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / q.values().len().max(1) as f64,
            min_visits: visits.iter().copied().min().unwrap_or(0),
            max_visits: visits.iter().copied().max().unwrap_or(0),
            visits: visits.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub records: Vec<Record>,
    pub final_q: QTable,
    pub seed: u64,
}

impl RunDiagnostics {
    pub fn initial_error(&self) -> f64 {
        self.records.first().map_or(f64::NAN, |r| r.sup_error)
    }

    pub fn final_error(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.sup_error)
    }

    /// Recorded sup error at exactly step `t`, if recorded.
    pub fn error_at(&self, t: u64) -> Option<f64> {
        self.records.iter().find(|r| r.t == t).map(|r| r.sup_error)
    }
}

/// Everything a learner knows at the moment it updates one cell.
#[derive(Debug)]
pub struct StepEvent<'a> {
    pub t: u64,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    /// The on-policy next action (SARSA only).
    pub next_action: Option<usize>,
    /// Step size applied at the visited cell.
    pub alpha: f64,
    /// `r_t + gamma * bootstrap`.
    pub target: f64,
    /// `Q_t` before the update.
    pub q: &'a QTable,
}

/// Hook invoked once per learner step, before the update is applied.
pub trait StepObserver {
    fn on_step(&mut self, ev: &StepEvent<'_>);
}

impl StepObserver for () {
    fn on_step(&mut self, _: &StepEvent<'_>) {}
}

impl<F: FnMut(&StepEvent<'_>)> StepObserver for F {
    fn on_step(&mut self, ev: &StepEvent<'_>) {
        self(ev)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    QLearning,
    Sarsa,
}

/// Q-learning: `Q(s,a) <- (1-a) Q(s,a) + a (r + gamma max_b Q(s', b))`.
pub fn q_learning_run(mdp: &ValidatedMdp, qstar: &QTable, cfg: &LearnConfig) -> Result<RunDiagnostics> {
    run_learner(mdp, qstar, cfg, Algorithm::QLearning, &mut ())
}

/// SARSA: `Q(s,a) <- (1-a) Q(s,a) + a (r + gamma Q(s', a'))` with `a'` drawn
/// from the behavior policy.
pub fn sarsa_run(mdp: &ValidatedMdp, qstar: &QTable, cfg: &LearnConfig) -> Result<RunDiagnostics> {
    run_learner(mdp, qstar, cfg, Algorithm::Sarsa, &mut ())
}

/// Shared driver for both learners.
///
/// The trajectory starts from a uniformly drawn state. A state that is an
/// absorbing zero-reward sink is left by a uniform restart right after its
/// cell has been updated, so every cell keeps being visited.
pub fn run_learner<O: StepObserver + ?Sized>(
    mdp: &ValidatedMdp,
    qstar: &QTable,
    cfg: &LearnConfig,
    algo: Algorithm,
    observer: &mut O,
) -> Result<RunDiagnostics> {
    drive(mdp, qstar, cfg, algo, &mut SingleCell(cfg.schedule), observer)
}

/// How one observed transition changes the table.
pub(crate) trait UpdateRule {
    /// Step size at the visited cell.
    fn alpha(&self, t: u64, cell: usize, visits: &[u64]) -> f64;

    /// Apply the update toward `target`; returns `false` if any updated entry
    /// is non-finite.
    fn apply(&mut self, q: &mut QTable, t: u64, s: usize, a: usize, alpha: f64, target: f64) -> bool;
}

/// The tabular rule: only the visited cell moves.
struct SingleCell(StepSchedule);

impl UpdateRule for SingleCell {
    fn alpha(&self, t: u64, cell: usize, visits: &[u64]) -> f64 {
        self.0.step_size(t, visits[cell])
    }

    fn apply(&mut self, q: &mut QTable, _t: u64, s: usize, a: usize, alpha: f64, target: f64) -> bool {
        let updated = (1.0 - alpha) * q.get(s, a) + alpha * target;
        q.set(s, a, updated);
        updated.is_finite()
    }
}

pub(crate) fn drive<U: UpdateRule, O: StepObserver + ?Sized>(
    mdp: &ValidatedMdp,
    qstar: &QTable,
    cfg: &LearnConfig,
    algo: Algorithm,
    rule: &mut U,
    observer: &mut O,
) -> Result<RunDiagnostics> {
    cfg.validate()?;
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    if qstar.n_states() != n_s || qstar.n_actions() != n_a {
        return Err(Error::DimensionMismatch {
            expected: format!("{n_s}x{n_a}"),
            got: format!("{}x{}", qstar.n_states(), qstar.n_actions()),
        });
    }
    let mut q = cfg.q_init.build(n_s, n_a)?;
    let gamma = mdp.gamma();
    let sinks = mdp.absorbing_sinks();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut visits = vec![0u64; n_s * n_a];
    let mut records = vec![Record::capture(0, &q, qstar, &visits)];

    let mut s = rng.random_range(0..n_s);
    let mut a = cfg.behavior.choose(&q, s, 0, &mut rng);
    for t in 0..cfg.horizon {
        let tr = mdp.sample_unchecked(s, a, &mut rng);
        let s2 = tr.next_state;
        let cell = s * n_a + a;
        let alpha = rule.alpha(t, cell, &visits);
        let (boot, next_action) = match algo {
            Algorithm::QLearning => (q.max_row(s2), None),
            Algorithm::Sarsa => {
                let a2 = cfg.behavior.choose(&q, s2, t + 1, &mut rng);
                (q.get(s2, a2), Some(a2))
            }
        };
        let target = tr.reward + gamma * boot;
        observer.on_step(&StepEvent {
            t,
            state: s,
            action: a,
            reward: tr.reward,
            next_state: s2,
            next_action,
            alpha,
            target,
            q: &q,
        });
        let finite = rule.apply(&mut q, t, s, a, alpha, target);
        visits[cell] += 1;
        let done = t + 1;
        if !finite {
            records.push(Record::capture(done, &q, qstar, &visits));
            return Err(Error::NonFiniteValue {
                t: done,
                partial: Box::new(RunDiagnostics {
                    records,
                    final_q: q,
                    seed: cfg.seed,
                }),
            });
        }
        if done % cfg.record_every == 0 || done == cfg.horizon {
            records.push(Record::capture(done, &q, qstar, &visits));
        }
        if sinks[s] {
            s = rng.random_range(0..n_s);
            a = cfg.behavior.choose(&q, s, done, &mut rng);
        } else {
            s = s2;
            a = match next_action {
                Some(a2) => a2,
                None => cfg.behavior.choose(&q, s, done, &mut rng),
            };
        }
    }
    Ok(RunDiagnostics {
        records,
        final_q: q,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{generate_mdp, validate_mdp, MdpSpec, RewardDist, RewardFamily};
    use crate::solver::value_iterate;

    fn one_state(reward: RewardDist, n_actions: usize, gamma: f64) -> ValidatedMdp {
        validate_mdp(MdpSpec {
            n_states: 1,
            n_actions,
            trans: vec![vec![1.0]; n_actions],
            rewards: vec![reward; n_actions],
            gamma,
        })
        .unwrap()
    }

    fn eps(e: f64) -> Behavior {
        Behavior::EpsilonGreedy {
            eps: e,
            eps_min: 0.0,
            decay: Decay::None,
        }
    }

    #[test]
    fn noise_free_single_state_tracks_closed_form() {
        // Deterministic reward 1, gamma 0.9, alpha_k = 1/(k+1): after the
        // first visit Q_1 = 1, and the error then shrinks by (1 - 0.1/(k+1))
        // per visit, i.e. only like k^{-0.1}.
        let mdp = one_state(RewardDist::PointMass { value: 1.0 }, 1, 0.9);
        let (qstar, _) = value_iterate(&mdp, 1e-12).unwrap();
        assert!((qstar.get(0, 0) - 10.0).abs() < 1e-10);
        let horizon = 10_000u64;
        let cfg = LearnConfig::new(StepSchedule::default(), eps(0.1), horizon, 0);
        let run = q_learning_run(&mdp, &qstar, &cfg).unwrap();
        let mut err = 9.0_f64;
        for k in 1..horizon {
            err *= 1.0 - 0.1 / (k + 1) as f64;
        }
        assert!((run.final_error() - err).abs() < 1e-9, "{} vs {err}", run.final_error());
        // A global polynomial schedule drives the same noise-free problem to
        // the fixed point.
        let cfg = LearnConfig::new(StepSchedule::GlobalPolynomial { c0: 1.0, p: 0.6 }, eps(0.1), horizon, 0);
        let run = q_learning_run(&mdp, &qstar, &cfg).unwrap();
        assert!(run.final_error() < 1e-2, "final error {}", run.final_error());
    }

    #[test]
    fn single_step_algebra() {
        let mdp = one_state(RewardDist::Gaussian { mean: 0.5, stddev: 1.0 }, 1, 0.9);
        let (qstar, _) = value_iterate(&mdp, 1e-9).unwrap();
        let mut cfg = LearnConfig::new(StepSchedule::default(), eps(0.0), 1, 42);
        cfg.record_every = 1;
        let mut reward = f64::NAN;
        run_learner(&mdp, &qstar, &cfg, Algorithm::QLearning, &mut |ev: &StepEvent<'_>| {
            reward = ev.reward
        })
        .unwrap();
        let run = q_learning_run(&mdp, &qstar, &cfg).unwrap();
        // alpha = 1 on the first visit: Q_1 = r_0 + gamma * 0.
        assert_eq!(run.final_q.get(0, 0), reward);
        assert_eq!(run.records.len(), 2);
    }

    #[test]
    fn sarsa_equals_q_learning_with_one_action() {
        let mdp = one_state(RewardDist::Gaussian { mean: 1.0, stddev: 2.0 }, 1, 0.8);
        let (qstar, _) = value_iterate(&mdp, 1e-9).unwrap();
        for behavior in [
            eps(0.3),
            Behavior::UniformRandom,
            Behavior::Softmax {
                temperature: 1.0,
                decay: Decay::None,
            },
        ] {
            let mut cfg = LearnConfig::new(StepSchedule::default(), behavior, 5000, 3);
            cfg.record_every = 7;
            let a = q_learning_run(&mdp, &qstar, &cfg).unwrap();
            let b = sarsa_run(&mdp, &qstar, &cfg).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_rewards_stay_zero() {
        let mut spec = generate_mdp(4, 3, RewardFamily::PointMass, 2);
        spec.rewards
            .iter_mut()
            .for_each(|r| *r = RewardDist::PointMass { value: 0.0 });
        let mdp = validate_mdp(spec).unwrap();
        let qstar = QTable::zeros(4, 3);
        for behavior in [
            eps(0.2),
            Behavior::Softmax {
                temperature: 1.0,
                decay: Decay::None,
            },
        ] {
            let cfg = LearnConfig::new(StepSchedule::default(), behavior, 20_000, 1);
            for algo in [Algorithm::QLearning, Algorithm::Sarsa] {
                let run = run_learner(&mdp, &qstar, &cfg, algo, &mut ()).unwrap();
                assert!(run.records.iter().all(|r| r.sup_error == 0.0));
            }
        }
    }

    #[test]
    fn locality_visits_and_range() {
        let mdp = validate_mdp(generate_mdp(3, 2, RewardFamily::Gaussian { stddev: 1.0 }, 5)).unwrap();
        let (qstar, _) = value_iterate(&mdp, 1e-9).unwrap();
        let mut cfg = LearnConfig::new(StepSchedule::default(), eps(0.5), 3000, 9);
        cfg.record_every = 1;
        for algo in [Algorithm::QLearning, Algorithm::Sarsa] {
            let run = run_learner(&mdp, &qstar, &cfg, algo, &mut ()).unwrap();
            for r in &run.records {
                assert_eq!(r.visits.iter().sum::<u64>(), r.t);
                assert!(r.lprime_t <= 2.0 * r.l_t);
            }
            // Replay the recorded visit deltas: exactly one cell per step.
            for w in run.records.windows(2) {
                let changed = w[0].visits.iter().zip(&w[1].visits).filter(|(a, b)| a != b).count();
                assert_eq!(changed, 1);
            }
        }
        // Q changes in at most the visited cell.
        let mut prev: Option<(QTable, usize)> = None;
        let mut check = |ev: &StepEvent<'_>| {
            if let Some((q, cell)) = prev.take() {
                for i in 0..q.values().len() {
                    if i != cell {
                        assert_eq!(q.values()[i], ev.q.values()[i]);
                    }
                }
            }
            prev = Some((ev.q.clone(), ev.state * 2 + ev.action));
        };
        run_learner(&mdp, &qstar, &cfg, Algorithm::QLearning, &mut check).unwrap();
    }

    #[test]
    fn reproducible() {
        let mdp = validate_mdp(generate_mdp(3, 2, RewardFamily::StudentT { dof: 3.0, scale: 1.0 }, 5)).unwrap();
        let (qstar, _) = value_iterate(&mdp, 1e-9).unwrap();
        let cfg = LearnConfig::new(StepSchedule::default(), eps(0.2), 20_000, 77);
        assert_eq!(
            q_learning_run(&mdp, &qstar, &cfg).unwrap(),
            q_learning_run(&mdp, &qstar, &cfg).unwrap()
        );
        let other = LearnConfig {
            seed: 78,
            ..cfg.clone()
        };
        assert_ne!(
            q_learning_run(&mdp, &qstar, &cfg).unwrap(),
            q_learning_run(&mdp, &qstar, &other).unwrap()
        );
    }

    #[test]
    fn absorbing_sink_restarts() {
        // s1 is an absorbing zero-reward sink entered from s0 with certainty.
        let mdp = validate_mdp(MdpSpec {
            n_states: 2,
            n_actions: 1,
            trans: vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            rewards: vec![
                RewardDist::Gaussian { mean: 1.0, stddev: 0.5 },
                RewardDist::PointMass { value: 0.0 },
            ],
            gamma: 0.5,
        })
        .unwrap();
        assert_eq!(mdp.absorbing_sinks(), vec![false, true]);
        let (qstar, _) = value_iterate(&mdp, 1e-9).unwrap();
        let cfg = LearnConfig::new(StepSchedule::default(), Behavior::UniformRandom, 10_000, 4);
        let run = q_learning_run(&mdp, &qstar, &cfg).unwrap();
        let last = run.records.last().unwrap();
        assert!(last.min_visits > 3000, "visits {:?}", last.visits);
        assert!(run.final_error() < 0.05);
    }

    #[test]
    fn overflow_reports_partial_diagnostics() {
        let mdp = one_state(RewardDist::PointMass { value: 1e308 }, 1, 0.99);
        let qstar = QTable::zeros(1, 1);
        let mut cfg = LearnConfig::new(StepSchedule::Constant { c0: 1.0 }, eps(0.0), 100, 0);
        cfg.q_init = QInit::Constant(1e308);
        match q_learning_run(&mdp, &qstar, &cfg) {
            Err(Error::NonFiniteValue { t, partial }) => {
                assert_eq!(t, 1);
                assert_eq!(partial.records.last().unwrap().t, 1);
            }
            other => panic!("expected NonFiniteValue, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let bad = LearnConfig::new(StepSchedule::default(), eps(1.5), 10, 0);
        assert!(bad.validate().is_err());
        let bad = LearnConfig::new(
            StepSchedule::default(),
            Behavior::Softmax {
                temperature: 0.0,
                decay: Decay::None,
            },
            10,
            0,
        );
        assert!(bad.validate().is_err());
        let bad = LearnConfig::new(StepSchedule::default(), eps(0.1), 0, 0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn epsilon_decay_floor() {
        let b = Behavior::EpsilonGreedy {
            eps: 1.0,
            eps_min: 0.05,
            decay: Decay::InvSqrt,
        };
        assert_eq!(b.epsilon(0), Some(1.0));
        assert_eq!(b.epsilon(3), Some(0.5));
        assert_eq!(b.epsilon(10_000), Some(0.05));
    }
}

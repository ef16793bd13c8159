//! Empirical checks of the internal objects of the tabular convergence
//! argument: the error decomposition `Delta_t = w_t + delta_t`, the
//! second-moment bound on `L_t = max_x |Q_t(x)|` through the `K_t`
//! recursion, the conditional-centering inequality `E[Z^2] <= 4 E[Y^2]`,
//! and summability of the injected noise.
//!
//! Conditional expectations are computed from the known model, never
//! estimated, so one side of every comparison is noise-free.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::{run_learner, Algorithm, LearnConfig, StepEvent, StepObserver};
use crate::mdp::{compute_cr, RewardDist, ValidatedMdp};
use crate::schedule::StepSchedule;
use crate::solver::{bellman_cell, QTable};
use crate::stats::{median, sup_abs, CompensatedSum, Welford};

/// Snapshot of the decomposition at a recorded step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompRecord {
    pub t: u64,
    pub w: Vec<f64>,
    pub delta: Vec<f64>,
    /// `Delta_t = Q_t - Q*`.
    pub error: Vec<f64>,
}

impl DecompRecord {
    pub fn w_norm(&self) -> f64 {
        sup_abs(&self.w)
    }

    pub fn delta_norm(&self) -> f64 {
        sup_abs(&self.delta)
    }

    pub fn error_norm(&self) -> f64 {
        sup_abs(&self.error)
    }
}

/// Per-step quantities at the visited cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepNoise {
    pub cell: u32,
    /// Step size `a_t` at the visited cell.
    pub alpha: f64,
    /// `p_t = F_t - E[F_t | F_t-history]`.
    pub p: f64,
    /// `E[F_t | history] = (T Q_t)(x) - Q*(x)`.
    pub expected_f: f64,
    /// `gamma * ||Delta_t||`.
    pub gamma_error_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionTrace {
    pub records: Vec<DecompRecord>,
    pub steps: Vec<StepNoise>,
    /// Max over every step and cell of `|Delta_t - (w_t + delta_t)|`.
    pub max_identity_err: f64,
    /// Max over every step of `|E[F_t]| - gamma ||Delta_t||`.
    pub max_contraction_excess: f64,
    pub final_q: QTable,
}

/// Tolerance on the decomposition identity.
pub const IDENTITY_TOL: f64 = 1e-9;

struct Decomposer<'a> {
    mdp: &'a ValidatedMdp,
    qstar: &'a QTable,
    w: Vec<f64>,
    delta: Vec<f64>,
    record_every: u64,
    records: Vec<DecompRecord>,
    steps: Vec<StepNoise>,
    max_identity_err: f64,
    max_contraction_excess: f64,
}

impl Decomposer<'_> {
    fn identity_err(&mut self, q: &QTable) {
        let err = q
            .values()
            .iter()
            .zip(self.qstar.values())
            .zip(self.w.iter().zip(&self.delta))
            .fold(0.0_f64, |m, ((qv, qs), (w, d))| m.max(((qv - qs) - (w + d)).abs()));
        self.max_identity_err = self.max_identity_err.max(err);
    }

    fn snapshot(&mut self, t: u64, q: &QTable) {
        let error = q.values().iter().zip(self.qstar.values()).map(|(a, b)| a - b).collect();
        self.records.push(DecompRecord {
            t,
            w: self.w.clone(),
            delta: self.delta.clone(),
            error,
        });
    }
}

impl StepObserver for Decomposer<'_> {
    fn on_step(&mut self, ev: &StepEvent<'_>) {
        // `ev.q` is Q_t, and w/delta hold w_t/delta_t here.
        self.identity_err(ev.q);
        if ev.t.is_multiple_of(self.record_every) {
            self.snapshot(ev.t, ev.q);
        }
        let cell = ev.state * ev.q.n_actions() + ev.action;
        let qs = self.qstar.values()[cell];
        let f = ev.target - qs;
        let expected_f = bellman_cell(self.mdp, ev.q, ev.state, ev.action) - qs;
        let p = f - expected_f;
        let gamma_error_norm = self.mdp.gamma() * ev.q.sup_dist(self.qstar);
        self.max_contraction_excess = self.max_contraction_excess.max(expected_f.abs() - gamma_error_norm);
        let a = ev.alpha;
        self.delta[cell] = (1.0 - a) * self.delta[cell] + a * expected_f;
        self.w[cell] = (1.0 - a) * self.w[cell] + a * p;
        self.steps.push(StepNoise {
            cell: cell as u32,
            alpha: a,
            p,
            expected_f,
            gamma_error_norm,
        });
    }
}

/// Run Q-learning while evolving
/// `delta_{t+1} = (1 - a_t) delta_t + a_t E[F_t | history]` and
/// `w_{t+1} = (1 - a_t) w_t + a_t p_t` at the visited cell, from
/// `w_0 = 0`, `delta_0 = Delta_0`.
pub fn decompose_run(mdp: &ValidatedMdp, qstar: &QTable, cfg: &LearnConfig) -> Result<DecompositionTrace> {
    cfg.validate()?;
    let q0 = cfg.q_init.build(mdp.n_states(), mdp.n_actions())?;
    let delta0: Vec<f64> = q0.values().iter().zip(qstar.values()).map(|(a, b)| a - b).collect();
    let mut obs = Decomposer {
        mdp,
        qstar,
        w: vec![0.0; delta0.len()],
        delta: delta0,
        record_every: cfg.record_every,
        records: Vec::new(),
        steps: Vec::with_capacity(cfg.horizon.min(1 << 24) as usize),
        max_identity_err: 0.0,
        max_contraction_excess: f64::NEG_INFINITY,
    };
    let run = run_learner(mdp, qstar, cfg, Algorithm::QLearning, &mut obs)?;
    obs.identity_err(&run.final_q);
    obs.snapshot(cfg.horizon, &run.final_q);
    Ok(DecompositionTrace {
        records: obs.records,
        steps: obs.steps,
        max_identity_err: obs.max_identity_err,
        max_contraction_excess: obs.max_contraction_excess,
        final_q: run.final_q,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KtTrace {
    /// `K_0, ..., K_T`.
    pub k: Vec<f64>,
    /// `K* = max(K_0, 1/(1-gamma) + 1)`.
    pub cap: f64,
    pub b: Vec<f64>,
}

impl KtTrace {
    /// `K_t <= K*` at every index, with zero tolerance.
    pub fn within_cap(&self) -> bool {
        self.k.iter().all(|&k| k <= self.cap)
    }

    pub fn nondecreasing(&self) -> bool {
        self.k.windows(2).all(|w| w[1] >= w[0])
    }
}

/// `K* = max(K_0, 1/(1-gamma) + 1)`.
pub fn kt_cap(k0: f64, gamma: f64) -> f64 {
    k0.max(1.0 / (1.0 - gamma) + 1.0)
}

/// `K_{t+1} = max(K_t, K_t + b_t (1 - (1 - gamma) K_t))`.
pub fn kt_sequence<B: Fn(u64) -> f64>(k0: f64, b: B, gamma: f64, steps: u64) -> Result<KtTrace> {
    if !(k0 >= 0.0 && k0.is_finite()) {
        return Err(Error::InvalidConfig(format!("K_0 must be nonnegative, got {k0}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::BadGamma(gamma));
    }
    let mut k = Vec::with_capacity(steps as usize + 1);
    let mut bs = Vec::with_capacity(steps as usize);
    k.push(k0);
    let mut cur = k0;
    for t in 0..steps {
        let bt = b(t);
        if !(0.0..=1.0).contains(&bt) {
            return Err(Error::BadSchedule(format!("b_{t} = {bt} outside [0, 1]")));
        }
        cur = kt_step(cur, bt, gamma);
        k.push(cur);
        bs.push(bt);
    }
    Ok(KtTrace {
        k,
        cap: kt_cap(k0, gamma),
        b: bs,
    })
}

fn kt_step(k: f64, b: f64, gamma: f64) -> f64 {
    k.max(k + b * (1.0 - (1.0 - gamma) * k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub t: Vec<u64>,
    /// Mean of `L_t^2` across replicas plus three standard errors.
    pub empirical: Vec<f64>,
    /// `K_t^2 C_R`, with `K_t` the smallest value over replicas.
    pub bound: Vec<f64>,
    pub verdict: bool,
    pub k0: f64,
    pub c_r: f64,
    pub n_runs: usize,
}

/// Monte-Carlo check of `E[L_t^2] <= K_t^2 C_R` over `n_runs` independent
/// Q-learning runs (seeds `cfg.seed, cfg.seed + 1, ...`).
///
/// `b_t` is the step size applied at the visited cell, so each replica
/// carries its own `K_t`; the bound uses the pointwise minimum over
/// replicas, the most demanding choice.
pub fn lt_moment_check(mdp: &ValidatedMdp, cfg: &LearnConfig, n_runs: usize, k0: f64) -> Result<MomentReport> {
    if n_runs < 30 {
        return Err(Error::InvalidConfig(format!("need at least 30 replicas, got {n_runs}")));
    }
    cfg.validate()?;
    // L_t does not depend on Q*; any table of the right shape will do.
    let zeros = QTable::for_mdp(mdp, 0.0);
    let gamma = mdp.gamma();
    let c_r = compute_cr(mdp);
    let mut ts: Vec<u64> = Vec::new();
    let mut acc: Vec<Welford> = Vec::new();
    let mut kmin: Vec<f64> = Vec::new();
    for i in 0..n_runs {
        let rcfg = LearnConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.clone()
        };
        let mut k = k0;
        let mut ks = vec![k0];
        let every = rcfg.record_every;
        let horizon = rcfg.horizon;
        let mut track = |ev: &StepEvent<'_>| {
            k = kt_step(k, ev.alpha, gamma);
            let done = ev.t + 1;
            if done.is_multiple_of(every) || done == horizon {
                ks.push(k);
            }
        };
        let run = run_learner(mdp, &zeros, &rcfg, Algorithm::QLearning, &mut track)?;
        if i == 0 {
            ts = run.records.iter().map(|r| r.t).collect();
            acc = vec![Welford::default(); ts.len()];
            kmin = ks.clone();
        }
        for (j, r) in run.records.iter().enumerate() {
            acc[j].push(r.l_t * r.l_t);
            kmin[j] = kmin[j].min(ks[j]);
        }
    }
    let empirical: Vec<f64> = acc.iter().map(|w| w.mean() + 3.0 * w.std_error()).collect();
    let bound: Vec<f64> = kmin.iter().map(|k| k * k * c_r).collect();
    let verdict = empirical.iter().zip(&bound).all(|(e, b)| e <= b);
    Ok(MomentReport {
        t: ts,
        empirical,
        bound,
        verdict,
        k0,
        c_r,
        n_runs,
    })
}

/// Choice of conditioning sigma-algebra for the centering inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// `Z = Y - E[Y]`.
    Trivial,
    /// `Z = Y - Y = 0`.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Result {
    /// Sample mean of `Z^2`.
    pub lhs: f64,
    pub lhs_se: f64,
    /// `4 E[Y^2]`, exact.
    pub rhs: f64,
    pub pass: bool,
}

/// Check `E[Z^2] <= 4 E[Y^2]` with `Z = Y - E[Y | G]`, `Y ~ dist`.
pub fn lemma1_check<R: Rng + ?Sized>(
    dist: &RewardDist,
    conditioning: Conditioning,
    n: usize,
    rng: &mut R,
) -> Result<Lemma1Result> {
    if n < 10_000 {
        return Err(Error::InvalidConfig(format!("need at least 10^4 samples, got {n}")));
    }
    dist.validate()?;
    let (mean, second) = dist.moments();
    let mut w = Welford::default();
    for _ in 0..n {
        let y = dist.sample(rng)?;
        let z = match conditioning {
            Conditioning::Trivial => y - mean,
            Conditioning::Full => 0.0,
        };
        w.push(z * z);
    }
    let rhs = 4.0 * second;
    let (lhs, lhs_se) = (w.mean(), w.std_error());
    Ok(Lemma1Result {
        lhs,
        lhs_se,
        rhs,
        pass: lhs <= rhs + 3.0 * lhs_se,
    })
}

/// Convenience wrapper seeding its own stream.
pub fn lemma1_check_seeded(dist: &RewardDist, conditioning: Conditioning, n: usize, seed: u64) -> Result<Lemma1Result> {
    lemma1_check(dist, conditioning, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSumReport {
    /// `(t, sum_{s < t} a_s^2 p_s^2)` summed over all cells, at recorded steps.
    pub running: Vec<(u64, f64)>,
    /// Final per-cell sums.
    pub per_cell: Vec<f64>,
    pub total: f64,
    /// `4 M (1 + gamma K*) C_R`, `None` when `M` diverges.
    pub bound: Option<f64>,
    /// Increment over the last tenth of the run divided by the total.
    pub last_decile_fraction: f64,
    pub plateaued: bool,
    /// Max per-cell sum is finite and at most the bound.
    pub within_bound: bool,
}

/// Accumulate `a_t^2 p_t^2` along a traced run and compare each cell's
/// total with `4 M (1 + gamma K*) C_R`, `M = sum b_t^2`.
pub fn noise_summability_check(
    trace: &DecompositionTrace,
    schedule: &StepSchedule,
    mdp: &ValidatedMdp,
    k0: f64,
) -> NoiseSumReport {
    let n_cells = mdp.n_cells();
    let mut per_cell = vec![CompensatedSum::new(); n_cells];
    let mut total = CompensatedSum::new();
    let horizon = trace.steps.len() as u64;
    let decile_start = horizon - horizon / 10;
    let mut at_decile = 0.0;
    let stride = trace.records.get(1).map(|r| r.t.max(1)).unwrap_or(horizon.max(1));
    let mut running = vec![(0, 0.0)];
    for (t, st) in trace.steps.iter().enumerate() {
        let t = t as u64;
        if t == decile_start {
            at_decile = total.value();
        }
        let v = st.alpha * st.alpha * st.p * st.p;
        per_cell[st.cell as usize].add(v);
        total.add(v);
        if (t + 1).is_multiple_of(stride) || t + 1 == horizon {
            running.push((t + 1, total.value()));
        }
    }
    let total_v = total.value();
    let last_decile_fraction = if total_v > 0.0 {
        (total_v - at_decile) / total_v
    } else {
        0.0
    };
    let per_cell: Vec<f64> = per_cell.iter().map(|s| s.value()).collect();
    let k_star = kt_cap(k0, mdp.gamma());
    let bound = schedule
        .square_sum()
        .map(|m| 4.0 * m * (1.0 + mdp.gamma() * k_star) * compute_cr(mdp));
    let max_cell = per_cell.iter().copied().fold(0.0, f64::max);
    NoiseSumReport {
        running,
        total: total_v,
        within_bound: max_cell.is_finite() && bound.is_some_and(|b| max_cell <= b),
        per_cell,
        bound,
        last_decile_fraction,
        plateaued: last_decile_fraction < 0.01,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WConvergence {
    pub median_final: f64,
    pub median_peak: f64,
    pub pass: bool,
}

/// Median over traces of the final `||w_t||` against the median peak;
/// passes when the former is below 10% of the latter.
pub fn w_convergence(traces: &[DecompositionTrace]) -> WConvergence {
    let finals: Vec<f64> = traces
        .iter()
        .map(|t| t.records.last().map_or(f64::NAN, DecompRecord::w_norm))
        .collect();
    let peaks: Vec<f64> = traces
        .iter()
        .map(|t| t.records.iter().map(DecompRecord::w_norm).fold(0.0, f64::max))
        .collect();
    let (median_final, median_peak) = (median(&finals), median(&peaks));
    WConvergence {
        median_final,
        median_peak,
        pass: median_final < 0.1 * median_peak,
    }
}

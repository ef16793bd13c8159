//! Acceptance suite: runs criteria A1-A10 at their stated tolerances and
//! prints one PASS/FAIL line per criterion. Exits nonzero if any fails.

use std::path::Path;
use std::time::Instant;

use qconv::commands::{kt_cap_sweep, random_batch, rectangular_critic};
use qconv::{run_experiment, Command, Overrides};
use qconv_core::diagnostics::{lemma1_check_seeded, lt_moment_check, Conditioning};
use qconv_core::learn::RunDiagnostics;
use qconv_core::mdp::{generate_mdp, RewardFamily};
use qconv_core::pg::{
    distributional_grad, empirical_lipschitz, grad_check, lipschitz_bound, policy_grad_analytic, Activation,
    AdditiveNoise, MultiplicativeNoise, SmallNet,
};
use qconv_core::recurrences::{
    recurrence_lemma3, recurrence_lemma4, recurrence_lemma5, recurrence_perturbed, Perturbation,
};
use qconv_core::ripple::{
    continuous_qstar, induced_mdp, ripple_q_run, ContinuousMdp, GridQ, MeanReward, RippleKernel, TransitionModel,
};
use qconv_core::solver::contraction_check;
use qconv_core::stats::median;
use qconv_core::{
    q_learning_run, sarsa_run, validate_mdp, Behavior, Decay, Error, LearnConfig, MdpSpec, QTable, RewardDist,
    StepSchedule, ValidatedMdp,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

const SEEDS: std::ops::Range<u64> = 0..10;
const LONG_HORIZON: u64 = 2_000_000;
const PER_SEED_BUDGET_S: f64 = 120.0;

struct Verdict {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict { id, pass, detail }
}

fn benchmark_mdp() -> ValidatedMdp {
    validate_mdp(generate_mdp(5, 3, RewardFamily::Gaussian { stddev: 1.0 }, 7)).unwrap()
}

fn qstar_of(mdp: &ValidatedMdp) -> QTable {
    qconv_core::value_iterate(mdp, 1e-12).unwrap().0
}

/// Runs one learner per seed in parallel; returns runs and per-seed seconds.
fn replicate<F>(run: F) -> (Vec<RunDiagnostics>, Vec<f64>)
where
    F: Fn(u64) -> RunDiagnostics + Sync,
{
    let out: Vec<(RunDiagnostics, f64)> = SEEDS
        .into_par_iter()
        .map(|seed| {
            let start = Instant::now();
            let d = run(seed);
            (d, start.elapsed().as_secs_f64())
        })
        .collect();
    out.into_iter().unzip()
}

fn median_at(runs: &[RunDiagnostics], t: u64) -> f64 {
    median(
        &runs
            .iter()
            .map(|r| r.error_at(t).unwrap_or(f64::NAN))
            .collect::<Vec<_>>(),
    )
}

fn tabular_criterion(id: &'static str, behavior: Behavior, sarsa: bool, max_ratio: f64, decades: bool) -> Verdict {
    let mdp = benchmark_mdp();
    let qstar = qstar_of(&mdp);
    let make = |schedule: StepSchedule, seed: u64| {
        let mut cfg = LearnConfig::new(schedule, behavior, LONG_HORIZON, seed);
        cfg.record_every = 2_000;
        cfg
    };
    let run = |cfg: &LearnConfig| {
        if sarsa {
            sarsa_run(&mdp, &qstar, cfg).unwrap()
        } else {
            q_learning_run(&mdp, &qstar, cfg).unwrap()
        }
    };
    let (runs, secs) = replicate(|seed| run(&make(StepSchedule::VisitHarmonic { c0: 1.0 }, seed)));
    let initial = median(&runs.iter().map(RunDiagnostics::initial_error).collect::<Vec<_>>());
    let fin = median(&runs.iter().map(RunDiagnostics::final_error).collect::<Vec<_>>());
    let ratio = fin / initial;
    let checkpoints: Vec<f64> = [2_000, 20_000, 200_000, 2_000_000]
        .iter()
        .map(|&t| median_at(&runs, t))
        .collect();
    let monotone = checkpoints.windows(2).all(|w| w[1] <= w[0]);
    let slowest = secs.iter().copied().fold(0.0, f64::max);
    let (fast, _) = replicate(|seed| run(&make(StepSchedule::GlobalPolynomial { c0: 1.0, p: 0.6 }, seed)));
    let fast_ratio = median(
        &fast
            .iter()
            .map(|r| r.final_error() / r.initial_error())
            .collect::<Vec<_>>(),
    );
    let pass = ratio < max_ratio && (!decades || monotone) && slowest <= PER_SEED_BUDGET_S;
    verdict(
        id,
        pass,
        format!(
            "median final/initial {ratio:.4} (need < {max_ratio}); decade medians {checkpoints:.4?} monotone={monotone}; \
             slowest seed {slowest:.2}s; [info] same runs with step 1/(t+1)^0.6 give {fast_ratio:.4}"
        ),
    )
}

fn a1() -> Verdict {
    let behavior = Behavior::EpsilonGreedy {
        eps: 0.1,
        eps_min: 0.0,
        decay: Decay::None,
    };
    tabular_criterion("A1", behavior, false, 0.1, true)
}

fn a2() -> Verdict {
    let behavior = Behavior::EpsilonGreedy {
        eps: 1.0,
        eps_min: 0.0,
        decay: Decay::InvSqrt,
    };
    tabular_criterion("A2", behavior, true, 0.15, false)
}

fn a3() -> Verdict {
    let mdp = benchmark_mdp();
    let mut cfg = LearnConfig::new(
        StepSchedule::VisitHarmonic { c0: 1.0 },
        Behavior::EpsilonGreedy {
            eps: 0.1,
            eps_min: 0.0,
            decay: Decay::None,
        },
        100_000,
        1_000,
    );
    cfg.record_every = 1_000;
    let report = lt_moment_check(&mdp, &cfg, 100, 1.0).unwrap();
    let worst = report
        .empirical
        .iter()
        .zip(&report.bound)
        .map(|(e, b)| e / b)
        .fold(0.0, f64::max);
    let (violations, rows) = kt_cap_sweep(100_000).unwrap();
    verdict(
        "A3",
        report.verdict && violations == 0,
        format!(
            "max (E[L_t^2]+3SE)/(K_t^2 C_R) = {worst:.4} over {} checkpoints; K_t cap violations {violations}/{}",
            report.t.len(),
            rows.len()
        ),
    )
}

fn a4() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..1000 {
        let (n_s, n_a) = (rng.random_range(1..=8), rng.random_range(1..=4));
        let mut spec = generate_mdp(n_s, n_a, RewardFamily::Gaussian { stddev: 1.0 }, i);
        spec.gamma = rng.random_range(0.01..0.999);
        let mdp = validate_mdp(spec).unwrap();
        let scale = 10f64.powf(rng.random_range(-2.0..3.0));
        let mut draw = || {
            let v = (0..n_s * n_a)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            QTable::from_values(n_s, n_a, v).unwrap()
        };
        let (q1, q2) = (draw(), draw());
        let (lhs, rhs) = contraction_check(&mdp, &q1, &q2).unwrap();
        worst = worst.max(lhs - rhs);
        if lhs > rhs + 1e-9 {
            violations += 1;
        }
    }
    verdict(
        "A4",
        violations == 0,
        format!(
            "{violations} violations in 1000 triples; max excess {worst:e}; {:.2}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn a5() -> Verdict {
    let cmdp = ContinuousMdp {
        dim: 1,
        n_actions: 2,
        mean: MeanReward::OpposedLinear,
        noise_sd: 1.0,
        gamma: 0.5,
        transition: TransitionModel::Uniform,
    };
    let oracle = continuous_qstar(&cmdp).unwrap();
    let grid = GridQ::new(1, 64, 2).unwrap();
    let cfg = |seed: u64, horizon: u64| {
        let mut c = LearnConfig::new(
            StepSchedule::VisitHarmonic { c0: 1.0 },
            Behavior::UniformRandom,
            horizon,
            seed,
        );
        c.record_every = 10_000;
        c
    };
    let kernel = RippleKernel::GaussianRbf { sigma: 0.05 };
    let (runs, _) = replicate(|seed| ripple_q_run(&cmdp, &kernel, &grid, &cfg(seed, 1_000_000)).unwrap());
    let med = median(&runs.iter().map(RunDiagnostics::final_error).collect::<Vec<_>>());
    let reduction_cfg = cfg(3, 200_000);
    let ripple = ripple_q_run(&cmdp, &RippleKernel::Indicator { radius: 0.0 }, &grid, &reduction_cfg).unwrap();
    let tabular = q_learning_run(
        &induced_mdp(&cmdp, &grid).unwrap(),
        &oracle.snapshot(&grid),
        &reduction_cfg,
    )
    .unwrap();
    let identical = ripple == tabular;
    let vbar_ok = (oracle.vbar - 1.5).abs() < 1e-9;
    verdict(
        "A5",
        med < 0.1 && identical && vbar_ok,
        format!(
            "median final sup error {med:.4} (need < 0.1); vbar {:.12}; indicator(0) run bit-identical to tabular: {identical}",
            oracle.vbar
        ),
    )
}

fn a6() -> Verdict {
    let harmonic = StepSchedule::VisitHarmonic { c0: 1.0 };
    let fast = StepSchedule::GlobalPolynomial { c0: 1.0, p: 0.7 };
    let n = 1_000_000;
    let l3 = recurrence_lemma3(1.0, 0.5, &harmonic, n, 1_000).unwrap();
    let dev = l3.max_rel_dev.unwrap_or(f64::NAN);
    let l3_ok = dev <= 1e-12 && l3.limit_estimate < 1e-2;
    let mut l4_gaps = Vec::new();
    for gamma in [0.5, 0.9] {
        for eps in [0.2, 1.0] {
            let r = recurrence_lemma4(1.0, gamma, eps, &fast, n, 1_000).unwrap();
            l4_gaps.push((r.limit_estimate - eps * gamma / (1.0 - gamma)).abs());
        }
    }
    let l4_ok = l4_gaps.iter().all(|g| *g < 1e-4);
    let l5 = recurrence_lemma5(1.0, 0.5, &fast, &Perturbation { scale: 1.0, power: 1.0 }, n, 1_000).unwrap();
    let l5_ok = l5.crossings.iter().all(|c| c.achieved()) && l5.envelope_dominates == Some(true);
    let control = recurrence_perturbed(
        1.0,
        0.5,
        &fast,
        &Perturbation { scale: 0.2, power: 0.0 },
        n,
        n / 2,
        1_000,
    )
    .unwrap();
    let control_gap = (control.limit_estimate - control.target).abs();
    let control_ok = control_gap < 1e-3 && control.limit_estimate > 1e-3;
    verdict(
        "A6",
        l3_ok && l4_ok && l5_ok && control_ok,
        format!(
            "contraction: rel dev {dev:e}, x_N {:.3e}; offset gaps {:?}; vanishing: ladder {:?}, envelope {:?}; \
             constant control x_N {:.6} vs {:.6}",
            l3.limit_estimate,
            l4_gaps.iter().map(|g| format!("{g:.1e}")).collect::<Vec<_>>(),
            l5.crossings.iter().map(|c| c.first).collect::<Vec<_>>(),
            l5.envelope_dominates,
            control.limit_estimate,
            control.target
        ),
    )
}

fn a7() -> Verdict {
    let families = [
        RewardDist::Gaussian { mean: 0.5, stddev: 1.0 },
        RewardDist::Uniform { lo: -1.0, hi: 2.0 },
        RewardDist::StudentT {
            dof: 3.0,
            loc: 0.0,
            scale: 1.0,
        },
        RewardDist::ShiftedExponential { rate: 1.0, shift: -0.5 },
        RewardDist::PointMass { value: 2.0 },
    ];
    let results: Vec<_> = families
        .par_iter()
        .enumerate()
        .map(|(i, d)| lemma1_check_seeded(d, Conditioning::Trivial, 1_000_000, 70 + i as u64).unwrap())
        .collect();
    let detail: Vec<String> = results.iter().map(|r| format!("{:.3}<={:.3}", r.lhs, r.rhs)).collect();
    verdict(
        "A7",
        results.iter().all(|r| r.pass),
        format!("E[Z^2] vs 4E[Y^2]: {}", detail.join(", ")),
    )
}

fn a8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let critic = rectangular_critic(2, 2);
    let acts = [Activation::Sigmoid, Activation::Identity];
    let mut worst = 0.0f64;
    let mut lip_ok = true;
    let mut lip_margin = f64::INFINITY;
    let mut first = None;
    for _ in 0..20 {
        let policy = SmallNet::random(&[2, 4, 2], &acts, 1.0, &mut rng).unwrap();
        let rho = random_batch(&mut rng, 8, 2).unwrap();
        worst = worst.max(grad_check(&policy, &critic, &rho, 1e-5).unwrap().max_rel_error);
        let (bound, emp) = (
            lipschitz_bound(&policy),
            empirical_lipschitz(&policy, 10_000, 2.0, &mut rng),
        );
        lip_ok &= emp <= bound + 1e-9;
        lip_margin = lip_margin.min(bound - emp);
        first.get_or_insert((policy, rho));
    }
    let (policy, rho) = first.unwrap();
    let exact = policy_grad_analytic(&policy, &critic, &rho).unwrap();
    let within = |noisy: &qconv_core::pg::DistributionalGrad| {
        noisy
            .grad
            .iter()
            .zip(&exact)
            .zip(&noisy.std_error)
            .all(|((g, e), se)| (g - e).abs() <= 3.0 * se + 1e-12)
    };
    let additive = distributional_grad(
        &AdditiveNoise {
            critic: critic.clone(),
            sigma: 1.0,
        },
        &policy,
        &rho,
        10_000,
        &mut rng,
    )
    .unwrap();
    let multiplicative = distributional_grad(
        &MultiplicativeNoise {
            critic: critic.clone(),
            scale: 0.5,
        },
        &policy,
        &rho,
        10_000,
        &mut rng,
    )
    .unwrap();
    let additive_ok = within(&additive);
    verdict(
        "A8",
        worst <= 1e-4 && additive_ok && lip_ok,
        format!(
            "max rel error {worst:e} over 20 draws; additive-noise form within 3 SE: {additive_ok}; \
             Lipschitz bound held: {lip_ok} (min margin {lip_margin:.3}); [info] multiplicative-noise form within 3 SE: {}",
            within(&multiplicative)
        ),
    )
}

fn a9() -> Verdict {
    let mdp = benchmark_mdp();
    let qstar = qstar_of(&mdp);
    let horizon = 200_000;
    let tail_medians: Vec<f64> = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let mut cfg = LearnConfig::new(
                StepSchedule::Constant { c0: 0.5 },
                Behavior::EpsilonGreedy {
                    eps: 0.1,
                    eps_min: 0.0,
                    decay: Decay::None,
                },
                horizon,
                seed,
            );
            cfg.record_every = 1_000;
            let d = q_learning_run(&mdp, &qstar, &cfg).unwrap();
            let tail: Vec<f64> = d
                .records
                .iter()
                .filter(|r| r.t > horizon - horizon / 10)
                .map(|r| r.sup_error)
                .collect();
            median(&tail)
        })
        .collect();
    let stuck = tail_medians.iter().all(|m| *m > 1e-3);
    let heavy = MdpSpec {
        n_states: 1,
        n_actions: 1,
        trans: vec![vec![1.0]],
        rewards: vec![RewardDist::StudentT {
            dof: 2.0,
            loc: 0.0,
            scale: 1.0,
        }],
        gamma: 0.9,
    };
    let rejected = matches!(validate_mdp(heavy), Err(Error::InvalidDistribution(_)));
    verdict(
        "A9",
        stuck && rejected,
        format!(
            "constant step final-decile medians {tail_medians:.3?} (all > 1e-3: {stuck}); dof=2 rejected: {rejected}"
        ),
    )
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn a10() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let configs = [
        (
            Command::Qlearn,
            r#"
seeds = [1, 2, 3]
[mdp.generate]
n_states = 5
n_actions = 3
seed = 7
reward = { family = "student_t", dof = 3.0, scale = 1.0 }
[learn]
behavior = { kind = "epsilon_greedy", eps = 0.1 }
horizon = 50_000
record_every = 500
"#,
        ),
        (
            Command::Sarsa,
            r#"
seeds = [4, 5]
[mdp.generate]
n_states = 4
n_actions = 2
seed = 1
reward = { family = "shifted_exponential", rate = 1.0 }
[learn]
behavior = { kind = "softmax", temperature = 0.5 }
horizon = 50_000
record_every = 500
"#,
        ),
        (
            Command::Ripple,
            r#"
seeds = [0, 1]
[ripple]
per_axis = 16
horizon = 20_000
record_every = 1_000
kernel = { family = "gaussian_rbf", sigma = 0.05 }
[ripple.cmdp]
dim = 1
n_actions = 2
mean = { family = "opposed_linear" }
noise_sd = 1.0
gamma = 0.5
"#,
        ),
        (
            Command::Lemmas,
            r#"
[lemmas]
kind = "offset"
x0 = 1.0
gamma = 0.9
eps = 1.0
schedule = { family = "global_polynomial", c0 = 1.0, p = 0.7 }
n_steps = 100_000
stride = 100
"#,
        ),
    ];
    let mut compared = 0;
    let mut identical = true;
    for (i, (cmd, text)) in configs.iter().enumerate() {
        let cfg = tmp.path().join(format!("c{i}.toml"));
        std::fs::write(&cfg, text).unwrap();
        let outputs: Vec<_> = [1usize, 3, 1]
            .iter()
            .enumerate()
            .map(|(rep, &parallel)| {
                let out = tmp.path().join(format!("o{i}_{rep}"));
                let o = Overrides {
                    out: Some(out.clone()),
                    parallel: Some(parallel),
                    ..Overrides::default()
                };
                run_experiment(*cmd, &cfg, &o).unwrap();
                csv_bytes(&out)
            })
            .collect();
        compared += outputs[0].len();
        identical &= !outputs[0].is_empty() && outputs.iter().all(|o| *o == outputs[0]);
    }
    verdict(
        "A10",
        identical,
        format!("{compared} CSV files byte-identical across three reruns (1 and 3 threads): {identical}"),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        ("A1", a1),
        ("A2", a2),
        ("A3", a3),
        ("A4", a4),
        ("A5", a5),
        ("A6", a6),
        ("A7", a7),
        ("A8", a8),
        ("A9", a9),
        ("A10", a10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (id, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| x == id) {
            continue;
        }
        let start = Instant::now();
        let v = f();
        println!(
            "{:<4} {} ({:.1}s) {}",
            v.id,
            if v.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            v.detail
        );
        if !v.pass {
            failed.push(v.id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed {failed:?}");
        std::process::exit(1);
    }
}

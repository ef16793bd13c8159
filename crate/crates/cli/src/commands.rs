//! One function per subcommand. Each writes its artifacts into the output
//! directory and returns per-replica records plus named checks.

use std::path::PathBuf;
use std::time::Instant;

use log::{info, warn};
use qconv_core::diagnostics::{
    decompose_run, kt_sequence, lemma1_check_seeded, lt_moment_check, noise_summability_check, w_convergence,
    IDENTITY_TOL,
};
use qconv_core::learn::{run_learner, Algorithm, RunDiagnostics};
use qconv_core::pg::{
    distributional_grad, empirical_lipschitz, grad_check, lipschitz_bound, policy_grad_analytic_jittered,
    AdditiveNoise, GradCheckReport, QuadraticCritic, SmallNet, StateBatch,
};
use qconv_core::recurrences::{
    recurrence_lemma3, recurrence_lemma4, recurrence_lemma5, recurrence_perturbed, RecurrenceResult,
};
use qconv_core::ripple::{continuous_qstar, ripple_q_run, GridQ};
use qconv_core::stats::median;
use qconv_core::{bellman_apply, greedy_policy, value_iterate, Behavior, LearnConfig, StepSchedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{missing, LemmasSection, LoadedConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{Check, RunRecord};
use crate::output::{fmt_f64, OutDir, LEARN_COLUMNS, LEMMA_COLUMNS, RIPPLE_COLUMNS};
use crate::plot::emit_convergence_plot;

/// Tolerance for optimal values used as learner references.
const QSTAR_TOL: f64 = 1e-12;

pub struct Ctx<'a> {
    pub cfg: &'a LoadedConfig,
    pub seeds: Vec<u64>,
    pub out: &'a OutDir,
    pub parallel: usize,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub runs: Vec<RunRecord>,
    pub checks: Vec<Check>,
}

/// A replica's value plus the output files it wrote.
type ReplicaResult<T> = CliResult<(T, Vec<String>)>;

/// Runs `f` once per seed, at most `ctx.parallel` at a time. Results come
/// back in seed order; failures are recorded, not propagated.
#[allow(clippy::type_complexity)]
fn replicas<T, F>(ctx: &Ctx, f: F) -> CliResult<(Vec<RunRecord>, Vec<(u64, T)>)>
where
    T: Send,
    F: Fn(u64) -> ReplicaResult<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.parallel.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let results: Vec<(u64, f64, ReplicaResult<T>)> = pool.install(|| {
        ctx.seeds
            .par_iter()
            .map(|&seed| {
                let start = Instant::now();
                let r = f(seed);
                (seed, start.elapsed().as_secs_f64() * 1e3, r)
            })
            .collect()
    });
    let mut runs = Vec::with_capacity(results.len());
    let mut values = Vec::with_capacity(results.len());
    for (seed, wall_ms, r) in results {
        match r {
            Ok((v, files)) => {
                info!("seed {seed} finished in {wall_ms:.0} ms");
                runs.push(RunRecord {
                    seed,
                    ok: true,
                    error: None,
                    wall_ms,
                    files,
                });
                values.push((seed, v));
            }
            Err(e) => {
                warn!("seed {seed} failed: {e}");
                runs.push(RunRecord {
                    seed,
                    ok: false,
                    error: Some(e.to_string()),
                    wall_ms,
                    files: Vec::new(),
                });
            }
        }
    }
    Ok((runs, values))
}

fn single<T>(f: impl FnOnce() -> CliResult<(T, Vec<String>)>) -> CliResult<(RunRecord, T)> {
    let start = Instant::now();
    let (v, files) = f()?;
    Ok((
        RunRecord {
            seed: 0,
            ok: true,
            error: None,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            files,
        },
        v,
    ))
}

fn learn_rows(diag: &RunDiagnostics) -> impl Iterator<Item = Vec<String>> + '_ {
    diag.records.iter().map(|r| {
        vec![
            r.t.to_string(),
            fmt_f64(r.sup_error),
            fmt_f64(r.l_t),
            fmt_f64(r.lprime_t),
            r.min_visits.to_string(),
            r.max_visits.to_string(),
        ]
    })
}

fn plot_if_any(out: &OutDir, csvs: &[String], name: &str) -> CliResult<()> {
    if csvs.is_empty() {
        return Ok(());
    }
    let paths: Vec<PathBuf> = csvs.iter().map(|f| out.root().join(f)).collect();
    emit_convergence_plot(&paths, &out.claim(name))?;
    Ok(())
}

pub fn solve(ctx: &Ctx) -> CliResult<Outcome> {
    let mdp = ctx.cfg.mdp()?;
    let tol = ctx.cfg.config.solve.clone().unwrap_or_default().tol;
    let (run, (iterations, residual)) = single(|| {
        let (q, iterations) = value_iterate(&mdp, tol)?;
        let residual = bellman_apply(&mdp, &q)?.sup_dist(&q);
        let policy = greedy_policy(&q);
        ctx.out.write_csv(
            "qstar.csv",
            &["state", "action", "value"],
            (0..q.n_states()).flat_map(|s| {
                let q = &q;
                (0..q.n_actions()).map(move |a| vec![s.to_string(), a.to_string(), fmt_f64(q.get(s, a))])
            }),
        )?;
        ctx.out.write_csv(
            "policy.csv",
            &["state", "action"],
            (0..q.n_states()).map(|s| {
                let a = policy.deterministic_action(s).expect("greedy policy is deterministic");
                vec![s.to_string(), a.to_string()]
            }),
        )?;
        ctx.out.write_json(
            "solve.json",
            &json!({
                "iterations": iterations,
                "bellman_residual": residual,
                "tol": tol,
                "gamma": mdp.gamma(),
                "c_r": qconv_core::compute_cr(&mdp),
            }),
        )?;
        Ok((
            (iterations, residual),
            vec!["qstar.csv".into(), "policy.csv".into(), "solve.json".into()],
        ))
    })?;
    let bound = (1.0 + mdp.gamma()) * tol;
    Ok(Outcome {
        runs: vec![run],
        checks: vec![Check::new(
            "bellman_residual",
            residual <= bound,
            format!("{residual:e} <= {bound:e} after {iterations} sweeps"),
        )],
    })
}

#[derive(Serialize)]
struct SeedErrors {
    seed: u64,
    initial_error: f64,
    final_error: f64,
    ratio: f64,
}

pub fn learn(ctx: &Ctx, algo: Algorithm) -> CliResult<Outcome> {
    let mdp = ctx.cfg.mdp()?;
    let sec = ctx.cfg.learn()?;
    let (qstar, _) = value_iterate(&mdp, QSTAR_TOL)?;
    let prefix = match algo {
        Algorithm::QLearning => "qlearn",
        Algorithm::Sarsa => "sarsa",
    };
    let (runs, values) = replicas(ctx, |seed| {
        let diag = run_learner(&mdp, &qstar, &sec.for_seed(seed), algo, &mut ())?;
        let name = format!("{prefix}_seed{seed}.csv");
        ctx.out.write_csv(&name, &LEARN_COLUMNS, learn_rows(&diag))?;
        let (i, f) = (diag.initial_error(), diag.final_error());
        Ok((
            SeedErrors {
                seed,
                initial_error: i,
                final_error: f,
                ratio: f / i,
            },
            vec![name],
        ))
    })?;
    let per_seed: Vec<SeedErrors> = values.into_iter().map(|(_, v)| v).collect();
    let median_ratio = median(&per_seed.iter().map(|s| s.ratio).collect::<Vec<_>>());
    ctx.out.write_json(
        &format!("{prefix}_summary.json"),
        &json!({ "per_seed": per_seed, "median_ratio": median_ratio }),
    )?;
    let csvs: Vec<String> = runs.iter().flat_map(|r| r.files.clone()).collect();
    plot_if_any(ctx.out, &csvs, &format!("{prefix}_convergence.svg"))?;
    let mut checks = Vec::new();
    if let Some(max) = sec.max_final_ratio {
        checks.push(Check::new(
            "median_final_ratio",
            median_ratio < max,
            format!("median final/initial {median_ratio:.4} vs {max}"),
        ));
    }
    Ok(Outcome { runs, checks })
}

pub fn decompose(ctx: &Ctx) -> CliResult<Outcome> {
    let mdp = ctx.cfg.mdp()?;
    let sec = ctx.cfg.learn()?;
    let k0 = ctx.cfg.config.decompose.clone().unwrap_or_default().k0;
    let (qstar, _) = value_iterate(&mdp, QSTAR_TOL)?;
    let (runs, values) = replicas(ctx, |seed| {
        let mut trace = decompose_run(&mdp, &qstar, &sec.for_seed(seed))?;
        let noise = noise_summability_check(&trace, &sec.schedule, &mdp, k0);
        let csv = format!("decompose_seed{seed}.csv");
        ctx.out.write_csv(
            &csv,
            &["t", "error", "w", "delta"],
            trace.records.iter().map(|r| {
                vec![
                    r.t.to_string(),
                    fmt_f64(r.error_norm()),
                    fmt_f64(r.w_norm()),
                    fmt_f64(r.delta_norm()),
                ]
            }),
        )?;
        let js = format!("noise_seed{seed}.json");
        ctx.out.write_json(
            &js,
            &json!({
                "total": noise.total,
                "max_per_cell": noise.per_cell.iter().copied().fold(0.0, f64::max),
                "bound": noise.bound,
                "last_decile_fraction": noise.last_decile_fraction,
                "plateaued": noise.plateaued,
                "within_bound": noise.within_bound,
                "max_identity_err": trace.max_identity_err,
                "max_contraction_excess": trace.max_contraction_excess,
            }),
        )?;
        trace.steps = Vec::new();
        Ok(((trace, noise.within_bound), vec![csv, js]))
    })?;
    let traces: Vec<_> = values.iter().map(|(_, (t, _))| t.clone()).collect();
    let identity = traces.iter().map(|t| t.max_identity_err).fold(0.0, f64::max);
    let excess = traces
        .iter()
        .map(|t| t.max_contraction_excess)
        .fold(f64::NEG_INFINITY, f64::max);
    let within = values.iter().all(|(_, (_, w))| *w);
    let mut checks = vec![
        Check::new(
            "decomposition_identity",
            identity <= IDENTITY_TOL,
            format!("max |Δ - w - δ| = {identity:e}"),
        ),
        Check::new(
            "expected_noise_contraction",
            excess <= IDENTITY_TOL,
            format!("max |E F| - γ|Δ| = {excess:e}"),
        ),
        Check::new("noise_square_sum_bound", within, "per-cell Σ α² F² within bound"),
    ];
    if !traces.is_empty() {
        let w = w_convergence(&traces);
        ctx.out.write_json("w_convergence.json", &w)?;
        checks.push(Check::new(
            "noise_component_vanishes",
            w.pass,
            format!(
                "median final |w| {:.4e}, median peak {:.4e}",
                w.median_final, w.median_peak
            ),
        ));
    }
    Ok(Outcome { runs, checks })
}

/// `K_0` values, discounts and schedules for the deterministic cap check.
fn kt_grid() -> Vec<(f64, f64, StepSchedule)> {
    let schedules = [
        StepSchedule::VisitHarmonic { c0: 1.0 },
        StepSchedule::GlobalPolynomial { c0: 1.0, p: 0.6 },
        StepSchedule::Constant { c0: 0.5 },
        StepSchedule::Constant { c0: 1.0 },
    ];
    let mut grid = Vec::new();
    for k0 in [0.0, 0.5, 1.0, 5.0, 50.0] {
        for gamma in [0.1, 0.5, 0.9, 0.99] {
            for s in schedules {
                grid.push((k0, gamma, s));
            }
        }
    }
    grid
}

/// Checks `K_t <= max(K_0, 1/(1-γ) + 1)` exactly over [`kt_grid`] for
/// `steps` steps, with `b_t` the schedule at global step `t`.
pub fn kt_cap_sweep(steps: u64) -> CliResult<(usize, Vec<serde_json::Value>)> {
    let mut violations = 0;
    let mut rows = Vec::new();
    for (k0, gamma, s) in kt_grid() {
        let trace = kt_sequence(k0, |t| s.step_size(t, t), gamma, steps)?;
        let ok = trace.within_cap() && trace.nondecreasing();
        violations += usize::from(!ok);
        rows.push(json!({
            "k0": k0, "gamma": gamma, "schedule": s,
            "final_k": trace.k.last(), "cap": trace.cap, "ok": ok,
        }));
    }
    Ok((violations, rows))
}

pub fn bounds(ctx: &Ctx) -> CliResult<Outcome> {
    let mdp = ctx.cfg.mdp()?;
    let sec = ctx.cfg.learn()?;
    let b = ctx.cfg.config.bounds.clone().unwrap_or_default();
    let seed = ctx.seeds[0];
    let (run, (report, violations)) = single(|| {
        let report = lt_moment_check(&mdp, &sec.for_seed(seed), b.n_runs, b.k0)?;
        ctx.out.write_json("moment.json", &report)?;
        ctx.out.write_csv(
            "moment.csv",
            &["t", "empirical", "bound"],
            report
                .t
                .iter()
                .zip(&report.empirical)
                .zip(&report.bound)
                .map(|((t, e), b)| vec![t.to_string(), fmt_f64(*e), fmt_f64(*b)]),
        )?;
        let (violations, rows) = kt_cap_sweep(10_000)?;
        ctx.out.write_json("kt_grid.json", &rows)?;
        Ok((
            (report, violations),
            vec!["moment.json".into(), "moment.csv".into(), "kt_grid.json".into()],
        ))
    })?;
    let run = RunRecord { seed, ..run };
    Ok(Outcome {
        runs: vec![run],
        checks: vec![
            Check::new(
                "second_moment_bound",
                report.verdict,
                format!("{} replicas, {} checkpoints", report.n_runs, report.t.len()),
            ),
            Check::new("kt_cap", violations == 0, format!("{violations} violations")),
        ],
    })
}

fn recurrence_json(r: &RecurrenceResult) -> serde_json::Value {
    json!({
        "limit_estimate": r.limit_estimate,
        "target": r.target,
        "max_rel_dev": r.max_rel_dev,
        "crossings": r.crossings,
        "envelope_dominates": r.envelope_dominates,
    })
}

fn write_recurrence(out: &OutDir, r: &RecurrenceResult) -> CliResult<Vec<String>> {
    out.write_csv(
        "lemma.csv",
        &LEMMA_COLUMNS,
        r.series
            .iter()
            .map(|p| vec![p.n.to_string(), fmt_f64(p.x), fmt_f64(p.oracle), fmt_f64(p.abs_err())]),
    )?;
    out.write_json("lemma.json", &recurrence_json(r))?;
    Ok(vec!["lemma.csv".into(), "lemma.json".into()])
}

pub fn lemmas(ctx: &Ctx) -> CliResult<Outcome> {
    let sec = ctx.cfg.config.lemmas.clone().ok_or_else(|| missing("lemmas"))?;
    if let LemmasSection::Moment {
        distributions,
        n_samples,
        conditioning,
    } = &sec
    {
        let (runs, values) = replicas(ctx, |seed| {
            let results = distributions
                .iter()
                .enumerate()
                .map(|(i, d)| lemma1_check_seeded(d, *conditioning, *n_samples, seed.wrapping_add(i as u64)))
                .collect::<qconv_core::Result<Vec<_>>>()?;
            let name = format!("moment_seed{seed}.json");
            ctx.out
                .write_json(&name, &json!({ "distributions": distributions, "results": results }))?;
            Ok((results.iter().all(|r| r.pass), vec![name]))
        })?;
        let pass = !values.is_empty() && values.iter().all(|(_, p)| *p);
        return Ok(Outcome {
            runs,
            checks: vec![Check::new("moment_inequality", pass, "E[Z²] <= 4 E[Y²] + 3 SE")],
        });
    }
    let (run, check) = single(|| {
        let (r, check) = match sec {
            LemmasSection::Contraction {
                x0,
                gamma,
                schedule,
                n_steps,
                stride,
                tol,
            } => {
                let r = recurrence_lemma3(x0, gamma, &schedule, n_steps, stride)?;
                let dev = r.max_rel_dev.unwrap_or(f64::NAN);
                let c = Check::new(
                    "closed_form_product",
                    dev <= tol,
                    format!("max relative deviation {dev:e}"),
                );
                (r, c)
            }
            LemmasSection::Offset {
                x0,
                gamma,
                eps,
                schedule,
                n_steps,
                stride,
                tol,
            } => {
                let r = recurrence_lemma4(x0, gamma, eps, &schedule, n_steps, stride)?;
                let gap = (r.limit_estimate - r.target).abs();
                let c = Check::new("offset_limit", gap < tol, format!("|x_N - {}| = {gap:e}", r.target));
                (r, c)
            }
            LemmasSection::Vanishing {
                x0,
                gamma,
                schedule,
                perturbation,
                n_steps,
                stride,
            } => {
                let r = recurrence_lemma5(x0, gamma, &schedule, &perturbation, n_steps, stride)?;
                let crossed = r.crossings.iter().all(|c| c.achieved());
                let dominated = r.envelope_dominates == Some(true);
                let c = Check::new(
                    "vanishing_perturbation",
                    crossed && dominated,
                    format!("ladder crossed: {crossed}, envelope dominates: {dominated}"),
                );
                (r, c)
            }
            LemmasSection::Perturbed {
                x0,
                gamma,
                schedule,
                perturbation,
                n_steps,
                restart,
                stride,
                tol,
            } => {
                let r = recurrence_perturbed(x0, gamma, &schedule, &perturbation, n_steps, restart, stride)?;
                let gap = (r.limit_estimate - r.target).abs();
                let c = Check::new("perturbed_limit", gap < tol, format!("|x_N - {}| = {gap:e}", r.target));
                (r, c)
            }
            LemmasSection::Moment { .. } => unreachable!("handled above"),
        };
        let files = write_recurrence(ctx.out, &r)?;
        Ok((check, files))
    })?;
    Ok(Outcome {
        runs: vec![run],
        checks: vec![check],
    })
}

pub fn ripple(ctx: &Ctx) -> CliResult<Outcome> {
    let sec = ctx.cfg.config.ripple.clone().ok_or_else(|| missing("ripple"))?;
    let grid = GridQ::new(sec.cmdp.dim, sec.per_axis, sec.cmdp.n_actions)?;
    let oracle = continuous_qstar(&sec.cmdp)?;
    let qstar = oracle.snapshot(&grid);
    let (runs, values) = replicas(ctx, |seed| {
        let cfg = LearnConfig {
            schedule: sec.schedule,
            behavior: Behavior::UniformRandom,
            horizon: sec.horizon,
            q_init: sec.q_init.clone(),
            seed,
            record_every: sec.record_every,
        };
        let diag = ripple_q_run(&sec.cmdp, &sec.kernel, &grid, &cfg)?;
        let csv = format!("ripple_seed{seed}.csv");
        ctx.out.write_csv(
            &csv,
            &RIPPLE_COLUMNS,
            diag.records
                .iter()
                .map(|r| vec![r.t.to_string(), fmt_f64(r.sup_error), fmt_f64(r.mean_error)]),
        )?;
        let lattice = format!("lattice_seed{seed}.csv");
        let mut header = vec!["point".to_string()];
        header.extend((1..=grid.dim).map(|i| format!("x{i}")));
        header.extend(["action", "q", "qstar"].map(String::from));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let q = &diag.final_q;
        ctx.out.write_csv(
            &lattice,
            &header,
            (0..grid.n_points()).flat_map(|i| {
                let x = grid.point(i);
                let qstar = &qstar;
                (0..grid.n_actions()).map(move |a| {
                    let mut row = vec![i.to_string()];
                    row.extend(x.iter().map(|v| fmt_f64(*v)));
                    row.extend([a.to_string(), fmt_f64(q.get(i, a)), fmt_f64(qstar.get(i, a))]);
                    row
                })
            }),
        )?;
        let learned = GridQ {
            values: diag.final_q.clone(),
            ..grid.clone()
        };
        Ok(((diag.final_error(), learned.discrete_lipschitz()), vec![csv, lattice]))
    })?;
    let finals: Vec<f64> = values.iter().map(|(_, (e, _))| *e).collect();
    let med = median(&finals);
    ctx.out.write_json(
        "ripple_summary.json",
        &json!({
            "per_seed": values.iter().map(|(s, (e, l))| json!({"seed": s, "final_error": e, "discrete_lipschitz": l})).collect::<Vec<_>>(),
            "median_final_error": med,
            "vbar": oracle.vbar,
            "max_integral": oracle.max_integral,
            "max_integral_closed": oracle.max_integral_closed,
            "mean_lipschitz": sec.cmdp.mean.lipschitz(sec.cmdp.dim),
        }),
    )?;
    let csvs: Vec<String> = runs
        .iter()
        .flat_map(|r| r.files.iter().filter(|f| f.starts_with("ripple_")).cloned())
        .collect();
    plot_if_any(ctx.out, &csvs, "ripple_convergence.svg")?;
    let mut checks = Vec::new();
    if let Some(max) = sec.max_final_error {
        checks.push(Check::new(
            "median_final_error",
            med < max,
            format!("median final sup error {med:.4} vs {max}"),
        ));
    }
    Ok(Outcome { runs, checks })
}

/// `Q(s, a) = -|a - P s|^2` with `P` the leading rectangular identity.
pub fn rectangular_critic(state_dim: usize, action_dim: usize) -> QuadraticCritic {
    let mut target = vec![0.0; state_dim * action_dim];
    (0..state_dim.min(action_dim)).for_each(|i| target[i * state_dim + i] = 1.0);
    QuadraticCritic {
        state_dim,
        action_dim,
        target,
    }
}

pub fn random_batch<R: Rng + ?Sized>(rng: &mut R, n: usize, dim: usize) -> CliResult<StateBatch> {
    Ok(StateBatch::uniform(
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect(),
    )?)
}

#[derive(Debug, Serialize)]
struct PgSeedReport {
    draws: Vec<GradCheckReport>,
    jittered_states: u32,
    max_rel_error: f64,
    distributional: serde_json::Value,
    distributional_ok: bool,
    lipschitz_bound: f64,
    lipschitz_empirical: f64,
}

pub fn pgcheck(ctx: &Ctx) -> CliResult<Outcome> {
    let sec = ctx.cfg.config.pgcheck.clone().ok_or_else(|| missing("pgcheck"))?;
    if sec.widths.len() < 2 {
        return Err(CliError::Config("[pgcheck] widths needs at least two entries".into()));
    }
    let (d_in, d_out) = (sec.widths[0], sec.widths[sec.widths.len() - 1]);
    let critic = rectangular_critic(d_in, d_out);
    let (runs, values) = replicas(ctx, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draws = Vec::with_capacity(sec.n_draws);
        let mut jittered = 0;
        let mut first: Option<(SmallNet, StateBatch, Vec<f64>)> = None;
        for _ in 0..sec.n_draws {
            let policy = SmallNet::random(&sec.widths, &sec.activations, sec.weight_scale, &mut rng)?;
            let rho = random_batch(&mut rng, sec.n_states, d_in)?;
            let (analytic, rho, tries) = policy_grad_analytic_jittered(&policy, &critic, &rho, 1e-3, 10, &mut rng)?;
            jittered += tries;
            let report = grad_check(&policy, &critic, &rho, sec.h)?;
            if first.is_none() {
                first = Some((policy, rho, analytic));
            }
            draws.push(report);
        }
        let max_rel_error = draws.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
        let (policy, rho, analytic) = first.ok_or_else(|| CliError::Config("[pgcheck] n_draws must be >= 1".into()))?;
        let z = AdditiveNoise {
            critic: critic.clone(),
            sigma: sec.noise_sigma,
        };
        let dist = distributional_grad(&z, &policy, &rho, sec.n_samples, &mut rng)?;
        let distributional_ok = dist
            .grad
            .iter()
            .zip(&analytic)
            .zip(&dist.std_error)
            .all(|((g, a), se)| (g - a).abs() <= 3.0 * se + 1e-12);
        let bound = lipschitz_bound(&policy);
        let emp = empirical_lipschitz(&policy, sec.lipschitz_pairs, 2.0, &mut rng);
        let report = PgSeedReport {
            draws,
            jittered_states: jittered,
            max_rel_error,
            distributional: json!({ "grad": dist.grad, "std_error": dist.std_error, "analytic": analytic, "n_samples": dist.n_samples }),
            distributional_ok,
            lipschitz_bound: bound,
            lipschitz_empirical: emp,
        };
        let name = format!("pgcheck_seed{seed}.json");
        ctx.out.write_json(&name, &report)?;
        Ok(((max_rel_error, distributional_ok, emp <= bound + 1e-9), vec![name]))
    })?;
    let worst = values.iter().map(|(_, (m, _, _))| *m).fold(0.0, f64::max);
    let any = !values.is_empty();
    Ok(Outcome {
        runs,
        checks: vec![
            Check::new(
                "gradient_matches_fd",
                any && worst <= sec.tol,
                format!("max relative error {worst:e} vs {}", sec.tol),
            ),
            Check::new(
                "distributional_matches",
                any && values.iter().all(|(_, (_, d, _))| *d),
                "within 3 Monte-Carlo SE",
            ),
            Check::new(
                "lipschitz_bound_holds",
                any && values.iter().all(|(_, (_, _, l))| *l),
                "no difference quotient above the bound",
            ),
        ],
    })
}

pub fn report(ctx: &Ctx) -> CliResult<Outcome> {
    let sec = ctx.cfg.config.report.clone().ok_or_else(|| missing("report"))?;
    let inputs: Vec<PathBuf> = sec.inputs.iter().map(|p| ctx.cfg.resolve(p)).collect();
    let (run, n) = single(|| {
        let summary = emit_convergence_plot(&inputs, &ctx.out.claim(&sec.output))?;
        Ok((summary.n_curves, vec![sec.output.clone()]))
    })?;
    Ok(Outcome {
        runs: vec![run],
        checks: vec![Check::new("plot_written", n == inputs.len() + 1, format!("{n} curves"))],
    })
}

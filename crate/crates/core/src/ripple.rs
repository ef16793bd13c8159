//! Continuous-domain Q-learning where one observed transition moves every
//! grid cell, weighted by a ripple kernel `f(x, y)` with `f(x, x) = 1`.
//!
//! The state space is `[0, 1]^d` for `d` in `{1, 2}`, discretised by a
//! midpoint lattice. Next states are uniform on the domain, so snapping them
//! to the lattice cell that contains them gives a uniform draw over lattice
//! points. That snapped chain is the induced finite MDP, and the learner runs
//! on it through the same sampling path as the tabular learners.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::{drive, Algorithm, Behavior, LearnConfig, RunDiagnostics, UpdateRule};
use crate::mdp::{validate_mdp, MdpSpec, RewardDist, ValidatedMdp};
use crate::schedule::StepSchedule;
use crate::solver::QTable;

/// Largest supported lattice.
pub const MAX_GRID_POINTS: usize = 4096;

/// Tolerance for the adaptive quadrature of the value integral.
pub const QUADRATURE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum RippleKernel {
    /// `exp(-|x - y|^2 / (2 sigma^2))`.
    #[serde(rename = "gaussian_rbf")]
    GaussianRbf { sigma: f64 },
    /// `max(0, 1 - |x - y| / radius)`.
    Triangular { radius: f64 },
    /// `1` when `|x - y| <= radius`, else `0`. Discontinuous; radius 0 gives
    /// the tabular update.
    Indicator { radius: f64 },
}

impl RippleKernel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            RippleKernel::GaussianRbf { sigma } => sigma.is_finite() && sigma > 0.0,
            RippleKernel::Triangular { radius } => radius.is_finite() && radius > 0.0,
            RippleKernel::Indicator { radius } => radius.is_finite() && radius >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad ripple kernel {self:?}")))
        }
    }

    /// Kernel value at Euclidean distance `d`.
    pub fn at_distance(&self, d: f64) -> f64 {
        match *self {
            RippleKernel::GaussianRbf { sigma } => (-d * d / (2.0 * sigma * sigma)).exp(),
            RippleKernel::Triangular { radius } => (1.0 - d / radius).max(0.0),
            RippleKernel::Indicator { radius } => {
                if d <= radius {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn in_unit_cube(x: &[f64]) -> bool {
    x.iter().all(|c| (0.0..=1.0).contains(c))
}

/// Evaluates `f(x, y)` for two points of the same unit cube.
pub fn ripple_eval(kernel: &RippleKernel, x: &[f64], y: &[f64]) -> Result<f64> {
    kernel.validate()?;
    if x.len() != y.len() || x.is_empty() || !in_unit_cube(x) || !in_unit_cube(y) {
        let mut bad = x.to_vec();
        bad.extend_from_slice(y);
        return Err(Error::OutOfDomain(bad));
    }
    Ok(kernel.at_distance(euclid(x, y)))
}

fn euclid(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn coord_mean(s: &[f64]) -> f64 {
    s.iter().sum::<f64>() / s.len() as f64
}

/// Mean-reward families with closed forms. Each depends on the state through
/// the coordinate mean `m(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeanReward {
    /// `0` for every action.
    Zero,
    /// Two actions: `m(s)` and `1 - m(s)`.
    OpposedLinear,
    /// `sin(pi m(s))` for every action.
    SinePi,
}

impl MeanReward {
    pub fn eval(&self, s: &[f64], a: usize) -> f64 {
        let m = coord_mean(s);
        match self {
            MeanReward::Zero => 0.0,
            MeanReward::OpposedLinear => {
                if a == 0 {
                    m
                } else {
                    1.0 - m
                }
            }
            MeanReward::SinePi => (std::f64::consts::PI * m).sin(),
        }
    }

    /// Euclidean Lipschitz constant in `s` on `[0,1]^dim`.
    pub fn lipschitz(&self, dim: usize) -> f64 {
        let scale = 1.0 / (dim as f64).sqrt();
        match self {
            MeanReward::Zero => 0.0,
            MeanReward::OpposedLinear => scale,
            MeanReward::SinePi => std::f64::consts::PI * scale,
        }
    }

    /// `∫ max_b mu(s, b) ds` over `[0,1]^dim` in closed form.
    pub fn max_integral(&self, dim: usize) -> Option<f64> {
        use std::f64::consts::PI;
        match (self, dim) {
            (MeanReward::Zero, _) => Some(0.0),
            (MeanReward::OpposedLinear, 1) => Some(0.75),
            (MeanReward::OpposedLinear, 2) => Some(2.0 / 3.0),
            (MeanReward::SinePi, 1) => Some(2.0 / PI),
            (MeanReward::SinePi, 2) => Some(8.0 / (PI * PI)),
            _ => None,
        }
    }

    fn required_actions(&self) -> Option<usize> {
        match self {
            MeanReward::OpposedLinear => Some(2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransitionModel {
    /// Next state uniform on the domain, independent of `(s, a)`.
    #[default]
    Uniform,
    /// Stay put with probability `stay`, else uniform. No closed-form oracle.
    Sticky { stay: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousMdp {
    pub dim: usize,
    pub n_actions: usize,
    pub mean: MeanReward,
    /// Standard deviation of the Gaussian reward noise.
    pub noise_sd: f64,
    pub gamma: f64,
    #[serde(default)]
    pub transition: TransitionModel,
}

impl ContinuousMdp {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.dim) {
            return Err(Error::InvalidConfig(format!("dimension {} not in {{1, 2}}", self.dim)));
        }
        if self.n_actions == 0 {
            return Err(Error::InvalidConfig("no actions".into()));
        }
        if let Some(k) = self.mean.required_actions() {
            if k != self.n_actions {
                return Err(Error::DimensionMismatch {
                    expected: format!("{k} actions"),
                    got: format!("{} actions", self.n_actions),
                });
            }
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::InvalidDistribution(format!("noise sd {}", self.noise_sd)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::BadGamma(self.gamma));
        }
        if let TransitionModel::Sticky { stay } = self.transition {
            if !(0.0..=1.0).contains(&stay) {
                return Err(Error::InvalidConfig(format!("stay probability {stay}")));
            }
        }
        Ok(())
    }
}

/// Simpson's rule with adaptive bisection and Richardson correction.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Integral of `g` over `[0,1]^dim`.
fn cube_integral<G: Fn(&[f64]) -> f64>(g: &G, dim: usize, tol: f64) -> f64 {
    match dim {
        1 => adaptive_simpson(&|u| g(&[u]), 0.0, 1.0, tol),
        _ => adaptive_simpson(
            &|u| adaptive_simpson(&|v| g(&[u, v]), 0.0, 1.0, tol * 0.1),
            0.0,
            1.0,
            tol,
        ),
    }
}

/// Exact optimal action values of a continuous MDP with uniform transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousQstar {
    pub dim: usize,
    pub n_actions: usize,
    pub mean: MeanReward,
    pub gamma: f64,
    /// `∫ max_b mu` by quadrature.
    pub max_integral: f64,
    /// The same integral in closed form, when known.
    pub max_integral_closed: Option<f64>,
    /// Optimal state value averaged over the domain.
    pub vbar: f64,
}

impl ContinuousQstar {
    pub fn eval(&self, s: &[f64], a: usize) -> f64 {
        self.mean.eval(s, a) + self.gamma * self.vbar
    }

    /// Values on the lattice of `grid`.
    pub fn snapshot(&self, grid: &GridQ) -> QTable {
        let mut q = QTable::zeros(grid.n_points(), self.n_actions);
        for i in 0..grid.n_points() {
            let x = grid.point(i);
            for a in 0..self.n_actions {
                q.set(i, a, self.eval(&x, a));
            }
        }
        q
    }

    /// Largest Bellman residual over a midpoint probe lattice with about
    /// `n_probe` points, the expectation evaluated by quadrature.
    pub fn bellman_residual(&self, n_probe: usize) -> f64 {
        let max_q = |s: &[f64]| {
            (0..self.n_actions)
                .map(|b| self.eval(s, b))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let expected_next = cube_integral(&max_q, self.dim, QUADRATURE_TOL);
        let per_axis = match self.dim {
            1 => n_probe.max(1),
            _ => (n_probe as f64).sqrt().ceil().max(1.0) as usize,
        };
        let lattice = GridQ::lattice_points(self.dim, per_axis);
        lattice
            .iter()
            .flat_map(|x| {
                (0..self.n_actions)
                    .map(move |a| (self.mean.eval(x, a) + self.gamma * expected_next - self.eval(x, a)).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Builds the closed-form oracle `Q*(s,a) = mu(s,a) + gamma * vbar`.
pub fn continuous_qstar(cmdp: &ContinuousMdp) -> Result<ContinuousQstar> {
    cmdp.validate()?;
    if cmdp.transition != TransitionModel::Uniform {
        return Err(Error::UnsupportedTransition(format!("{:?}", cmdp.transition)));
    }
    let mean = cmdp.mean;
    let n_a = cmdp.n_actions;
    let max_mu = |s: &[f64]| (0..n_a).map(|b| mean.eval(s, b)).fold(f64::NEG_INFINITY, f64::max);
    let max_integral = cube_integral(&max_mu, cmdp.dim, QUADRATURE_TOL);
    Ok(ContinuousQstar {
        dim: cmdp.dim,
        n_actions: n_a,
        mean,
        gamma: cmdp.gamma,
        max_integral,
        max_integral_closed: mean.max_integral(cmdp.dim),
        vbar: max_integral / (1.0 - cmdp.gamma),
    })
}

/// Action values on a midpoint lattice of `[0,1]^dim` with `per_axis`
/// points per axis. Points are ordered with the first coordinate fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridQ {
    pub dim: usize,
    pub per_axis: usize,
    pub values: QTable,
}

impl GridQ {
    pub fn new(dim: usize, per_axis: usize, n_actions: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) || per_axis == 0 || n_actions == 0 {
            return Err(Error::InvalidConfig(format!(
                "grid dim {dim}, {per_axis} points per axis, {n_actions} actions"
            )));
        }
        let n = per_axis.pow(dim as u32);
        if n > MAX_GRID_POINTS {
            return Err(Error::InvalidConfig(format!(
                "{n} grid points exceeds {MAX_GRID_POINTS}"
            )));
        }
        Ok(GridQ {
            dim,
            per_axis,
            values: QTable::zeros(n, n_actions),
        })
    }

    pub fn n_points(&self) -> usize {
        self.values.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.values.n_actions()
    }

    /// Lattice spacing; every domain point is within `mesh() * sqrt(d) / 2`
    /// of a grid point.
    pub fn mesh(&self) -> f64 {
        1.0 / self.per_axis as f64
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        let h = self.mesh();
        let mut idx = i;
        (0..self.dim)
            .map(|_| {
                let k = idx % self.per_axis;
                idx /= self.per_axis;
                (k as f64 + 0.5) * h
            })
            .collect()
    }

    fn lattice_points(dim: usize, per_axis: usize) -> Vec<Vec<f64>> {
        let g = GridQ {
            dim,
            per_axis,
            values: QTable::zeros(per_axis.pow(dim as u32), 1),
        };
        (0..g.n_points()).map(|i| g.point(i)).collect()
    }

    /// Largest `|Q(x) - Q(y)| / |x - y|` over axis-adjacent lattice points.
    pub fn discrete_lipschitz(&self) -> f64 {
        let h = self.mesh();
        let mut worst = 0.0f64;
        let stride = |axis: usize| self.per_axis.pow(axis as u32);
        for i in 0..self.n_points() {
            for axis in 0..self.dim {
                let coord = (i / stride(axis)) % self.per_axis;
                if coord + 1 == self.per_axis {
                    continue;
                }
                let j = i + stride(axis);
                for a in 0..self.n_actions() {
                    worst = worst.max((self.values.get(i, a) - self.values.get(j, a)).abs() / h);
                }
            }
        }
        worst
    }
}

/// The finite MDP obtained by snapping next states to the lattice.
pub fn induced_mdp(cmdp: &ContinuousMdp, grid: &GridQ) -> Result<ValidatedMdp> {
    cmdp.validate()?;
    check_grid(cmdp, grid)?;
    let n = grid.n_points();
    let n_a = cmdp.n_actions;
    let uniform = 1.0 / n as f64;
    let mut trans = Vec::with_capacity(n * n_a);
    let mut rewards = Vec::with_capacity(n * n_a);
    for s in 0..n {
        let x = grid.point(s);
        for a in 0..n_a {
            let row = match cmdp.transition {
                TransitionModel::Uniform => vec![uniform; n],
                TransitionModel::Sticky { stay } => {
                    let mut r = vec![(1.0 - stay) * uniform; n];
                    r[s] += stay;
                    r
                }
            };
            trans.push(row);
            let mean = cmdp.mean.eval(&x, a);
            rewards.push(if cmdp.noise_sd > 0.0 {
                RewardDist::Gaussian {
                    mean,
                    stddev: cmdp.noise_sd,
                }
            } else {
                RewardDist::PointMass { value: mean }
            });
        }
    }
    validate_mdp(MdpSpec {
        n_states: n,
        n_actions: n_a,
        trans,
        rewards,
        gamma: cmdp.gamma,
    })
}

fn check_grid(cmdp: &ContinuousMdp, grid: &GridQ) -> Result<()> {
    if grid.dim != cmdp.dim || grid.n_actions() != cmdp.n_actions {
        return Err(Error::DimensionMismatch {
            expected: format!("dim {} with {} actions", cmdp.dim, cmdp.n_actions),
            got: format!("dim {} with {} actions", grid.dim, grid.n_actions()),
        });
    }
    Ok(())
}

/// Spreads each update over the lattice. Step sizes are indexed by the
/// accumulated kernel mass of each cell.
struct RippleRule {
    schedule: StepSchedule,
    n_actions: usize,
    /// Nonzero kernel weights `(j, f(x_s, x_j))` for each lattice point `s`.
    weights: Vec<Vec<(usize, f64)>>,
    mass: Vec<f64>,
}

impl UpdateRule for RippleRule {
    fn alpha(&self, t: u64, cell: usize, _visits: &[u64]) -> f64 {
        self.schedule.step_size_mass(t, self.mass[cell])
    }

    fn apply(&mut self, q: &mut QTable, t: u64, s: usize, a: usize, _alpha: f64, target: f64) -> bool {
        let mut finite = true;
        for &(j, w) in &self.weights[s] {
            let cell = j * self.n_actions + a;
            let coeff = w * self.schedule.step_size_mass(t, self.mass[cell]);
            let updated = (1.0 - coeff) * q.get(j, a) + coeff * target;
            q.set(j, a, updated);
            finite &= updated.is_finite();
            self.mass[cell] += w;
        }
        finite
    }
}

/// Runs ripple Q-learning on the lattice of `grid`. Exploration must be
/// uniform over lattice points and actions; errors are measured against the
/// continuous optimum restricted to the lattice.
pub fn ripple_q_run(
    cmdp: &ContinuousMdp,
    kernel: &RippleKernel,
    grid: &GridQ,
    cfg: &LearnConfig,
) -> Result<RunDiagnostics> {
    kernel.validate()?;
    if cfg.behavior != Behavior::UniformRandom {
        return Err(Error::InvalidConfig(
            "ripple learner needs uniform random behavior".into(),
        ));
    }
    let qstar = continuous_qstar(cmdp)?.snapshot(grid);
    let mdp = induced_mdp(cmdp, grid)?;
    let points: Vec<Vec<f64>> = (0..grid.n_points()).map(|i| grid.point(i)).collect();
    let weights = points
        .iter()
        .map(|x| {
            points
                .iter()
                .enumerate()
                .filter_map(|(j, y)| {
                    let w = kernel.at_distance(euclid(x, y));
                    (w > 0.0).then_some((j, w))
                })
                .collect()
        })
        .collect();
    let mut rule = RippleRule {
        schedule: cfg.schedule,
        n_actions: cmdp.n_actions,
        weights,
        mass: vec![0.0; grid.n_points() * cmdp.n_actions],
    };
    drive(&mdp, &qstar, cfg, Algorithm::QLearning, &mut rule, &mut ())
}

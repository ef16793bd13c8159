//! Deterministic and distributional policy gradients of
//! `J(θ) = Σ_x ρ(x) Q(x, π_θ(x))`, with a finite-difference oracle.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::net::SmallNet;
use crate::error::{Error, Result};
use crate::stats::Welford;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Floor of the relative-error denominator.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// A finite weighted set of states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateBatch {
    pub states: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl StateBatch {
    pub fn new(states: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if states.is_empty() || states.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} weights", states.len()),
                got: format!("{} weights", weights.len()),
            });
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!("state weights sum to {sum}")));
        }
        Ok(StateBatch { states, weights })
    }

    pub fn uniform(states: Vec<Vec<f64>>) -> Result<Self> {
        let n = states.len();
        StateBatch::new(states, vec![1.0 / n.max(1) as f64; n])
    }

    fn iter(&self) -> impl Iterator<Item = (usize, &[f64], f64)> {
        self.states
            .iter()
            .zip(&self.weights)
            .enumerate()
            .map(|(i, (s, &w))| (i, s.as_slice(), w))
    }
}

/// An action-value function that is differentiable in the action.
pub trait Critic {
    fn value(&self, s: &[f64], a: &[f64]) -> Result<f64>;
    fn grad_action(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>>;
}

/// `Q(s, a) = -|a - T s|^2` for a fixed `action_dim x state_dim` map `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticCritic {
    pub state_dim: usize,
    pub action_dim: usize,
    pub target: Vec<f64>,
}

impl QuadraticCritic {
    pub fn identity(dim: usize) -> Self {
        let mut target = vec![0.0; dim * dim];
        (0..dim).for_each(|i| target[i * dim + i] = 1.0);
        QuadraticCritic {
            state_dim: dim,
            action_dim: dim,
            target,
        }
    }

    fn residual(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.state_dim
            || a.len() != self.action_dim
            || self.target.len() != self.state_dim * self.action_dim
        {
            return Err(Error::DimensionMismatch {
                expected: format!("state {} action {}", self.state_dim, self.action_dim),
                got: format!("state {} action {}", s.len(), a.len()),
            });
        }
        Ok((0..self.action_dim)
            .map(|i| {
                let row = &self.target[i * self.state_dim..(i + 1) * self.state_dim];
                a[i] - row.iter().zip(s).map(|(t, x)| t * x).sum::<f64>()
            })
            .collect())
    }
}

impl Critic for QuadraticCritic {
    fn value(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        Ok(-self.residual(s, a)?.iter().map(|r| r * r).sum::<f64>())
    }

    fn grad_action(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        Ok(self.residual(s, a)?.iter().map(|r| -2.0 * r).collect())
    }
}

/// A network critic fed the concatenation `(s, a)` with scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCritic {
    pub net: SmallNet,
}

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.concat()
}

fn scalar_net_grad(net: &SmallNet, input: &[f64], from: usize, len: usize) -> Result<Vec<f64>> {
    if net.output_dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: "scalar output".into(),
            got: format!("output of length {}", net.output_dim()),
        });
    }
    let trace = net.forward_trace(input)?;
    if let Some((layer, unit)) = trace.kink(net) {
        return Err(Error::NonSmoothAtPoint { state: 0, layer, unit });
    }
    let (_, g) = net.backward(&trace, &[1.0])?;
    Ok(g[from..from + len].to_vec())
}

impl Critic for NetCritic {
    fn value(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        Ok(self.net.forward(&concat(&[s, a]))?[0])
    }

    fn grad_action(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        scalar_net_grad(&self.net, &concat(&[s, a]), s.len(), a.len())
    }
}

/// `c * Q(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaled<C> {
    pub inner: C,
    pub factor: f64,
}

impl<C: Critic> Critic for Scaled<C> {
    fn value(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        Ok(self.factor * self.inner.value(s, a)?)
    }

    fn grad_action(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .inner
            .grad_action(s, a)?
            .into_iter()
            .map(|g| self.factor * g)
            .collect())
    }
}

fn with_state(e: Error, state: usize) -> Error {
    match e {
        Error::NonSmoothAtPoint { layer, unit, .. } => Error::NonSmoothAtPoint { state, layer, unit },
        other => other,
    }
}

pub fn policy_value<C: Critic + ?Sized>(policy: &SmallNet, critic: &C, rho: &StateBatch) -> Result<f64> {
    let mut j = 0.0;
    for (_, s, w) in rho.iter() {
        let a = policy.forward(s)?;
        j += w * critic.value(s, &a)?;
    }
    Ok(j)
}

/// Chain-rule gradient `Σ_x ρ(x) (∂π/∂θ)^T ∇_a Q(x, a)|_{a = π(x)}`.
pub fn policy_grad_analytic<C: Critic + ?Sized>(policy: &SmallNet, critic: &C, rho: &StateBatch) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; policy.n_params()];
    for (i, s, w) in rho.iter() {
        let trace = policy.forward_trace(s)?;
        if let Some((layer, unit)) = trace.kink(policy) {
            return Err(Error::NonSmoothAtPoint { state: i, layer, unit });
        }
        let dq = critic.grad_action(s, &trace.output).map_err(|e| with_state(e, i))?;
        let (pg, _) = policy.backward(&trace, &dq)?;
        grad.iter_mut().zip(&pg).for_each(|(g, p)| *g += w * p);
    }
    Ok(grad)
}

/// Retries [`policy_grad_analytic`] after nudging any state that lands on a
/// relu kink. Returns the gradient, the batch actually used and the number of
/// nudges.
pub fn policy_grad_analytic_jittered<C: Critic + ?Sized, R: Rng + ?Sized>(
    policy: &SmallNet,
    critic: &C,
    rho: &StateBatch,
    scale: f64,
    max_tries: u32,
    rng: &mut R,
) -> Result<(Vec<f64>, StateBatch, u32)> {
    let mut batch = rho.clone();
    let mut tries = 0;
    loop {
        match policy_grad_analytic(policy, critic, &batch) {
            Err(Error::NonSmoothAtPoint { state, layer, unit }) if tries < max_tries => {
                log::warn!("kink at state {state} (layer {layer}, unit {unit}); perturbing the state");
                batch.states[state]
                    .iter_mut()
                    .for_each(|x| *x += rng.random_range(-scale..=scale));
                tries += 1;
            }
            other => return other.map(|g| (g, batch, tries)),
        }
    }
}

/// Central differences of `J` in each parameter.
pub fn policy_grad_fd<C: Critic + ?Sized>(policy: &SmallNet, critic: &C, rho: &StateBatch, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidConfig(format!("finite-difference step {h}")));
    }
    let theta = policy.params();
    let mut probe = policy.clone();
    let mut shifted = theta.clone();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        shifted[i] = theta[i] + h;
        probe.set_params(&shifted)?;
        let up = policy_value(&probe, critic, rho)?;
        shifted[i] = theta[i] - h;
        probe.set_params(&shifted)?;
        let down = policy_value(&probe, critic, rho)?;
        shifted[i] = theta[i];
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub index: usize,
    pub analytic: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub finite_difference: Vec<f64>,
    pub max_rel_error: f64,
    pub table: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn from_pair(analytic: Vec<f64>, finite_difference: Vec<f64>) -> Result<Self> {
        if analytic.len() != finite_difference.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} entries", analytic.len()),
                got: format!("{} entries", finite_difference.len()),
            });
        }
        let table: Vec<ParamCheck> = analytic
            .iter()
            .zip(&finite_difference)
            .enumerate()
            .map(|(index, (&a, &f))| ParamCheck {
                index,
                analytic: a,
                finite_difference: f,
                rel_error: relative_error(a, f),
            })
            .collect();
        let max_rel_error = table.iter().map(|r| r.rel_error).fold(0.0, f64::max);
        Ok(GradCheckReport {
            analytic,
            finite_difference,
            max_rel_error,
            table,
        })
    }
}

pub fn grad_check<C: Critic + ?Sized>(
    policy: &SmallNet,
    critic: &C,
    rho: &StateBatch,
    h: f64,
) -> Result<GradCheckReport> {
    let analytic = policy_grad_analytic(policy, critic, rho)?;
    let fd = policy_grad_fd(policy, critic, rho, h)?;
    GradCheckReport::from_pair(analytic, fd)
}

/// A random return `Z(s, a, ω)` with `ω` standard normal.
pub trait StochasticCritic {
    fn noise_dim(&self) -> usize;
    fn sample_value(&self, s: &[f64], a: &[f64], omega: &[f64]) -> Result<f64>;
    fn sample_grad_action(&self, s: &[f64], a: &[f64], omega: &[f64]) -> Result<Vec<f64>>;
}

/// `Z = Q(s, a) + sigma * ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveNoise<C> {
    pub critic: C,
    pub sigma: f64,
}

impl<C: Critic> StochasticCritic for AdditiveNoise<C> {
    fn noise_dim(&self) -> usize {
        1
    }

    fn sample_value(&self, s: &[f64], a: &[f64], omega: &[f64]) -> Result<f64> {
        Ok(self.critic.value(s, a)? + self.sigma * omega[0])
    }

    fn sample_grad_action(&self, s: &[f64], a: &[f64], _omega: &[f64]) -> Result<Vec<f64>> {
        self.critic.grad_action(s, a)
    }
}

/// `Z = (1 + scale * ω) * Q(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplicativeNoise<C> {
    pub critic: C,
    pub scale: f64,
}

impl<C: Critic> StochasticCritic for MultiplicativeNoise<C> {
    fn noise_dim(&self) -> usize {
        1
    }

    fn sample_value(&self, s: &[f64], a: &[f64], omega: &[f64]) -> Result<f64> {
        Ok((1.0 + self.scale * omega[0]) * self.critic.value(s, a)?)
    }

    fn sample_grad_action(&self, s: &[f64], a: &[f64], omega: &[f64]) -> Result<Vec<f64>> {
        let m = 1.0 + self.scale * omega[0];
        Ok(self.critic.grad_action(s, a)?.into_iter().map(|g| m * g).collect())
    }
}

/// A scalar network fed `(s, a, ω)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseInputNet {
    pub net: SmallNet,
    pub noise_dim: usize,
}

impl StochasticCritic for NoiseInputNet {
    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn sample_value(&self, s: &[f64], a: &[f64], omega: &[f64]) -> Result<f64> {
        Ok(self.net.forward(&concat(&[s, a, omega]))?[0])
    }

    fn sample_grad_action(&self, s: &[f64], a: &[f64], omega: &[f64]) -> Result<Vec<f64>> {
        scalar_net_grad(&self.net, &concat(&[s, a, omega]), s.len(), a.len())
    }
}

/// Monte-Carlo policy gradient through a random return, with the per-entry
/// standard error of the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionalGrad {
    pub grad: Vec<f64>,
    pub std_error: Vec<f64>,
    pub n_samples: usize,
}

/// Averages, over `n_samples` independent noise draws per state, the
/// chain-rule gradient with `∇_a Z` in place of `∇_a Q`.
pub fn distributional_grad<Z: StochasticCritic + ?Sized, R: Rng + ?Sized>(
    znet: &Z,
    policy: &SmallNet,
    rho: &StateBatch,
    n_samples: usize,
    rng: &mut R,
) -> Result<DistributionalGrad> {
    if n_samples < 1000 {
        return Err(Error::InvalidConfig(format!("{n_samples} samples, need at least 1000")));
    }
    let traces = rho
        .iter()
        .map(|(i, s, _)| {
            let t = policy.forward_trace(s)?;
            match t.kink(policy) {
                Some((layer, unit)) => Err(Error::NonSmoothAtPoint { state: i, layer, unit }),
                None => Ok(t),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = vec![Welford::default(); policy.n_params()];
    let mut omega = vec![0.0; znet.noise_dim()];
    let mut sample = vec![0.0; policy.n_params()];
    for _ in 0..n_samples {
        sample.iter_mut().for_each(|g| *g = 0.0);
        for ((i, s, w), trace) in rho.iter().zip(&traces) {
            omega.iter_mut().for_each(|o| *o = rng.sample(StandardNormal));
            let dz = znet
                .sample_grad_action(s, &trace.output, &omega)
                .map_err(|e| with_state(e, i))?;
            let (pg, _) = policy.backward(trace, &dz)?;
            sample.iter_mut().zip(&pg).for_each(|(g, p)| *g += w * p);
        }
        acc.iter_mut().zip(&sample).for_each(|(a, &g)| a.push(g));
    }
    Ok(DistributionalGrad {
        grad: acc.iter().map(Welford::mean).collect(),
        std_error: acc.iter().map(Welford::std_error).collect(),
        n_samples,
    })
}

//! Policy-gradient identities on small networks: the chain-rule gradient of a
//! deterministic policy against a fixed critic, its distributional form, and
//! central finite differences as the reference.

pub mod grad;
pub mod net;

pub use grad::{
    distributional_grad, grad_check, policy_grad_analytic, policy_grad_analytic_jittered, policy_grad_fd, policy_value,
    relative_error, AdditiveNoise, Critic, DistributionalGrad, GradCheckReport, MultiplicativeNoise, NetCritic,
    NoiseInputNet, QuadraticCritic, Scaled, StateBatch, StochasticCritic,
};
pub use net::{empirical_lipschitz, lipschitz_bound, Activation, Layer, SmallNet};

//! Small dense networks with hand-written reverse-mode derivatives.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pre-activations closer to a relu kink than this are treated as on it.
pub const KINK_TOL: f64 = 1e-7;

/// Supremum of the swish derivative `d/dz [z * sigmoid(z)]`, attained near
/// `z = 2.3994`.
pub const SWISH_LIPSCHITZ: f64 = 1.099_839_320_128_867;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Activation {
    Identity,
    Sigmoid,
    Relu,
    LeakyRelu { slope: f64 },
    Swish,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Activation {
    pub fn apply(&self, z: f64) -> f64 {
        match *self {
            Activation::Identity => z,
            Activation::Sigmoid => sigmoid(z),
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu { slope } => {
                if z >= 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Activation::Swish => z * sigmoid(z),
        }
    }

    pub fn derivative(&self, z: f64) -> f64 {
        match *self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if z >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Swish => {
                let s = sigmoid(z);
                s * (1.0 + z * (1.0 - s))
            }
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            Activation::Identity | Activation::Relu => 1.0,
            Activation::Sigmoid => 0.25,
            Activation::LeakyRelu { slope } => slope.abs().max(1.0),
            Activation::Swish => SWISH_LIPSCHITZ,
        }
    }

    fn has_kink(&self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu { .. })
    }
}

/// `y = act(W x + b)` with `W` stored row-major as `n_out x n_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(n_in: usize, n_out: usize, weights: Vec<f64>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if weights.len() != n_in * n_out || bias.len() != n_out || n_in == 0 || n_out == 0 {
            return Err(Error::DimensionMismatch {
                expected: format!("{n_out}x{n_in} weights and {n_out} biases"),
                got: format!("{} weights and {} biases", weights.len(), bias.len()),
            });
        }
        Ok(Layer {
            n_in,
            n_out,
            weights,
            bias,
            activation,
        })
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|i| {
                let row = &self.weights[i * self.n_in..(i + 1) * self.n_in];
                row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[i]
            })
            .collect()
    }

    /// Spectral norm of `W` by power iteration on `W^T W`.
    pub fn operator_norm(&self) -> f64 {
        let (m, n) = (self.n_out, self.n_in);
        let w = &self.weights;
        let mut v: Vec<f64> = (0..n).map(|j| 1.0 + 0.01 * j as f64).collect();
        let mut lambda = 0.0;
        for _ in 0..100_000 {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let wv: Vec<f64> = (0..m).map(|i| (0..n).map(|j| w[i * n + j] * v[j]).sum()).collect();
            let next: Vec<f64> = (0..n).map(|j| (0..m).map(|i| w[i * n + j] * wv[i]).sum()).collect();
            let est = v.iter().zip(&next).map(|(a, b)| a * b).sum::<f64>();
            v = next;
            let converged = (est - lambda).abs() <= 1e-8 * est.abs().max(f64::MIN_POSITIVE);
            lambda = est;
            if converged {
                break;
            }
        }
        lambda.max(0.0).sqrt()
    }
}

/// A feed-forward stack of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmallNet {
    pub layers: Vec<Layer>,
}

/// Inputs and pre-activations of every layer from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl ForwardTrace {
    /// First unit sitting on a relu kink, as `(layer, unit)`.
    pub fn kink(&self, net: &SmallNet) -> Option<(usize, usize)> {
        net.layers
            .iter()
            .zip(&self.pre)
            .enumerate()
            .find_map(|(l, (layer, z))| {
                if !layer.activation.has_kink() {
                    return None;
                }
                z.iter().position(|v| v.abs() < KINK_TOL).map(|u| (l, u))
            })
    }
}

impl SmallNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network without layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].n_out != pair[1].n_in {
                return Err(Error::DimensionMismatch {
                    expected: format!("layer input {}", pair[0].n_out),
                    got: format!("layer input {}", pair[1].n_in),
                });
            }
        }
        if layers
            .iter()
            .any(|l| l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidConfig("non-finite network parameter".into()));
        }
        Ok(SmallNet { layers })
    }

    /// Random net with the given layer widths; weights uniform on `±scale`.
    pub fn random<R: Rng + ?Sized>(
        widths: &[usize],
        activations: &[Activation],
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() != activations.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: format!("{} activations", widths.len().saturating_sub(1)),
                got: format!("{} activations", activations.len()),
            });
        }
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-scale..=scale)).collect::<Vec<_>>();
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| Layer::new(w[0], w[1], draw(w[0] * w[1]), draw(w[1]), act))
            .collect::<Result<Vec<_>>>()?;
        SmallNet::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} parameters", self.n_params()),
                got: format!("{} parameters", params.len()),
            });
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weights.len());
            let (b, tail) = tail.split_at(l.bias.len());
            l.weights.copy_from_slice(w);
            l.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: format!("input of length {}", self.input_dim()),
                got: format!("input of length {}", x.len()),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.output)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for l in &self.layers {
            let z = l.pre_activation(&h);
            let next = z.iter().map(|&v| l.activation.apply(v)).collect();
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        Ok(ForwardTrace { inputs, pre, output: h })
    }

    /// Vector-Jacobian products `(dy^T dy/dθ, dy^T dy/dx)` at the traced point.
    pub fn backward(&self, trace: &ForwardTrace, dy: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if dy.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: format!("cotangent of length {}", self.output_dim()),
                got: format!("cotangent of length {}", dy.len()),
            });
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        let mut g = dy.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let dz: Vec<f64> = g
                .iter()
                .zip(&trace.pre[l])
                .map(|(gi, &z)| gi * layer.activation.derivative(z))
                .collect();
            let x = &trace.inputs[l];
            let mut pg = Vec::with_capacity(layer.n_params());
            for dzi in &dz {
                pg.extend(x.iter().map(|xj| dzi * xj));
            }
            pg.extend_from_slice(&dz);
            grads[l] = pg;
            g = (0..layer.n_in)
                .map(|j| {
                    (0..layer.n_out)
                        .map(|i| layer.weights[i * layer.n_in + j] * dz[i])
                        .sum()
                })
                .collect();
        }
        Ok((grads.concat(), g))
    }
}

/// Upper bound on the Lipschitz constant: product of layer operator norms
/// and activation constants.
pub fn lipschitz_bound(net: &SmallNet) -> f64 {
    net.layers
        .iter()
        .map(|l| l.operator_norm() * l.activation.lipschitz())
        .product()
}

/// Largest difference quotient `|f(x) - f(y)| / |x - y|` over random pairs
/// in `[-radius, radius]^d`.
pub fn empirical_lipschitz<R: Rng + ?Sized>(net: &SmallNet, n_pairs: usize, radius: f64, rng: &mut R) -> f64 {
    let d = net.input_dim();
    let mut worst = 0.0f64;
    for _ in 0..n_pairs {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-radius..=radius)).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(-radius..=radius)).collect();
        let dx = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if dx == 0.0 {
            continue;
        }
        let fx = net.forward(&x).expect("input length matches");
        let fy = net.forward(&y).expect("input length matches");
        let df = fx.iter().zip(&fy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        worst = worst.max(df / dx);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn swish_constant_is_sup_of_derivative() {
        let sup = (0..200_000)
            .map(|i| Activation::Swish.derivative(-10.0 + i as f64 * 1e-4))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(sup <= SWISH_LIPSCHITZ && SWISH_LIPSCHITZ - sup < 1e-6, "{sup}");
    }

    #[test]
    fn activation_derivatives_match_differences() {
        let acts = [
            Activation::Identity,
            Activation::Sigmoid,
            Activation::Relu,
            Activation::LeakyRelu { slope: 0.1 },
            Activation::Swish,
        ];
        for act in acts {
            for z in [-2.3, -0.4, 0.7, 3.1] {
                let fd = (act.apply(z + 1e-6) - act.apply(z - 1e-6)) / 2e-6;
                assert!((fd - act.derivative(z)).abs() < 1e-8, "{act:?} at {z}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = SmallNet::random(&[3, 4, 2], &[Activation::Swish, Activation::Sigmoid], 1.0, &mut rng).unwrap();
        let x = [0.3, -0.7, 1.1];
        let dy = [0.4, -1.3];
        let trace = net.forward_trace(&x).unwrap();
        let (pg, xg) = net.backward(&trace, &dy).unwrap();
        let f = |n: &SmallNet, x: &[f64]| n.forward(x).unwrap().iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>();
        let theta = net.params();
        for i in 0..theta.len() {
            let (mut p, mut m) = (net.clone(), net.clone());
            let mut tp = theta.clone();
            tp[i] += 1e-6;
            p.set_params(&tp).unwrap();
            tp[i] -= 2e-6;
            m.set_params(&tp).unwrap();
            let fd = (f(&p, &x) - f(&m, &x)) / 2e-6;
            assert!((fd - pg[i]).abs() < 1e-8, "param {i}");
        }
        for j in 0..3 {
            let (mut xp, mut xm) = (x, x);
            xp[j] += 1e-6;
            xm[j] -= 1e-6;
            let fd = (f(&net, &xp) - f(&net, &xm)) / 2e-6;
            assert!((fd - xg[j]).abs() < 1e-8, "input {j}");
        }
    }

    #[test]
    fn params_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = SmallNet::random(&[2, 3, 1], &[Activation::Relu, Activation::Identity], 1.0, &mut rng).unwrap();
        let p: Vec<f64> = (0..net.n_params()).map(|i| i as f64).collect();
        net.set_params(&p).unwrap();
        assert_eq!(net.params(), p);
        assert_eq!(net.n_params(), 2 * 3 + 3 + 3 + 1);
        assert!(net.set_params(&p[1..]).is_err());
    }

    #[test]
    fn rejects_broken_chains() {
        let a = Layer::new(2, 3, vec![0.0; 6], vec![0.0; 3], Activation::Relu).unwrap();
        let b = Layer::new(2, 1, vec![0.0; 2], vec![0.0], Activation::Identity).unwrap();
        assert!(matches!(
            SmallNet::new(vec![a, b]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(Layer::new(2, 3, vec![0.0; 5], vec![0.0; 3], Activation::Relu).is_err());
    }

    #[test]
    fn lipschitz_bound_examples() {
        let one = SmallNet::new(vec![
            Layer::new(1, 1, vec![2.0], vec![0.5], Activation::Identity).unwrap()
        ])
        .unwrap();
        assert!((lipschitz_bound(&one) - 2.0).abs() < 1e-9);
        let two = SmallNet::new(vec![
            Layer::new(2, 2, vec![2.0, 0.0, 0.0, 1.0], vec![0.0; 2], Activation::Relu).unwrap(),
            Layer::new(2, 2, vec![0.0, 3.0, 1.0, 0.0], vec![0.0; 2], Activation::Relu).unwrap(),
        ])
        .unwrap();
        assert!((lipschitz_bound(&two) - 6.0).abs() < 1e-6);
    }

    #[test]
    fn operator_norm_of_rank_one_matrix() {
        let l = Layer::new(2, 2, vec![1.0, 2.0, 2.0, 4.0], vec![0.0; 2], Activation::Identity).unwrap();
        assert!((l.operator_norm() - 5.0).abs() < 1e-7);
    }

    #[test]
    fn empirical_quotients_respect_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for acts in [
            [Activation::Sigmoid, Activation::Identity],
            [Activation::Swish, Activation::Relu],
            [Activation::LeakyRelu { slope: 0.2 }, Activation::Sigmoid],
        ] {
            let net = SmallNet::random(&[3, 5, 2], &acts, 1.5, &mut rng).unwrap();
            let bound = lipschitz_bound(&net);
            let emp = empirical_lipschitz(&net, 10_000, 2.0, &mut rng);
            assert!(emp <= bound + 1e-9, "{acts:?}: {emp} > {bound}");
        }
    }

    #[test]
    fn kink_detection() {
        let net = SmallNet::new(vec![Layer::new(1, 1, vec![1.0], vec![0.0], Activation::Relu).unwrap()]).unwrap();
        assert_eq!(net.forward_trace(&[0.0]).unwrap().kink(&net), Some((0, 0)));
        assert_eq!(net.forward_trace(&[0.5]).unwrap().kink(&net), None);
    }
}

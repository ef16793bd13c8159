use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::{MdpSpec, RewardDist};

/// Noise family for generated instances. Means are drawn separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardFamily {
    Gaussian { stddev: f64 },
    Uniform { half_width: f64 },
    StudentT { dof: f64, scale: f64 },
    ShiftedExponential { rate: f64 },
    PointMass,
}

impl RewardFamily {
    fn with_mean(self, mean: f64) -> RewardDist {
        match self {
            RewardFamily::Gaussian { stddev } => RewardDist::Gaussian { mean, stddev },
            RewardFamily::Uniform { half_width } => RewardDist::Uniform {
                lo: mean - half_width,
                hi: mean + half_width,
            },
            RewardFamily::StudentT { dof, scale } => RewardDist::StudentT { dof, loc: mean, scale },
            RewardFamily::ShiftedExponential { rate } => RewardDist::ShiftedExponential {
                rate,
                shift: mean - 1.0 / rate,
            },
            RewardFamily::PointMass => RewardDist::PointMass { value: mean },
        }
    }
}

/// Random benchmark instance: transition rows from a symmetric Dirichlet(1)
/// (normalized unit exponentials), reward means uniform on [-1, 1].
///
/// Deterministic in `seed`. With a single state every row is `[1.0]`; for
/// `PointMass` with one state and one action the result is still random in
/// its reward value unless the caller overrides it.
pub fn generate_mdp(n_states: usize, n_actions: usize, family: RewardFamily, seed: u64) -> MdpSpec {
    assert!(n_states >= 1 && n_actions >= 1, "sizes must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_cells = n_states * n_actions;
    let mut trans = Vec::with_capacity(n_cells);
    let mut rewards = Vec::with_capacity(n_cells);
    for _ in 0..n_cells {
        let raw: Vec<f64> = (0..n_states).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = raw.iter().sum();
        let mut row: Vec<f64> = raw.iter().map(|x| x / total).collect();
        // Push the rounding residue into the largest entry so the row sums to
        // one to within an ulp.
        let residue = 1.0 - row.iter().sum::<f64>();
        let big = (0..n_states).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap_or(0);
        row[big] += residue;
        trans.push(row);
        let mean: f64 = rng.random_range(-1.0..1.0);
        rewards.push(family.with_mean(mean));
    }
    MdpSpec {
        n_states,
        n_actions,
        trans,
        rewards,
        gamma: 0.9,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{validate_mdp, MdpFile};

    #[test]
    fn trivial_instance() {
        let spec = generate_mdp(1, 1, RewardFamily::PointMass, 0);
        assert_eq!(spec.trans, vec![vec![1.0]]);
        assert!(matches!(spec.rewards[0], RewardDist::PointMass { .. }));
        validate_mdp(spec).unwrap();
    }

    #[test]
    fn same_seed_same_bytes() {
        let f = RewardFamily::Gaussian { stddev: 1.0 };
        let a = MdpFile::from(&generate_mdp(4, 3, f, 9)).to_toml();
        let b = MdpFile::from(&generate_mdp(4, 3, f, 9)).to_toml();
        assert_eq!(a, b);
        let c = MdpFile::from(&generate_mdp(4, 3, f, 10)).to_toml();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_instances_validate() {
        validate_mdp(generate_mdp(5, 3, RewardFamily::Gaussian { stddev: 1.0 }, 7)).unwrap();
        for seed in 0..50 {
            for fam in [
                RewardFamily::Uniform { half_width: 2.0 },
                RewardFamily::StudentT { dof: 3.0, scale: 1.0 },
                RewardFamily::ShiftedExponential { rate: 1.0 },
                RewardFamily::PointMass,
            ] {
                validate_mdp(generate_mdp(1 + seed as usize % 7, 1 + seed as usize % 4, fam, seed)).unwrap();
            }
        }
    }
}

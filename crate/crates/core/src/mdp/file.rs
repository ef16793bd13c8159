//! TOML schema for MDP specs.
//!
//! ```toml
//! n_states = 2
//! n_actions = 1
//! gamma = 0.9
//!
//! [[cells]]
//! state = 0
//! action = 0
//! trans = [0.5, 0.5]
//! reward = { family = "gaussian", mean = 0.0, stddev = 1.0 }
//! ```
//!
//! Every `(state, action)` pair must appear exactly once. Unknown keys are
//! rejected.

use serde::{Deserialize, Serialize};

use super::{MdpSpec, RewardDist};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub cells: Vec<CellSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub state: usize,
    pub action: usize,
    pub trans: Vec<f64>,
    pub reward: RewardDist,
}

impl MdpFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("MdpFile always serializes")
    }

    pub fn into_spec(self) -> Result<MdpSpec> {
        let n_cells = self.n_states * self.n_actions;
        let mut trans: Vec<Option<Vec<f64>>> = vec![None; n_cells];
        let mut rewards: Vec<Option<RewardDist>> = vec![None; n_cells];
        for c in self.cells {
            if c.state >= self.n_states || c.action >= self.n_actions {
                return Err(Error::InvalidConfig(format!(
                    "cell (s={}, a={}) outside {}x{}",
                    c.state, c.action, self.n_states, self.n_actions
                )));
            }
            let idx = c.state * self.n_actions + c.action;
            if trans[idx].is_some() {
                return Err(Error::InvalidConfig(format!(
                    "cell (s={}, a={}) given twice",
                    c.state, c.action
                )));
            }
            trans[idx] = Some(c.trans);
            rewards[idx] = Some(c.reward);
        }
        let missing = |i: usize| {
            Error::InvalidConfig(format!(
                "cell (s={}, a={}) missing",
                i / self.n_actions.max(1),
                i % self.n_actions.max(1)
            ))
        };
        let trans = trans
            .into_iter()
            .enumerate()
            .map(|(i, t)| t.ok_or_else(|| missing(i)))
            .collect::<Result<Vec<_>>>()?;
        let rewards = rewards
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.ok_or_else(|| missing(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(MdpSpec {
            n_states: self.n_states,
            n_actions: self.n_actions,
            trans,
            rewards,
            gamma: self.gamma,
        })
    }
}

impl From<&MdpSpec> for MdpFile {
    fn from(spec: &MdpSpec) -> Self {
        let cells = (0..spec.n_states)
            .flat_map(|s| (0..spec.n_actions).map(move |a| (s, a)))
            .map(|(s, a)| {
                let i = spec.cell(s, a);
                CellSpec {
                    state: s,
                    action: a,
                    trans: spec.trans[i].clone(),
                    reward: spec.rewards[i],
                }
            })
            .collect();
        MdpFile {
            n_states: spec.n_states,
            n_actions: spec.n_actions,
            gamma: spec.gamma,
            cells,
        }
    }
}

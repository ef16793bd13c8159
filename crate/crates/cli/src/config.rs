//! TOML experiment configuration. Relative paths resolve against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use qconv_core::diagnostics::Conditioning;
use qconv_core::learn::QInit;
use qconv_core::mdp::{generate_mdp, MdpFile, RewardFamily};
use qconv_core::pg::Activation;
use qconv_core::recurrences::Perturbation;
use qconv_core::ripple::{ContinuousMdp, RippleKernel};
use qconv_core::{validate_mdp, Behavior, LearnConfig, RewardDist, StepSchedule, ValidatedMdp};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_record_every() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Number of replicas run concurrently.
    #[serde(default)]
    pub parallel: Option<usize>,
    /// Output directory.
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub mdp: Option<MdpSource>,
    pub learn: Option<LearnSection>,
    pub solve: Option<SolveSection>,
    pub decompose: Option<DecomposeSection>,
    pub bounds: Option<BoundsSection>,
    pub lemmas: Option<LemmasSection>,
    pub ripple: Option<RippleSection>,
    pub pgcheck: Option<PgSection>,
    pub report: Option<ReportSection>,
}

/// Either an MDP file or a generated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSource {
    pub file: Option<PathBuf>,
    pub generate: Option<GenerateSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub reward: RewardFamily,
    pub seed: u64,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnSection {
    #[serde(default)]
    pub schedule: StepSchedule,
    pub behavior: Behavior,
    pub horizon: u64,
    #[serde(default)]
    pub q_init: QInit,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    /// Pass when the median final/initial error ratio is below this.
    pub max_final_ratio: Option<f64>,
}

impl LearnSection {
    pub fn for_seed(&self, seed: u64) -> LearnConfig {
        LearnConfig {
            schedule: self.schedule,
            behavior: self.behavior,
            horizon: self.horizon,
            q_init: self.q_init.clone(),
            seed,
            record_every: self.record_every,
        }
    }
}

fn default_solve_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    #[serde(default = "default_solve_tol")]
    pub tol: f64,
}

impl Default for SolveSection {
    fn default() -> Self {
        SolveSection {
            tol: default_solve_tol(),
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeSection {
    #[serde(default = "one")]
    pub k0: f64,
}

impl Default for DecomposeSection {
    fn default() -> Self {
        DecomposeSection { k0: 1.0 }
    }
}

fn default_replicas() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    #[serde(default = "one")]
    pub k0: f64,
    #[serde(default = "default_replicas")]
    pub n_runs: usize,
}

impl Default for BoundsSection {
    fn default() -> Self {
        BoundsSection { k0: 1.0, n_runs: 100 }
    }
}

fn default_stride() -> u64 {
    1000
}

/// One deterministic recurrence or the moment-inequality check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LemmasSection {
    /// `x_{n+1} = (1 - a_n) x_n + gamma a_n |x_n|`.
    Contraction {
        x0: f64,
        gamma: f64,
        schedule: StepSchedule,
        n_steps: u64,
        #[serde(default = "default_stride")]
        stride: u64,
        /// Largest accepted relative deviation from the closed form.
        #[serde(default = "default_rel_tol")]
        tol: f64,
    },
    /// `x_{n+1} = (1 - a_n) x_n + gamma a_n (|x_n| + eps)`.
    Offset {
        x0: f64,
        gamma: f64,
        eps: f64,
        schedule: StepSchedule,
        n_steps: u64,
        #[serde(default = "default_stride")]
        stride: u64,
        #[serde(default = "default_limit_tol")]
        tol: f64,
    },
    /// Offset recurrence with a vanishing perturbation `c_n`.
    Vanishing {
        x0: f64,
        gamma: f64,
        schedule: StepSchedule,
        perturbation: Perturbation,
        n_steps: u64,
        #[serde(default = "default_stride")]
        stride: u64,
    },
    /// Any perturbation, compared to its limit `gamma c / (1 - gamma)`.
    Perturbed {
        x0: f64,
        gamma: f64,
        schedule: StepSchedule,
        perturbation: Perturbation,
        n_steps: u64,
        restart: u64,
        #[serde(default = "default_stride")]
        stride: u64,
        #[serde(default = "default_control_tol")]
        tol: f64,
    },
    /// `E[(Y - E[Y|G])^2] <= 4 E[Y^2]`.
    Moment {
        distributions: Vec<RewardDist>,
        n_samples: usize,
        conditioning: Conditioning,
    },
}

fn default_rel_tol() -> f64 {
    1e-12
}

fn default_limit_tol() -> f64 {
    1e-4
}

fn default_control_tol() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RippleSection {
    pub cmdp: ContinuousMdp,
    pub kernel: RippleKernel,
    pub per_axis: usize,
    #[serde(default)]
    pub schedule: StepSchedule,
    pub horizon: u64,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    #[serde(default)]
    pub q_init: QInit,
    /// Pass when the median final sup error is below this.
    pub max_final_error: Option<f64>,
}

fn default_widths() -> Vec<usize> {
    vec![2, 4, 2]
}

fn default_activations() -> Vec<Activation> {
    vec![Activation::Sigmoid, Activation::Identity]
}

fn default_pg_tol() -> f64 {
    1e-4
}

fn default_fd_step() -> f64 {
    qconv_core::pg::grad::FD_STEP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgSection {
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "default_activations")]
    pub activations: Vec<Activation>,
    #[serde(default = "one")]
    pub weight_scale: f64,
    #[serde(default = "default_pg_states")]
    pub n_states: usize,
    /// Random parameter draws per seed.
    #[serde(default = "default_draws")]
    pub n_draws: usize,
    #[serde(default = "default_fd_step")]
    pub h: f64,
    #[serde(default = "default_pg_tol")]
    pub tol: f64,
    #[serde(default = "one")]
    pub noise_sigma: f64,
    #[serde(default = "default_mc")]
    pub n_samples: usize,
    #[serde(default = "default_mc")]
    pub lipschitz_pairs: usize,
}

fn default_pg_states() -> usize {
    8
}

fn default_draws() -> usize {
    20
}

fn default_mc() -> usize {
    10_000
}

fn default_plot_name() -> String {
    "convergence.svg".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    pub inputs: Vec<PathBuf>,
    #[serde(default = "default_plot_name")]
    pub output: String,
}

/// A parsed config together with its raw bytes and base directory.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub bytes: Vec<u8>,
    pub base: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, bytes, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn mdp(&self) -> CliResult<ValidatedMdp> {
        let src = self.config.mdp.as_ref().ok_or_else(|| missing("mdp"))?;
        let spec = match (&src.file, &src.generate) {
            (Some(file), None) => {
                let path = self.resolve(file);
                let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                MdpFile::parse(&text)?.into_spec()?
            }
            (None, Some(g)) => {
                let mut spec = generate_mdp(g.n_states, g.n_actions, g.reward, g.seed);
                if let Some(gamma) = g.gamma {
                    spec.gamma = gamma;
                }
                spec
            }
            _ => {
                return Err(CliError::Config(
                    "[mdp] needs exactly one of `file` or `generate`".into(),
                ))
            }
        };
        Ok(validate_mdp(spec)?)
    }

    pub fn learn(&self) -> CliResult<&LearnSection> {
        self.config.learn.as_ref().ok_or_else(|| missing("learn"))
    }
}

pub(crate) fn missing(section: &str) -> CliError {
    CliError::Config(format!("missing [{section}] section"))
}

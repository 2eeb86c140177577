use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use surftension_core::cellproblem::SolveOptions;
use surftension_core::potential::PotentialSpec;
use surftension_core::sharpinterface::SurfactantMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    CheckPotential,
    #[serde(rename = "phi-1d")]
    Phi1d,
    #[serde(rename = "phi-2d")]
    Phi2d,
    Sweep,
    Recovery,
    LiminfProbe,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::CheckPotential => "check-potential",
            Task::Phi1d => "phi-1d",
            Task::Phi2d => "phi-2d",
            Task::Sweep => "sweep",
            Task::Recovery => "recovery",
            Task::LiminfProbe => "liminf-probe",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolveOptions,
    /// Budgets for phi-1d, phi-2d and sweep.
    #[serde(default)]
    pub gammas: Vec<f64>,
    /// 1D resolutions, coarse to fine.
    #[serde(default = "default_schedule")]
    pub schedule: Vec<usize>,
    #[serde(default)]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub recovery: Option<RecoverySection>,
    #[serde(default)]
    pub probe: Option<ProbeSection>,
    #[serde(default)]
    pub check: Option<CheckSection>,
    /// Also write the computed profiles / fields as CSV.
    #[serde(default)]
    pub dump_fields: bool,
}

fn default_schedule() -> Vec<usize> {
    vec![256]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n_prime: usize,
    pub n_last: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverySection {
    pub epsilons: Vec<f64>,
    /// Density on the interface when `measure` is absent.
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub measure: Option<SurfactantMeasure>,
    #[serde(default)]
    pub height: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_tilde_delta")]
    pub tilde_delta: f64,
    #[serde(default = "default_n_cell")]
    pub n_cell: usize,
    #[serde(default = "default_n_prime")]
    pub n_prime: usize,
    #[serde(default)]
    pub psi_margin: Option<f64>,
    #[serde(default)]
    pub min_atom_distance: f64,
}

fn default_delta() -> f64 {
    0.05
}

fn default_tilde_delta() -> f64 {
    0.01
}

fn default_n_cell() -> usize {
    256
}

fn default_n_prime() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

fn default_trials() -> usize {
    200
}

fn default_amplitude() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_samples() -> usize {
    10_000
}

fn default_tol() -> f64 {
    1e-9
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, xs: &[f64]| -> Result<()> {
            if xs.iter().any(|x| !x.is_finite() || *x < 0.0) {
                bail!("field `{name}` must hold finite nonnegative numbers");
            }
            Ok(())
        };
        finite("gammas", &self.gammas)?;
        if self.schedule.is_empty() {
            bail!("field `schedule` must list at least one resolution");
        }
        match self.task {
            Task::Phi1d | Task::Sweep if self.gammas.is_empty() => bail!("task `{}` needs field `gammas`", self.task.name()),
            Task::Phi1d if self.gammas.len() != 1 => bail!("task `phi-1d` takes exactly one value in `gammas`"),
            Task::Phi2d if self.gammas.is_empty() || self.grid.is_none() => bail!("task `phi-2d` needs fields `gammas` and `grid`"),
            Task::Recovery | Task::LiminfProbe => {
                let Some(r) = &self.recovery else { bail!("task `{}` needs field `recovery`", self.task.name()) };
                if r.epsilons.is_empty() {
                    bail!("field `recovery.epsilons` must not be empty");
                }
                finite("recovery.epsilons", &r.epsilons)?;
            }
            _ => {}
        }
        Ok(())
    }
}

//! TOML experiment configuration.
//!
//! One file describes one experiment: the shared schedule, the analytic
//! models with their condition maps, aggregation and sampler settings, and
//! any experiment-specific grids. Everything that affects output bytes
//! lives here or in the seed, so a config plus a binary version pins the
//! results exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use amdm_core::aggregate::{AggregationConfig, AmdmMember};
use amdm_core::schedule::{build_linear_schedule, NoiseSchedule};
use amdm_core::scoremodel::{Component, Condition, MixtureModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Amdm,
    StatsTable,
    AblationLinear,
    AblationStage,
    AblationEta,
    TheoryChecks,
    #[serde(rename = "composition-2d")]
    Composition2d,
}

impl ExperimentKind {
    pub fn all() -> &'static [ExperimentKind] {
        use ExperimentKind::*;
        &[
            Amdm,
            StatsTable,
            AblationLinear,
            AblationStage,
            AblationEta,
            TheoryChecks,
            Composition2d,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Amdm => "amdm",
            ExperimentKind::StatsTable => "stats-table",
            ExperimentKind::AblationLinear => "ablation-linear",
            ExperimentKind::AblationStage => "ablation-stage",
            ExperimentKind::AblationEta => "ablation-eta",
            ExperimentKind::TheoryChecks => "theory-checks",
            ExperimentKind::Composition2d => "composition-2d",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub beta_start: f64,
    pub beta_end: f64,
    pub timesteps: usize,
    pub substeps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            beta_start: amdm_core::schedule::DEFAULT_BETA_START,
            beta_end: amdm_core::schedule::DEFAULT_BETA_END,
            timesteps: amdm_core::schedule::DEFAULT_T,
            substeps: 50,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule, String> {
        build_linear_schedule(self.beta_start, self.beta_end, self.timesteps)
            .and_then(|s| s.with_substeps(self.substeps))
            .map_err(|e| e.to_string())
    }
}

/// Component mean, either written out or as sparse `[index, value]` pairs
/// over an otherwise-zero vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeanSpec {
    Dense(Vec<f64>),
    Sparse { sparse: Vec<(usize, f64)> },
}

impl MeanSpec {
    pub fn to_vec(&self, dim: usize) -> Result<Vec<f64>, String> {
        match self {
            MeanSpec::Dense(v) => {
                if v.len() != dim {
                    return Err(format!(
                        "dense mean has {} entries, model dim is {dim}",
                        v.len()
                    ));
                }
                Ok(v.clone())
            }
            MeanSpec::Sparse { sparse } => {
                let mut out = vec![0.0; dim];
                for &(i, v) in sparse {
                    if i >= dim {
                        return Err(format!("sparse mean index {i} outside dim {dim}"));
                    }
                    out[i] = v;
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub mean: MeanSpec,
    pub variance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub dim: usize,
    pub components: Vec<ComponentConfig>,
    pub weights: Vec<f64>,
    /// Condition label → component indices.
    #[serde(default)]
    pub conditions: BTreeMap<String, Vec<usize>>,
    /// Label this model is sampled under; empty = unconditional.
    #[serde(default)]
    pub condition: String,
    #[serde(default)]
    pub guidance_scale: f64,
}

impl ModelConfig {
    pub fn build(&self) -> Result<MixtureModel, String> {
        let components = self
            .components
            .iter()
            .map(|c| {
                Ok(Component {
                    mean: c.mean.to_vec(self.dim)?,
                    variance: c.variance,
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        let mut model = MixtureModel::new(components, self.weights.clone())
            .map_err(|e| format!("model `{}`: {e}", self.name))?;
        for (label, indices) in &self.conditions {
            model = model
                .with_condition(label.clone(), indices.clone())
                .map_err(|e| format!("model `{}`: {e}", self.name))?;
        }
        Ok(model)
    }

    pub fn build_condition(&self) -> Option<Condition> {
        if self.condition.is_empty() {
            None
        } else {
            Some(Condition::with_guidance(
                self.condition.clone(),
                self.guidance_scale,
            ))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationSettings {
    pub steps: usize,
    pub weights: Vec<f64>,
    pub opt_steps: Vec<f64>,
    #[serde(default)]
    pub stage_offset: usize,
}

impl Default for AggregationSettings {
    fn default() -> Self {
        Self {
            steps: 20,
            weights: vec![0.5],
            opt_steps: vec![0.3, 0.3],
            stage_offset: 0,
        }
    }
}

impl AggregationSettings {
    pub fn build(&self) -> AggregationConfig {
        AggregationConfig {
            steps: self.steps,
            weights: self.weights.clone(),
            opt_steps: self.opt_steps.clone(),
            stage_offset: self.stage_offset,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Reverse-kernel noise multiplier: 0 deterministic, 1 ancestral.
    pub eta: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { eta: 0.1 }
    }
}

/// Concentration-check grid for the theory experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    pub dims: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub draws: usize,
    /// Displacement grid for the membership-bound sweep.
    pub displacement_grid: Vec<f64>,
    pub eps_domain: f64,
    pub sigma_t: f64,
    /// Moment-curve resolution (number of plotted times).
    pub moment_points: usize,
    pub ode_step: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            dims: vec![256, 1024, 4096],
            epsilons: vec![0.02, 0.05, 0.1],
            draws: 10_000,
            displacement_grid: vec![0.0, 0.32, 0.64, 1.28, 2.56, 5.12],
            eps_domain: 0.1,
            sigma_t: 1.0,
            moment_points: 101,
            ode_step: 1e-3,
        }
    }
}

/// Domain-membership settings shared by the stage/eta ablations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembershipConfig {
    pub quantile: f64,
    pub calibration_draws: usize,
}

impl Default for MembershipConfig {
    fn default() -> Self {
        Self {
            quantile: 0.05,
            calibration_draws: 20_000,
        }
    }
}

/// Grids for the three ablation experiments.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    #[serde(default)]
    pub window_grid: Vec<usize>,
    #[serde(default)]
    pub eta_grid: Vec<f64>,
    /// Stage offsets compared by the stage ablation (0 = initial window).
    #[serde(default)]
    pub stage_offsets: Vec<usize>,
}

/// Composition-task settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionConfig {
    pub seeds: usize,
    pub samples_per_seed: usize,
    pub reference_samples: usize,
    pub langevin_step_scale: f64,
    pub langevin_steps: usize,
    /// Noise multiplier for both composed and aggregated chains.
    pub chain_eta: f64,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        Self {
            seeds: 12,
            samples_per_seed: 400,
            reference_samples: 1000,
            langevin_step_scale: 0.5,
            langevin_steps: 100,
            chain_eta: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub aggregation: AggregationSettings,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Default output directory; the `--out` flag overrides it.
    #[serde(default)]
    pub output: Option<std::path::PathBuf>,
    #[serde(default)]
    pub theory: Option<TheoryConfig>,
    #[serde(default)]
    pub membership: Option<MembershipConfig>,
    #[serde(default)]
    pub ablation: Option<AblationConfig>,
    #[serde(default)]
    pub composition: Option<CompositionConfig>,
}

fn default_trials() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, String> {
        let text =
            fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural validation beyond what serde enforces.
    pub fn validate(&self) -> Result<(), String> {
        if self.trials == 0 {
            return Err("trials must be at least 1".into());
        }
        let schedule = self.schedule.build()?;
        let needs_models = !matches!(self.experiment, ExperimentKind::TheoryChecks);
        if needs_models && self.models.is_empty() {
            return Err(format!(
                "experiment `{}` needs models",
                self.experiment.name()
            ));
        }
        let mut dim = None;
        for mc in &self.models {
            let model = mc.build()?;
            if let Some(cond) = mc.build_condition() {
                model
                    .selection(Some(&cond))
                    .map_err(|e| format!("model `{}`: {e}", mc.name))?;
            }
            if let Some(d) = dim {
                if d != mc.dim {
                    return Err(format!(
                        "model `{}` has dim {}, expected {d}",
                        mc.name, mc.dim
                    ));
                }
            }
            dim = Some(mc.dim);
        }
        let aggregated = matches!(
            self.experiment,
            ExperimentKind::Amdm
                | ExperimentKind::StatsTable
                | ExperimentKind::AblationLinear
                | ExperimentKind::AblationStage
                | ExperimentKind::AblationEta
                | ExperimentKind::Composition2d
        );
        if aggregated && !self.models.is_empty() {
            if self.aggregation.weights.len() != self.models.len() - 1 {
                return Err(format!(
                    "{} models need {} aggregation weights",
                    self.models.len(),
                    self.models.len() - 1
                ));
            }
            if self.aggregation.opt_steps.len() != self.models.len() {
                return Err(format!(
                    "{} models need {} optimization steps",
                    self.models.len(),
                    self.models.len()
                ));
            }
            let ladder_len = schedule.ladder().len();
            if self.aggregation.stage_offset + self.aggregation.steps > ladder_len {
                return Err(format!(
                    "aggregation window exceeds the {ladder_len}-transition ladder"
                ));
            }
        }
        Ok(())
    }

    /// Instantiates the shared schedule.
    pub fn build_schedule(&self) -> Result<NoiseSchedule, String> {
        self.schedule.build()
    }

    /// Instantiates all models as aggregation members over the shared
    /// schedule.
    pub fn build_members(&self) -> Result<Vec<AmdmMember>, String> {
        let schedule = self.build_schedule()?;
        self.models
            .iter()
            .map(|mc| {
                let model = mc.build()?;
                let condition = mc.build_condition().ok_or_else(|| {
                    format!(
                        "model `{}` needs a condition label for aggregation",
                        mc.name
                    )
                })?;
                Ok(AmdmMember {
                    model,
                    condition,
                    schedule: schedule.clone(),
                })
            })
            .collect()
    }
}

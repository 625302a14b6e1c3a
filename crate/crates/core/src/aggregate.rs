//! Multi-model latent aggregation.
//!
//! Inside an aggregation window every model advances one reverse step, the
//! fresh latents are merged by spherical linear interpolation
//! (`sin((1-w)φ)/sin(φ)·a + sin(wφ)/sin(φ)·b`, successive pairwise folds for
//! N > 2), and each model's state is re-placed on its own high-probability
//! shell by a radial step of size η toward that model's reverse-kernel mean.
//! Outside the window only the primary model advances.
//!
//! Angles are computed on normalized vectors with the cosine clamped to
//! [-1, 1]; near-parallel inputs fall back to linear interpolation and
//! antipodal inputs are rejected. The linear-interpolation variant of the
//! whole loop exists as an ablation: it leaves the shell immediately when
//! the inputs are far apart, which is the effect the shell-deviation metric
//! quantifies.

use crate::error::{Error, Result};
use crate::linalg;
use crate::metrics;
use crate::rng;
use crate::sampler::{reverse_step_with_mean, LatentState, Trajectory};
use crate::schedule::NoiseSchedule;
use crate::scoremodel::{Condition, MixtureModel};

/// Angle below which interpolation degrades to the linear form.
const PARALLEL_EPS: f64 = 1e-6;
/// Distance from π above which the interpolation plane is ill-defined.
const ANTIPODAL_EPS: f64 = 1e-6;

/// Aggregation-loop hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationConfig {
    /// Number of aggregated reverse transitions (the window length `s`).
    pub steps: usize,
    /// Pairwise fold weights, one per model beyond the first, each in [0, 1].
    pub weights: Vec<f64>,
    /// Per-model deviation-optimization step sizes η, all ≥ 0.
    pub opt_steps: Vec<f64>,
    /// Window start as a transition index; 0 aggregates the first `steps`
    /// transitions, larger values shift the window later for stage ablations.
    pub stage_offset: usize,
}

impl AggregationConfig {
    /// Window over the first `steps` transitions with a shared weight and a
    /// shared optimization step for `n_models` models.
    pub fn uniform(steps: usize, n_models: usize, weight: f64, opt_step: f64) -> Self {
        Self {
            steps,
            weights: vec![weight; n_models.saturating_sub(1)],
            opt_steps: vec![opt_step; n_models],
            stage_offset: 0,
        }
    }

    pub fn with_stage_offset(mut self, offset: usize) -> Self {
        self.stage_offset = offset;
        self
    }
}

/// Per-step diagnostics recorded before each aggregation (plus one row for
/// the initial prior draws at `t = T`).
///
/// Scalar pair fields compare the first two models; `shell_dev` measures the
/// aggregated variable against the expected marginal radius and is 0 for the
/// initial row where no aggregate exists yet.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub t: usize,
    /// Angle between the first two models' latents, radians.
    pub phi: f64,
    pub norm_per_model: Vec<f64>,
    /// |‖z¹‖ - ‖z²‖|
    pub norm_diff: f64,
    /// ‖z¹ - z²‖
    pub diff_norm: f64,
    /// Maximum displacement bound φ_w(φ)·δ + η for the first pair.
    pub d: f64,
    /// |‖z'‖ - r_t| / r_t of the aggregated variable.
    pub shell_dev: f64,
}

/// Chord-ratio geometry of one aggregation pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryStats {
    pub phi: f64,
    /// ‖z¹ - z²‖
    pub delta: f64,
    /// sin((1-w)φ/2) / sin(φ/2), with the φ → 0 limit 1 - w.
    pub phi_w: f64,
    /// φ_w(φ)·δ + η
    pub d: f64,
}

/// One model participating in an aggregation run. Members must share the
/// latent dimension and the exact same schedule; mixing models from
/// different forward processes is a hard error, not a degraded result.
#[derive(Debug, Clone)]
pub struct AmdmMember {
    pub model: MixtureModel,
    pub condition: Condition,
    pub schedule: NoiseSchedule,
}

/// Spherical linear interpolation between two nonzero vectors.
///
/// The angle comes from the normalized vectors; the sine weights apply to
/// the raw vectors, so equal-norm inputs stay on their sphere exactly and
/// unequal norms interpolate. Endpoints are returned exactly.
pub fn slerp(a: &[f64], b: &[f64], w: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidParameter(format!(
            "weight {w} outside [0, 1]"
        )));
    }
    if w == 0.0 {
        return Ok(a.to_vec());
    }
    if w == 1.0 {
        return Ok(b.to_vec());
    }
    let phi = linalg::angle(a, b).ok_or(Error::ZeroVector)?;
    if phi < PARALLEL_EPS {
        // near-parallel: the great-circle arc collapses onto the chord
        return Ok(a
            .iter()
            .zip(b)
            .map(|(x, y)| (1.0 - w) * x + w * y)
            .collect());
    }
    if std::f64::consts::PI - phi < ANTIPODAL_EPS {
        return Err(Error::Antipodal);
    }
    let s = phi.sin();
    let ca = (((1.0 - w) * phi).sin()) / s;
    let cb = ((w * phi).sin()) / s;
    Ok(a.iter().zip(b).map(|(x, y)| ca * x + cb * y).collect())
}

/// Successive pairwise fold `acc ← slerp(acc, v_{i+1}, w_i)` starting from
/// the first vector; needs N ≥ 2 vectors and N-1 weights.
pub fn slerp_many(vectors: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    fold_many(vectors, weights, slerp)
}

/// Linear-interpolation fold with the same pairwise structure as
/// [`slerp_many`]; the aggregation ablation.
pub fn lerp_many(vectors: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    fold_many(vectors, weights, |a, b, w| {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                got: b.len(),
            });
        }
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidParameter(format!(
                "weight {w} outside [0, 1]"
            )));
        }
        Ok(a.iter()
            .zip(b)
            .map(|(x, y)| (1.0 - w) * x + w * y)
            .collect())
    })
}

fn fold_many(
    vectors: &[Vec<f64>],
    weights: &[f64],
    pair: impl Fn(&[f64], &[f64], f64) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    if vectors.len() < 2 {
        return Err(Error::InvalidParameter(
            "aggregation needs at least two vectors".into(),
        ));
    }
    if weights.len() != vectors.len() - 1 {
        return Err(Error::InvalidParameter(format!(
            "{} vectors need {} weights, got {}",
            vectors.len(),
            vectors.len() - 1,
            weights.len()
        )));
    }
    let mut acc = vectors[0].clone();
    for (v, &w) in vectors[1..].iter().zip(weights) {
        acc = pair(&acc, v, w)?;
    }
    Ok(acc)
}

/// Radial step of size η from `z_agg` toward `mu`:
/// `z_agg - η·(z_agg - mu)/‖z_agg - mu‖`.
///
/// Exact contraction: the result sits at distance `‖z_agg - mu‖ - η` from
/// `mu` along the unchanged radial direction. A step reaching or passing the
/// mean is rejected: the mean itself is not a shell point.
pub fn deviation_optimize(z_agg: &[f64], mu: &[f64], eta: f64) -> Result<Vec<f64>> {
    if z_agg.len() != mu.len() {
        return Err(Error::DimensionMismatch {
            expected: z_agg.len(),
            got: mu.len(),
        });
    }
    if eta < 0.0 {
        return Err(Error::InvalidParameter(format!("negative step size {eta}")));
    }
    if eta == 0.0 {
        return Ok(z_agg.to_vec());
    }
    let dist = linalg::dist(z_agg, mu);
    if eta >= dist {
        return Err(Error::StepOvershoot { step: eta, dist });
    }
    let c = eta / dist;
    Ok(z_agg.iter().zip(mu).map(|(z, m)| z - c * (z - m)).collect())
}

/// Angle, separation, chord ratio and displacement bound for one pair of
/// latents under fold weight `w` and optimization step `eta`.
pub fn theory_stats(z1: &[f64], z2: &[f64], w: f64, eta: f64) -> Result<TheoryStats> {
    let phi = linalg::angle(z1, z2).ok_or(Error::ZeroVector)?;
    let delta = linalg::dist(z1, z2);
    let phi_w = if phi < PARALLEL_EPS {
        1.0 - w
    } else {
        ((1.0 - w) * phi / 2.0).sin() / (phi / 2.0).sin()
    };
    Ok(TheoryStats {
        phi,
        delta,
        phi_w,
        d: phi_w * delta + eta,
    })
}

/// Which pairwise fold the aggregation loop applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Spherical,
    Linear,
}

/// The multi-model aggregation loop.
///
/// Every model draws `z_T ~ N(0, I)` from its own stream (model 0's stream
/// is identical to the one [`crate::sampler::sample`] would use with the
/// same seed). Inside the window all models step, their draws fold into one
/// aggregate, and each model's state becomes the deviation-optimized
/// aggregate. Outside the window only model 0 advances; secondary models
/// advance solo before a shifted window opens and freeze after it closes.
///
/// Returns model 0's trajectory with the per-step stats attached.
pub fn amdm_sample(
    members: &[AmdmMember],
    eta_sampler: f64,
    config: &AggregationConfig,
    seed: u64,
) -> Result<Trajectory> {
    run_aggregated(members, eta_sampler, config, seed, Aggregation::Spherical)
}

/// [`amdm_sample`] with the linear fold; the manifold-deviation ablation.
pub fn linear_amdm_sample(
    members: &[AmdmMember],
    eta_sampler: f64,
    config: &AggregationConfig,
    seed: u64,
) -> Result<Trajectory> {
    run_aggregated(members, eta_sampler, config, seed, Aggregation::Linear)
}

/// Shared body of the spherical and linear loops.
pub fn run_aggregated(
    members: &[AmdmMember],
    eta_sampler: f64,
    config: &AggregationConfig,
    seed: u64,
    aggregation: Aggregation,
) -> Result<Trajectory> {
    if members.len() < 2 {
        return Err(Error::InvalidParameter(
            "aggregation needs at least two models".into(),
        ));
    }
    let schedule = &members[0].schedule;
    let dim = members[0].model.dim();
    for m in &members[1..] {
        if m.schedule != *schedule {
            return Err(Error::ScheduleMismatch);
        }
        if m.model.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: m.model.dim(),
            });
        }
    }
    if config.weights.len() != members.len() - 1 {
        return Err(Error::InvalidParameter(format!(
            "{} models need {} weights, got {}",
            members.len(),
            members.len() - 1,
            config.weights.len()
        )));
    }
    if config.opt_steps.len() != members.len() {
        return Err(Error::InvalidParameter(format!(
            "{} models need {} optimization steps, got {}",
            members.len(),
            members.len(),
            config.opt_steps.len()
        )));
    }
    if config.opt_steps.iter().any(|&e| e < 0.0) {
        return Err(Error::InvalidParameter(
            "optimization steps must be >= 0".into(),
        ));
    }
    let ladder = schedule.ladder();
    if config.stage_offset + config.steps > ladder.len() {
        return Err(Error::InvalidParameter(format!(
            "window [{}, {}) exceeds the {}-transition ladder",
            config.stage_offset,
            config.stage_offset + config.steps,
            ladder.len()
        )));
    }
    let window = config.stage_offset..config.stage_offset + config.steps;

    let mut streams: Vec<_> = (0..members.len())
        .map(|i| rng::stream(seed, &[i as u64]))
        .collect();
    let mut states: Vec<LatentState> = streams
        .iter_mut()
        .map(|r| LatentState {
            z: rng::standard_normal_vec(r, dim),
            t: schedule.t_max(),
        })
        .collect();

    let mut trajectory = vec![states[0].clone()];
    let mut stats = Vec::new();
    if config.steps > 0 {
        stats.push(pair_stats(&states, config, schedule, members, None)?);
    }

    for (k, &(t, t_prev)) in ladder.iter().enumerate() {
        if window.contains(&k) {
            let mut draws = Vec::with_capacity(members.len());
            let mut means = Vec::with_capacity(members.len());
            for (i, member) in members.iter().enumerate() {
                debug_assert_eq!(states[i].t, t);
                let (next, mean) = reverse_step_with_mean(
                    schedule,
                    &member.model,
                    &states[i],
                    t_prev,
                    Some(&member.condition),
                    eta_sampler,
                    &mut streams[i],
                )?;
                draws.push(next.z);
                means.push(mean);
            }
            let aggregated = match aggregation {
                Aggregation::Spherical => slerp_many(&draws, &config.weights)?,
                Aggregation::Linear => lerp_many(&draws, &config.weights)?,
            };
            let draw_states: Vec<LatentState> = draws
                .iter()
                .map(|z| LatentState {
                    z: z.clone(),
                    t: t_prev,
                })
                .collect();
            stats.push(pair_stats(
                &draw_states,
                config,
                schedule,
                members,
                Some(&aggregated),
            )?);
            for i in 0..members.len() {
                let z = deviation_optimize(&aggregated, &means[i], config.opt_steps[i])?;
                states[i] = LatentState { z, t: t_prev };
            }
        } else {
            // model 0 always advances; the others only catch up solo ahead
            // of a shifted window
            for (i, member) in members.iter().enumerate() {
                if i > 0 && k >= window.end {
                    continue;
                }
                states[i] = crate::sampler::reverse_step(
                    schedule,
                    &member.model,
                    &states[i],
                    t_prev,
                    Some(&member.condition),
                    eta_sampler,
                    &mut streams[i],
                )?;
            }
        }
        trajectory.push(states[0].clone());
    }

    Ok(Trajectory {
        states: trajectory,
        stats,
        seed,
    })
}

/// Stats row comparing the first two models' latents, recorded before the
/// aggregate replaces them.
fn pair_stats(
    states: &[LatentState],
    config: &AggregationConfig,
    schedule: &NoiseSchedule,
    members: &[AmdmMember],
    aggregated: Option<&[f64]>,
) -> Result<StepStats> {
    let norms: Vec<f64> = states.iter().map(|s| linalg::norm(&s.z)).collect();
    let ts = theory_stats(
        &states[0].z,
        &states[1].z,
        config.weights[0],
        config.opt_steps[0],
    )?;
    let shell_dev = match aggregated {
        Some(z) => {
            let r = metrics::expected_radius(
                &members[0].model,
                schedule,
                states[0].t,
                Some(&members[0].condition),
            )?;
            metrics::shell_deviation(z, r)
        }
        None => 0.0,
    };
    Ok(StepStats {
        t: states[0].t,
        phi: ts.phi,
        norm_diff: (norms[0] - norms[1]).abs(),
        diff_norm: ts.delta,
        d: ts.d,
        shell_dev,
        norm_per_model: norms,
    })
}

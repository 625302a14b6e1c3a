//! Reverse-time sampling.
//!
//! The reverse kernel is
//! `p(z_{t'} | z_t) = N( √(ᾱ_{t'}/ᾱ_t)·z_t + (√(1-ᾱ_{t'}-σ²) - √(ᾱ_{t'}(1-ᾱ_t)/ᾱ_t))·ε,  σ² I )`
//! with the free σ parameterized by the conventional η multiplier
//! ([`crate::schedule::ddim_sigma`]): η = 0 is the deterministic step,
//! η = 1 the ancestral one.
//!
//! Chains start from `z_T ~ N(0, I)` and walk the schedule's substep ladder
//! down to `t = 0`. Every trajectory owns a counter-derived RNG stream, so
//! (seed, config) fully determines each trajectory byte for byte no matter
//! how many run concurrently.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::aggregate::StepStats;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use crate::schedule::{ddim_sigma, NoiseSchedule};
use crate::scoremodel::{cfg_epsilon, epsilon_pred, Condition, MixtureModel};

/// A latent point together with its timestep index.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z: Vec<f64>,
    pub t: usize,
}

/// A full reverse chain from `t = T` down to `t = 0`, plus any per-step
/// aggregation stats (empty for single-model runs).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<LatentState>,
    pub stats: Vec<StepStats>,
    pub seed: u64,
}

impl Trajectory {
    pub fn final_state(&self) -> &LatentState {
        self.states.last().expect("a trajectory is never empty")
    }
}

/// Mean of the reverse kernel. Errors when the variance choice makes
/// `1 - ᾱ_{t_prev} - σ²` negative.
pub fn reverse_mean(
    schedule: &NoiseSchedule,
    epsilon: &[f64],
    z: &[f64],
    t: usize,
    t_prev: usize,
    sigma: f64,
) -> Result<Vec<f64>> {
    if epsilon.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            got: epsilon.len(),
        });
    }
    if t_prev >= t || t > schedule.t_max() {
        return Err(Error::TimestepOutOfRange {
            t,
            lo: t_prev + 1,
            hi: schedule.t_max(),
        });
    }
    let at = schedule.alpha_bar(t);
    let ap = schedule.alpha_bar(t_prev);
    let rest = 1.0 - ap - sigma * sigma;
    if rest < -1e-12 {
        return Err(Error::InvalidVarianceChoice);
    }
    let eps_coef = rest.max(0.0).sqrt() - (ap * (1.0 - at) / at).sqrt();
    Ok(linalg::axpy(
        &linalg::scale(z, (ap / at).sqrt()),
        eps_coef,
        epsilon,
    ))
}

/// Noise prediction for a step: guided when a condition is given,
/// unconditional otherwise.
fn step_epsilon(
    schedule: &NoiseSchedule,
    model: &MixtureModel,
    z: &[f64],
    t: usize,
    condition: Option<&Condition>,
) -> Result<Vec<f64>> {
    match condition {
        Some(c) => cfg_epsilon(model, schedule, z, t, c),
        None => epsilon_pred(model, schedule, z, t, None),
    }
}

/// One reverse step `z_t → z_{t_prev}` together with the kernel mean it was
/// drawn around. The mean is what deviation optimization pulls toward, so
/// aggregation reuses it without recomputing ε.
pub fn reverse_step_with_mean<R: Rng>(
    schedule: &NoiseSchedule,
    model: &MixtureModel,
    state: &LatentState,
    t_prev: usize,
    condition: Option<&Condition>,
    eta: f64,
    rng: &mut R,
) -> Result<(LatentState, Vec<f64>)> {
    let eps = step_epsilon(schedule, model, &state.z, state.t, condition)?;
    let sigma = ddim_sigma(schedule, state.t, t_prev, eta)?;
    let mean = reverse_mean(schedule, &eps, &state.z, state.t, t_prev, sigma)?;
    let z = if sigma == 0.0 {
        mean.clone()
    } else {
        mean.iter()
            .map(|&m| m + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    Ok((LatentState { z, t: t_prev }, mean))
}

/// One reverse step; deterministic when `eta = 0`.
pub fn reverse_step<R: Rng>(
    schedule: &NoiseSchedule,
    model: &MixtureModel,
    state: &LatentState,
    t_prev: usize,
    condition: Option<&Condition>,
    eta: f64,
    rng: &mut R,
) -> Result<LatentState> {
    Ok(reverse_step_with_mean(schedule, model, state, t_prev, condition, eta, rng)?.0)
}

/// Full single-model trajectory: `z_T ~ N(0, I)` from the seed's stream,
/// then reverse steps down the schedule's substep ladder to `t = 0`.
pub fn sample(
    model: &MixtureModel,
    schedule: &NoiseSchedule,
    condition: Option<&Condition>,
    eta: f64,
    seed: u64,
) -> Result<Trajectory> {
    let mut stream = rng::stream(seed, &[0]);
    let mut state = LatentState {
        z: rng::standard_normal_vec(&mut stream, model.dim()),
        t: schedule.t_max(),
    };
    let mut states = vec![state.clone()];
    for (t, t_prev) in schedule.ladder() {
        debug_assert_eq!(t, state.t);
        state = reverse_step(schedule, model, &state, t_prev, condition, eta, &mut stream)?;
        states.push(state.clone());
    }
    Ok(Trajectory {
        states,
        stats: Vec::new(),
        seed,
    })
}

//! Linear score-composition baseline.
//!
//! The composed reverse chain drives the usual kernel with the summed
//! conditional scores `Σᵢ ∇ log p_t^{(i)}(z | yᵢ)` (converted to a noise
//! prediction via `ε = -√(1-ᾱ_t)·score`), optionally followed by a few
//! unadjusted Langevin steps against the same summed score at each
//! timestep. The stationary target of the summed score is the product of
//! the per-model noised densities, whose `t → 0` limit is the product of
//! the data distributions, computable exactly for isotropic mixtures, so
//! [`product_mixture`] provides the ground truth the samplers are measured
//! against.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use crate::sampler::{reverse_mean, LatentState, Trajectory};
use crate::schedule::{ddim_sigma, NoiseSchedule};
use crate::scoremodel::{score, Component, Condition, MixtureModel};

/// Per-timestep Langevin correction settings: `n_steps` iterations of
/// `z ← z + (step/2)·score(z) + √step·ξ` with `step = step_scale·σ_t²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LangevinConfig {
    pub step_scale: f64,
    pub n_steps: usize,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            step_scale: 0.1,
            n_steps: 20,
        }
    }
}

/// A model and the condition it is queried under.
pub type ScoredModel<'a> = (&'a MixtureModel, Option<&'a Condition>);

/// Summed conditional scores `Σᵢ ∇_z log p_t^{(i)}(z | yᵢ)`.
pub fn product_score(
    models: &[ScoredModel<'_>],
    schedule: &NoiseSchedule,
    z: &[f64],
    t: usize,
) -> Result<Vec<f64>> {
    if models.is_empty() {
        return Err(Error::InvalidParameter("need at least one model".into()));
    }
    let dim = models[0].0.dim();
    let mut total = vec![0.0; dim];
    for (model, condition) in models {
        if model.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: model.dim(),
            });
        }
        let s = score(model, schedule, z, t, *condition)?;
        for (acc, v) in total.iter_mut().zip(&s) {
            *acc += v;
        }
    }
    Ok(total)
}

/// Unadjusted Langevin iterations against an arbitrary score field.
pub fn langevin_correct<R: Rng>(
    z: &[f64],
    score_fn: impl Fn(&[f64]) -> Result<Vec<f64>>,
    step_size: f64,
    n_steps: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if step_size <= 0.0 && n_steps > 0 {
        return Err(Error::InvalidParameter(format!(
            "step size {step_size} must be positive"
        )));
    }
    let mut z = z.to_vec();
    let noise = step_size.sqrt();
    for _ in 0..n_steps {
        let s = score_fn(&z)?;
        for (zi, si) in z.iter_mut().zip(&s) {
            *zi += 0.5 * step_size * si + noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(z)
}

/// Reverse chain driven by the summed scores, with optional per-step
/// Langevin correction. `eta` is the usual noise multiplier of the reverse
/// kernel (1 = ancestral).
pub fn composed_sample(
    models: &[ScoredModel<'_>],
    schedule: &NoiseSchedule,
    eta: f64,
    langevin: Option<&LangevinConfig>,
    seed: u64,
) -> Result<Trajectory> {
    if models.is_empty() {
        return Err(Error::InvalidParameter("need at least one model".into()));
    }
    let dim = models[0].0.dim();
    let mut stream = rng::stream(seed, &[0]);
    let mut state = LatentState {
        z: rng::standard_normal_vec(&mut stream, dim),
        t: schedule.t_max(),
    };
    let mut states = vec![state.clone()];
    for (t, t_prev) in schedule.ladder() {
        let s = product_score(models, schedule, &state.z, t)?;
        let eps = linalg::scale(&s, -(1.0 - schedule.alpha_bar(t)).sqrt());
        let sigma = ddim_sigma(schedule, t, t_prev, eta)?;
        let mean = reverse_mean(schedule, &eps, &state.z, t, t_prev, sigma)?;
        let mut z: Vec<f64> = if sigma == 0.0 {
            mean
        } else {
            mean.iter()
                .map(|&m| m + sigma * stream.sample::<f64, _>(StandardNormal))
                .collect()
        };
        if let Some(cfg) = langevin {
            if cfg.n_steps > 0 && t_prev > 0 && sigma > 0.0 {
                let step = cfg.step_scale * sigma * sigma;
                z = langevin_correct(
                    &z,
                    |p| product_score(models, schedule, p, t_prev),
                    step,
                    cfg.n_steps,
                    &mut stream,
                )?;
            }
        }
        state = LatentState { z, t: t_prev };
        states.push(state.clone());
    }
    Ok(Trajectory {
        states,
        stats: Vec::new(),
        seed,
    })
}

/// Exact normalized product of two isotropic mixtures: components pair up
/// as `N(μ*, σ*²)` with `σ*² = (σ₁⁻² + σ₂⁻²)⁻¹`,
/// `μ* = σ*²(μ₁/σ₁² + μ₂/σ₂²)`, weighted by
/// `w₁w₂·N(μ₁ - μ₂; 0, (σ₁² + σ₂²)I)` and renormalized. This is the ground
/// truth the composed sampler chases.
pub fn product_mixture(
    a: &MixtureModel,
    cond_a: Option<&Condition>,
    b: &MixtureModel,
    cond_b: Option<&Condition>,
) -> Result<MixtureModel> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let n = a.dim() as f64;
    let sel_a = a.selection(cond_a)?;
    let sel_b = b.selection(cond_b)?;
    let mut components = Vec::new();
    let mut weights = Vec::new();
    for &(i, wa) in &sel_a {
        for &(j, wb) in &sel_b {
            let ca = &a.components()[i];
            let cb = &b.components()[j];
            let prec = 1.0 / ca.variance + 1.0 / cb.variance;
            let var = 1.0 / prec;
            let mean: Vec<f64> = ca
                .mean
                .iter()
                .zip(&cb.mean)
                .map(|(&ma, &mb)| var * (ma / ca.variance + mb / cb.variance))
                .collect();
            let gap2 = linalg::dist(&ca.mean, &cb.mean).powi(2);
            let vsum = ca.variance + cb.variance;
            let overlap =
                (-gap2 / (2.0 * vsum)).exp() / (2.0 * std::f64::consts::PI * vsum).powf(n / 2.0);
            components.push(Component {
                mean,
                variance: var,
            });
            weights.push(wa * wb * overlap);
        }
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidMixture(
            "product mixture has no overlapping mass".into(),
        ));
    }
    for w in &mut weights {
        *w /= total;
    }
    // renormalization can leave the sum a few ulps off 1
    let drift: f64 = 1.0 - weights.iter().sum::<f64>();
    if let Some(w0) = weights.first_mut() {
        *w0 += drift;
    }
    MixtureModel::new(components, weights)
}

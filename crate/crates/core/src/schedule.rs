//! Discrete noise schedule shared by every model in an aggregation run.
//!
//! The forward process adds noise as `q(z_t | z_{t-1}) = N(√α_t z_{t-1}, (1-α_t) I)`
//! with `α_t = 1 - β_t`, which collapses to the closed-form marginal
//! `q(z_t | z_0) = N(√ᾱ_t z_0, (1-ᾱ_t) I)`, `ᾱ_t = ∏_{i≤t} α_i`.
//!
//! Timesteps are 1-based to match that indexing; `t = 0` is clean data and
//! `alpha_bar(0) == 1` exactly. Accelerated inference walks a strictly
//! increasing `substeps` ladder that always contains both `1` and `T`, so the
//! reverse chain reaches `t = 0` with a final denoising step.

use crate::error::{Error, Result};
use crate::linalg;

/// Immutable β/α/ᾱ tables plus the inference substep ladder.
///
/// Safe to share across concurrent trajectory workers; all samplers take it
/// by shared reference.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    t_max: usize,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    substeps: Vec<usize>,
}

/// Classic linear-β schedule endpoints.
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_T: usize = 1000;

/// Linear β schedule from `beta_start` to `beta_end` inclusive over `t_max`
/// steps. Rejects out-of-range or decreasing endpoints; `t_max = 1` is the
/// degenerate single-step case and requires equal endpoints.
pub fn build_linear_schedule(
    beta_start: f64,
    beta_end: f64,
    t_max: usize,
) -> Result<NoiseSchedule> {
    if !(beta_start > 0.0 && beta_start < 1.0 && beta_end > 0.0 && beta_end < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "beta endpoints must lie in (0, 1), got ({beta_start}, {beta_end})"
        )));
    }
    if beta_start > beta_end {
        return Err(Error::InvalidSchedule(format!(
            "beta endpoints must be non-decreasing, got ({beta_start}, {beta_end})"
        )));
    }
    if t_max == 0 {
        return Err(Error::InvalidSchedule("need at least one timestep".into()));
    }
    if t_max == 1 && beta_start != beta_end {
        return Err(Error::InvalidSchedule(
            "a single-step schedule needs equal beta endpoints".into(),
        ));
    }
    let betas: Vec<f64> = (0..t_max)
        .map(|i| {
            if t_max == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (t_max - 1) as f64
            }
        })
        .collect();
    NoiseSchedule::from_betas(betas)
}

/// Default schedule: linear β from 1e-4 to 0.02 over T = 1000.
pub fn default_schedule() -> NoiseSchedule {
    build_linear_schedule(DEFAULT_BETA_START, DEFAULT_BETA_END, DEFAULT_T)
        .expect("default endpoints are valid")
}

impl NoiseSchedule {
    /// Builds the α/ᾱ tables for an explicit β sequence. The substep ladder
    /// starts as the full range `1..=T`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidSchedule("need at least one timestep".into()));
        }
        if betas.iter().any(|&b| !(0.0 < b && b < 1.0)) {
            return Err(Error::InvalidSchedule(
                "every beta must lie in (0, 1)".into(),
            ));
        }
        let alphas: Vec<f64> = betas.iter().map(|&b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for &a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let t_max = betas.len();
        Ok(Self {
            t_max,
            betas,
            alphas,
            alpha_bars,
            substeps: (1..=t_max).collect(),
        })
    }

    /// Replaces the ladder with `count` uniform-stride indices over `[1, T]`,
    /// inclusive of both ends.
    pub fn with_substeps(mut self, count: usize) -> Result<Self> {
        self.substeps = uniform_substeps(self.t_max, count)?;
        Ok(self)
    }

    /// Explicit ladder; must be strictly increasing and contain both `1` and
    /// `T` so the reverse chain can reach `t = 0`.
    pub fn with_explicit_substeps(mut self, substeps: Vec<usize>) -> Result<Self> {
        if substeps.is_empty() || substeps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSchedule(
                "substeps must be non-empty and strictly increasing".into(),
            ));
        }
        if substeps[0] != 1 || *substeps.last().unwrap() != self.t_max {
            return Err(Error::InvalidSchedule(
                "substeps must include 1 and the terminal index".into(),
            ));
        }
        self.substeps = substeps;
        Ok(self)
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn substeps(&self) -> &[usize] {
        &self.substeps
    }

    /// ᾱ_t with the `t = 0` convention `ᾱ_0 = 1` (clean data).
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_max {
            return Err(Error::TimestepOutOfRange {
                t,
                lo: 1,
                hi: self.t_max,
            });
        }
        Ok(())
    }

    /// Reverse-chain timestep pairs `(t, t_prev)` walking the substep ladder
    /// from `T` down to the final `1 → 0` step.
    pub fn ladder(&self) -> Vec<(usize, usize)> {
        let mut down: Vec<usize> = self.substeps.iter().rev().copied().collect();
        down.push(0);
        down.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// `count` ladder indices spread uniformly over `[1, t_max]`, both ends
/// included (`round(1 + (T-1)·i/(count-1))`).
pub fn uniform_substeps(t_max: usize, count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > t_max {
        return Err(Error::InvalidSchedule(format!(
            "substep count {count} must lie in [1, {t_max}]"
        )));
    }
    if count == 1 {
        if t_max != 1 {
            return Err(Error::InvalidSchedule(
                "a single substep only works for a single-step schedule".into(),
            ));
        }
        return Ok(vec![1]);
    }
    let mut out: Vec<usize> = (0..count)
        .map(|i| (1.0 + (t_max - 1) as f64 * i as f64 / (count - 1) as f64).round() as usize)
        .collect();
    out.dedup();
    Ok(out)
}

/// The forward marginal in one jump: `√ᾱ_t · z0 + √(1-ᾱ_t) · noise`.
pub fn forward_marginal(
    schedule: &NoiseSchedule,
    z0: &[f64],
    t: usize,
    noise: &[f64],
) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    if z0.len() != noise.len() {
        return Err(Error::DimensionMismatch {
            expected: z0.len(),
            got: noise.len(),
        });
    }
    let ab = schedule.alpha_bar(t);
    Ok(linalg::axpy(
        &linalg::scale(z0, ab.sqrt()),
        (1.0 - ab).sqrt(),
        noise,
    ))
}

/// The free per-step standard deviation
/// `η · √[ (1-ᾱ_{t'})/(1-ᾱ_t) · (1 - ᾱ_t/ᾱ_{t'}) ]`.
///
/// `η = 1` gives the ancestral (DDPM) variance, `η = 0` the deterministic
/// DDIM step.
pub fn ddim_sigma(schedule: &NoiseSchedule, t: usize, t_prev: usize, eta: f64) -> Result<f64> {
    schedule.check_t(t)?;
    if t_prev >= t {
        return Err(Error::InvalidParameter(format!(
            "t_prev {t_prev} must precede t {t}"
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!(
            "eta {eta} must lie in [0, 1]"
        )));
    }
    let at = schedule.alpha_bar(t);
    let ap = schedule.alpha_bar(t_prev);
    Ok(eta * ((1.0 - ap) / (1.0 - at) * (1.0 - at / ap)).sqrt())
}

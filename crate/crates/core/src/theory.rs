//! Executable forms of the bounds and moment dynamics behind the
//! aggregation geometry.
//!
//! - Concentration: an n-dimensional isotropic Gaussian's norm lies within
//!   `ε·√n·σ` of `√n·σ` with probability at least `1 - 2·exp(-nε²/(1+2ε))`.
//! - Membership: displacing a point by at most `d` from a shell of width
//!   `ε_domain` shrinks the effective width to `ε_domain - d/(σ_t√n)`, and
//!   the same tail bound applies to the shrunken width.
//! - Moments: the continuous-time process `dz = -½ g² z dt + g dw` with
//!   `g² = β(t)` has `m(t) = m(0)·exp(-½∫β)` and
//!   `P(t) = 1 + (P(0) - 1)·exp(-∫β)` per coordinate; the discrete schedule
//!   is stretched onto `t ∈ [0, 1]` (so `β_cont = T·β_discrete`) and its
//!   integral taken by the trapezoid rule on the schedule grid.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;
use crate::schedule::NoiseSchedule;

/// Mean and per-coordinate variance of the latent marginal at continuous
/// time `t ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub t: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// The norm-concentration tail bound `max(0, 1 - 2·exp(-nε²/(1+2ε)))`,
/// clamped so it always reads as a probability.
pub fn concentration_lower_bound(n: usize, epsilon: f64) -> f64 {
    debug_assert!(epsilon >= 0.0);
    let n = n as f64;
    (1.0 - 2.0 * (-n * epsilon * epsilon / (1.0 + 2.0 * epsilon)).exp()).max(0.0)
}

/// Fraction of `draws` i.i.d. `N(0, σ²I)` vectors whose norm lies within
/// `ε·√n·σ` of `√n·σ`.
pub fn empirical_shell_fraction(
    n: usize,
    sigma: f64,
    epsilon: f64,
    draws: usize,
    seed: u64,
) -> f64 {
    let mut r = rng::stream(seed, &[n as u64]);
    let target = (n as f64).sqrt() * sigma;
    let band = epsilon * target;
    let mut hits = 0usize;
    for _ in 0..draws {
        let mut sq = 0.0;
        for _ in 0..n {
            let x: f64 = r.sample(StandardNormal);
            sq += x * x;
        }
        if (sigma * sq.sqrt() - target).abs() <= band {
            hits += 1;
        }
    }
    hits as f64 / draws as f64
}

/// Lower bound on the probability that a point displaced by at most `d`
/// still lands inside a domain shell of width `eps_domain`:
/// with `a = eps_domain - d/(σ_t√n)`, returns 0 when `a ≤ 0` (vacuous) and
/// `max(0, 1 - 2·exp(-na²/(1+2a)))` otherwise. `d = 0` reduces exactly to
/// [`concentration_lower_bound`].
pub fn membership_lower_bound(n: usize, eps_domain: f64, d: f64, sigma_t: f64) -> f64 {
    debug_assert!(eps_domain >= 0.0 && d >= 0.0 && sigma_t >= 0.0);
    let a = eps_domain - d / (sigma_t * (n as f64).sqrt());
    if a <= 0.0 {
        return 0.0;
    }
    concentration_lower_bound(n, a)
}

/// Piecewise-linear continuous β at `u ∈ [0, 1]`, the discrete schedule
/// stretched onto the unit interval: knots sit at `u_i = i/T` carrying
/// `T·β_i`, with `β_1` extended to `u = 0`.
pub fn beta_continuous(schedule: &NoiseSchedule, u: f64) -> f64 {
    let t_max = schedule.t_max();
    let scale = t_max as f64;
    let knot = |i: usize| -> f64 { scale * schedule.beta(i.max(1)) };
    let x = (u.clamp(0.0, 1.0)) * scale;
    let i = x.floor() as usize;
    if i >= t_max {
        return knot(t_max);
    }
    let frac = x - i as f64;
    knot(i) + (knot(i + 1) - knot(i)) * frac
}

/// `∫₀ᵘ β_cont ds` by the trapezoid rule on the schedule grid (exact for the
/// piecewise-linear interpolant).
pub fn beta_integral(schedule: &NoiseSchedule, u: f64) -> f64 {
    let t_max = schedule.t_max();
    let h = 1.0 / t_max as f64;
    let u = u.clamp(0.0, 1.0);
    let full = (u / h).floor() as usize;
    let knot = |i: usize| -> f64 { t_max as f64 * schedule.beta(i.clamp(1, t_max)) };
    let mut acc = 0.0;
    for i in 0..full.min(t_max) {
        acc += 0.5 * (knot(i) + knot(i + 1)) * h;
    }
    if full < t_max {
        let frac = u - full as f64 * h;
        if frac > 0.0 {
            let b = beta_continuous(schedule, u);
            acc += 0.5 * (knot(full) + b) * frac;
        }
    }
    acc
}

/// Closed-form moments at continuous time `t`:
/// `m(t) = m(0)·e^{-½∫β}`, `P(t) = 1 + (P(0) - 1)·e^{-∫β}`.
pub fn moment_closed_form(
    m0: &[f64],
    p0: &[f64],
    t: f64,
    schedule: &NoiseSchedule,
) -> Result<MomentState> {
    if m0.len() != p0.len() {
        return Err(Error::DimensionMismatch {
            expected: m0.len(),
            got: p0.len(),
        });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("time {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(MomentState {
            t,
            mean: m0.to_vec(),
            variance: p0.to_vec(),
        });
    }
    let integ = beta_integral(schedule, t);
    let mean = m0.iter().map(|&m| m * (-0.5 * integ).exp()).collect();
    let variance = p0
        .iter()
        .map(|&p| 1.0 + (p - 1.0) * (-integ).exp())
        .collect();
    Ok(MomentState { t, mean, variance })
}

/// Classic fourth-order integration of `dm/dt = -½β m`,
/// `dP/dt = -β P + β` from 0 to `t_end` with step `step` (final partial
/// step shortened to land exactly on `t_end`).
pub fn moment_ode_integrate(
    m0: &[f64],
    p0: &[f64],
    t_end: f64,
    step: f64,
    schedule: &NoiseSchedule,
) -> Result<MomentState> {
    if m0.len() != p0.len() {
        return Err(Error::DimensionMismatch {
            expected: m0.len(),
            got: p0.len(),
        });
    }
    if step <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "step {step} must be positive"
        )));
    }
    if !(0.0..=1.0).contains(&t_end) {
        return Err(Error::InvalidParameter(format!(
            "time {t_end} outside [0, 1]"
        )));
    }
    let mut mean = m0.to_vec();
    let mut var = p0.to_vec();
    let mut t = 0.0;
    let fm = |b: f64, m: f64| -0.5 * b * m;
    let fp = |b: f64, p: f64| -b * p + b;
    while t < t_end - 1e-15 {
        let h = step.min(t_end - t);
        let b0 = beta_continuous(schedule, t);
        let bh = beta_continuous(schedule, t + 0.5 * h);
        let b1 = beta_continuous(schedule, t + h);
        for (m, p) in mean.iter_mut().zip(var.iter_mut()) {
            let k1 = fm(b0, *m);
            let k2 = fm(bh, *m + 0.5 * h * k1);
            let k3 = fm(bh, *m + 0.5 * h * k2);
            let k4 = fm(b1, *m + h * k3);
            *m += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

            let k1 = fp(b0, *p);
            let k2 = fp(bh, *p + 0.5 * h * k1);
            let k3 = fp(bh, *p + 0.5 * h * k2);
            let k4 = fp(b1, *p + h * k3);
            *p += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        t += h;
    }
    Ok(MomentState {
        t: t_end,
        mean,
        variance: var,
    })
}

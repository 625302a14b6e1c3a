//! Quantitative diagnostics shared by every experiment: shell deviation,
//! generation-domain membership, MMD, and log-likelihood summaries.

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use crate::schedule::NoiseSchedule;
use crate::scoremodel::{log_density, sample_noised, Condition, MixtureModel};

/// Relative distance of `z` from a sphere of radius `expected_radius`:
/// `| ‖z‖ - r | / r`. Scale-covariant by construction.
pub fn shell_deviation(z: &[f64], expected_radius: f64) -> f64 {
    debug_assert!(expected_radius > 0.0);
    (linalg::norm(z) - expected_radius).abs() / expected_radius
}

/// Radius of the noised conditional marginal's shell at time `t`:
/// `√(E‖z_t‖²) = √( ᾱ_t·Σᵢ E[z₀ᵢ²] + n(1-ᾱ_t) )`.
pub fn expected_radius(
    model: &MixtureModel,
    schedule: &NoiseSchedule,
    t: usize,
    condition: Option<&Condition>,
) -> Result<f64> {
    let sel = model.selection(condition)?;
    let ab = schedule.alpha_bar(t);
    let n = model.dim() as f64;
    let mut second_moment = 0.0;
    for (i, w) in sel {
        let c = &model.components()[i];
        second_moment += w * (linalg::dot(&c.mean, &c.mean) + n * c.variance);
    }
    Ok((ab * second_moment + n * (1.0 - ab)).sqrt())
}

/// Log-density threshold τ at the given quantile, calibrated on exact draws
/// from the noised conditional mixture.
pub fn calibrate_threshold(
    model: &MixtureModel,
    schedule: &NoiseSchedule,
    t: usize,
    condition: Option<&Condition>,
    quantile: f64,
    calibration_draws: usize,
    seed: u64,
) -> Result<f64> {
    if !(0.0 < quantile && quantile < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "quantile {quantile} outside (0, 1)"
        )));
    }
    if calibration_draws == 0 {
        return Err(Error::InvalidParameter("need calibration draws".into()));
    }
    let mut r = rng::stream(seed, &[0x7au64]);
    let mut scores = Vec::with_capacity(calibration_draws);
    for _ in 0..calibration_draws {
        let z = sample_noised(model, schedule, t, condition, &mut r)?;
        scores.push(log_density(model, schedule, &z, t, condition)?);
    }
    scores.sort_by(|a, b| a.partial_cmp(b).expect("log densities are finite"));
    let idx = ((quantile * calibration_draws as f64).floor() as usize).min(calibration_draws - 1);
    Ok(scores[idx])
}

/// Fraction of `samples` whose conditional log-density clears the
/// quantile-calibrated domain threshold.
#[allow(clippy::too_many_arguments)]
pub fn membership_rate(
    samples: &[Vec<f64>],
    model: &MixtureModel,
    schedule: &NoiseSchedule,
    t: usize,
    condition: Option<&Condition>,
    quantile: f64,
    calibration_draws: usize,
    seed: u64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let tau = calibrate_threshold(
        model,
        schedule,
        t,
        condition,
        quantile,
        calibration_draws,
        seed,
    )?;
    let mut hits = 0usize;
    for z in samples {
        if log_density(model, schedule, z, t, condition)? >= tau {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Fraction of `samples` inside every listed model's domain simultaneously,
/// each domain calibrated at the same quantile.
pub fn joint_membership_rate(
    samples: &[Vec<f64>],
    domains: &[(&MixtureModel, Option<&Condition>)],
    schedule: &NoiseSchedule,
    t: usize,
    quantile: f64,
    calibration_draws: usize,
    seed: u64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if domains.is_empty() {
        return Err(Error::InvalidParameter("need at least one domain".into()));
    }
    let mut taus = Vec::with_capacity(domains.len());
    for (k, (model, condition)) in domains.iter().enumerate() {
        taus.push(calibrate_threshold(
            model,
            schedule,
            t,
            *condition,
            quantile,
            calibration_draws,
            seed.wrapping_add(k as u64),
        )?);
    }
    let mut hits = 0usize;
    for z in samples {
        let mut inside = true;
        for ((model, condition), &tau) in domains.iter().zip(&taus) {
            if log_density(model, schedule, z, t, *condition)? < tau {
                inside = false;
                break;
            }
        }
        if inside {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Unbiased U-statistic estimate of squared MMD under the RBF kernel
/// `exp(-‖x-y‖²/(2·bandwidth²))`. Needs at least two points per set.
///
/// For equally sized sets the cross term also skips paired indices, which
/// makes the estimate exactly zero on identical multisets; unequal sizes
/// use the all-pairs cross term (still unbiased for independent samples).
pub fn mmd_rbf(xs: &[Vec<f64>], ys: &[Vec<f64>], bandwidth: f64) -> Result<f64> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: xs.len().min(ys.len()),
        });
    }
    if bandwidth <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "bandwidth {bandwidth} must be positive"
        )));
    }
    let k = |a: &[f64], b: &[f64]| {
        let d2 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        (-d2 / (2.0 * bandwidth * bandwidth)).exp()
    };
    let (m, n) = (xs.len() as f64, ys.len() as f64);
    let mut kxx = 0.0;
    for i in 0..xs.len() {
        for j in 0..xs.len() {
            if i != j {
                kxx += k(&xs[i], &xs[j]);
            }
        }
    }
    let mut kyy = 0.0;
    for i in 0..ys.len() {
        for j in 0..ys.len() {
            if i != j {
                kyy += k(&ys[i], &ys[j]);
            }
        }
    }
    let mut kxy = 0.0;
    let paired = xs.len() == ys.len();
    for (i, x) in xs.iter().enumerate() {
        for (j, y) in ys.iter().enumerate() {
            if paired && i == j {
                continue;
            }
            kxy += k(x, y);
        }
    }
    let cross_pairs = if paired { m * (m - 1.0) } else { m * n };
    Ok(kxx / (m * (m - 1.0)) + kyy / (n * (n - 1.0)) - 2.0 * kxy / cross_pairs)
}

/// Median pairwise distance across the pooled points, the usual bandwidth
/// heuristic when nothing better is known.
pub fn median_pairwise_distance(points: &[Vec<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: points.len(),
        });
    }
    let mut dists = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            dists.push(linalg::dist(&points[i], &points[j]));
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    Ok(dists[dists.len() / 2])
}

/// Mean of a target log-density over samples.
pub fn avg_log_likelihood(
    samples: &[Vec<f64>],
    log_density_fn: impl Fn(&[f64]) -> f64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    Ok(samples.iter().map(|z| log_density_fn(z)).sum::<f64>() / samples.len() as f64)
}

/// Mean over coordinates of the per-coordinate unbiased sample variance.
pub fn sample_variance_scalar(samples: &[Vec<f64>]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: samples.len(),
        });
    }
    let n = samples.len() as f64;
    let dim = samples[0].len();
    let mut total = 0.0;
    for i in 0..dim {
        let mean = samples.iter().map(|s| s[i]).sum::<f64>() / n;
        let ss = samples
            .iter()
            .map(|s| (s[i] - mean) * (s[i] - mean))
            .sum::<f64>();
        total += ss / (n - 1.0);
    }
    Ok(total / dim as f64)
}

//! Analytic conditional "denoisers".
//!
//! A [`MixtureModel`] is a Gaussian mixture with isotropic per-component
//! covariances `σ_k² I`. Pushing it through the forward marginal keeps it a
//! mixture in closed form (means `√ᾱ_t μ_k`, variances `ᾱ_t σ_k² + 1 - ᾱ_t`),
//! so the noised density, its score, and the exact noise prediction
//! `ε = -√(1-ᾱ_t) · ∇ log p_t(z | y)` are all available without a network.
//!
//! Conditions select component subsets with renormalized weights; the
//! unconditional model is the full mixture. Classifier-free guidance mixes
//! the conditional and unconditional predictions as `(1+g)·ε_y - g·ε_∅`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::schedule::NoiseSchedule;

/// One isotropic mixture component `N(mean, variance · I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub mean: Vec<f64>,
    pub variance: f64,
}

/// Gaussian mixture over the latent space with named conditional subsets.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    dim: usize,
    components: Vec<Component>,
    weights: Vec<f64>,
    condition_map: BTreeMap<String, Vec<usize>>,
}

/// A condition label plus its classifier-free guidance scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub label: String,
    pub guidance_scale: f64,
}

impl Condition {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            guidance_scale: 0.0,
        }
    }

    pub fn with_guidance(label: impl Into<String>, guidance_scale: f64) -> Self {
        Self {
            label: label.into(),
            guidance_scale,
        }
    }
}

const WEIGHT_TOL: f64 = 1e-12;

impl MixtureModel {
    /// Builds an unconditional mixture; weights must sum to 1 within 1e-12
    /// and every variance must be positive.
    pub fn new(components: Vec<Component>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidMixture("need at least one component".into()));
        }
        if components.len() != weights.len() {
            return Err(Error::InvalidMixture(format!(
                "{} components but {} weights",
                components.len(),
                weights.len()
            )));
        }
        let dim = components[0].mean.len();
        if dim == 0 {
            return Err(Error::InvalidMixture("zero-dimensional component".into()));
        }
        if components.iter().any(|c| c.mean.len() != dim) {
            return Err(Error::InvalidMixture("component dimensions differ".into()));
        }
        if components.iter().any(|c| c.variance <= 0.0) {
            return Err(Error::InvalidMixture(
                "component variances must be positive".into(),
            ));
        }
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::InvalidMixture("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidMixture(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(Self {
            dim,
            components,
            weights,
            condition_map: BTreeMap::new(),
        })
    }

    /// Convenience constructor for a one-component model.
    pub fn single(mean: Vec<f64>, variance: f64) -> Result<Self> {
        Self::new(vec![Component { mean, variance }], vec![1.0])
    }

    /// Registers a condition label selecting a non-empty component subset.
    pub fn with_condition(mut self, label: impl Into<String>, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidMixture(
                "a condition needs at least one component".into(),
            ));
        }
        if indices.iter().any(|&i| i >= self.components.len()) {
            return Err(Error::InvalidMixture("condition index out of range".into()));
        }
        self.condition_map.insert(label.into(), indices);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn condition_labels(&self) -> impl Iterator<Item = &str> {
        self.condition_map.keys().map(|s| s.as_str())
    }

    /// Component indices with renormalized weights for a condition;
    /// `None` selects the full (unconditional) mixture.
    pub fn selection(&self, condition: Option<&Condition>) -> Result<Vec<(usize, f64)>> {
        match condition {
            None => Ok(self
                .weights
                .iter()
                .enumerate()
                .map(|(i, &w)| (i, w))
                .collect()),
            Some(c) => {
                let idx = self
                    .condition_map
                    .get(&c.label)
                    .ok_or_else(|| Error::UnknownCondition(c.label.clone()))?;
                let mass: f64 = idx.iter().map(|&i| self.weights[i]).sum();
                Ok(idx.iter().map(|&i| (i, self.weights[i] / mass)).collect())
            }
        }
    }

    /// Total unconditional weight mass of a condition's components.
    pub fn condition_mass(&self, condition: &Condition) -> Result<f64> {
        let idx = self
            .condition_map
            .get(&condition.label)
            .ok_or_else(|| Error::UnknownCondition(condition.label.clone()))?;
        Ok(idx.iter().map(|&i| self.weights[i]).sum())
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: z.len(),
            });
        }
        Ok(())
    }
}

fn check_noised_t(schedule: &NoiseSchedule, t: usize) -> Result<()> {
    if t > schedule.t_max() {
        return Err(Error::TimestepOutOfRange {
            t,
            lo: 0,
            hi: schedule.t_max(),
        });
    }
    Ok(())
}

/// The conditional mixture pushed through the forward marginal at time `t`:
/// means scale by `√ᾱ_t`, variances become `ᾱ_t σ_k² + 1 - ᾱ_t`. At `t = 0`
/// this is the conditional data mixture itself.
pub fn noised_mixture(
    model: &MixtureModel,
    schedule: &NoiseSchedule,
    t: usize,
    condition: Option<&Condition>,
) -> Result<MixtureModel> {
    check_noised_t(schedule, t)?;
    let sel = model.selection(condition)?;
    let ab = schedule.alpha_bar(t);
    let components = sel
        .iter()
        .map(|&(i, _)| Component {
            mean: linalg::scale(&model.components[i].mean, ab.sqrt()),
            variance: ab * model.components[i].variance + (1.0 - ab),
        })
        .collect();
    let weights = sel.iter().map(|&(_, w)| w).collect();
    MixtureModel::new(components, weights)
}

fn log_normal_pdf(z: &[f64], mean: &[f64], variance: f64) -> f64 {
    let n = z.len() as f64;
    let d2: f64 = z.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * n * (2.0 * std::f64::consts::PI * variance).ln() - 0.5 * d2 / variance
}

/// Per-component `(index, weight, noised variance, log pdf at z)` rows for
/// the noised conditional mixture; shared by the density and score paths.
fn noised_component_logs(
    model: &MixtureModel,
    schedule: &NoiseSchedule,
    z: &[f64],
    t: usize,
    condition: Option<&Condition>,
) -> Result<Vec<(usize, f64, f64, f64)>> {
    model.check_dim(z)?;
    check_noised_t(schedule, t)?;
    let sel = model.selection(condition)?;
    let ab = schedule.alpha_bar(t);
    Ok(sel
        .into_iter()
        .map(|(i, w)| {
            let c = &model.components[i];
            let variance = ab * c.variance + (1.0 - ab);
            let shifted: Vec<f64> = c.mean.iter().map(|m| ab.sqrt() * m).collect();
            (i, w, variance, log_normal_pdf(z, &shifted, variance))
        })
        .collect())
}

/// Exact log of the noised conditional density at `z`.
pub fn log_density(
    model: &MixtureModel,
    schedule: &NoiseSchedule,
    z: &[f64],
    t: usize,
    condition: Option<&Condition>,
) -> Result<f64> {
    let logs = noised_component_logs(model, schedule, z, t, condition)?;
    let max = logs
        .iter()
        .map(|&(_, w, _, lp)| w.ln() + lp)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let sum: f64 = logs
        .iter()
        .map(|&(_, w, _, lp)| (w.ln() + lp - max).exp())
        .sum();
    Ok(max + sum.ln())
}

/// Exact score `∇_z log p_t(z | y)` of the noised conditional mixture:
/// the responsibility-weighted sum of per-component scores.
pub fn score(
    model: &MixtureModel,
    schedule: &NoiseSchedule,
    z: &[f64],
    t: usize,
    condition: Option<&Condition>,
) -> Result<Vec<f64>> {
    let logs = noised_component_logs(model, schedule, z, t, condition)?;
    let max = logs
        .iter()
        .map(|&(_, w, _, lp)| w.ln() + lp)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut resp: Vec<f64> = logs
        .iter()
        .map(|&(_, w, _, lp)| (w.ln() + lp - max).exp())
        .collect();
    let total: f64 = resp.iter().sum();
    for r in &mut resp {
        *r /= total;
    }
    let ab = schedule.alpha_bar(t);
    let mut out = vec![0.0; model.dim()];
    for (&(i, _, variance, _), &r) in logs.iter().zip(&resp) {
        let c = &model.components[i];
        for (k, o) in out.iter_mut().enumerate() {
            *o += r * -(z[k] - ab.sqrt() * c.mean[k]) / variance;
        }
    }
    Ok(out)
}

/// Exact noise prediction implied by the analytic score:
/// `ε(z, t, y) = -√(1-ᾱ_t) · ∇_z log p_t(z | y)`.
pub fn epsilon_pred(
    model: &MixtureModel,
    schedule: &NoiseSchedule,
    z: &[f64],
    t: usize,
    condition: Option<&Condition>,
) -> Result<Vec<f64>> {
    if t == 0 || t > schedule.t_max() {
        return Err(Error::TimestepOutOfRange {
            t,
            lo: 1,
            hi: schedule.t_max(),
        });
    }
    let s = score(model, schedule, z, t, condition)?;
    let c = -(1.0 - schedule.alpha_bar(t)).sqrt();
    Ok(linalg::scale(&s, c))
}

/// Classifier-free guided prediction `(1+g)·ε(z,t,y) - g·ε(z,t,∅)`;
/// `g = 0` reduces to the plain conditional prediction.
pub fn cfg_epsilon(
    model: &MixtureModel,
    schedule: &NoiseSchedule,
    z: &[f64],
    t: usize,
    condition: &Condition,
) -> Result<Vec<f64>> {
    let cond = epsilon_pred(model, schedule, z, t, Some(condition))?;
    let g = condition.guidance_scale;
    if g == 0.0 {
        return Ok(cond);
    }
    let uncond = epsilon_pred(model, schedule, z, t, None)?;
    Ok(cond
        .iter()
        .zip(&uncond)
        .map(|(c, u)| (1.0 + g) * c - g * u)
        .collect())
}

/// Exact draw from the noised conditional mixture at time `t`.
pub fn sample_noised<R: Rng>(
    model: &MixtureModel,
    schedule: &NoiseSchedule,
    t: usize,
    condition: Option<&Condition>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_noised_t(schedule, t)?;
    let sel = model.selection(condition)?;
    let mut u: f64 = rng.random();
    let mut pick = sel[sel.len() - 1].0;
    for &(i, w) in &sel {
        if u < w {
            pick = i;
            break;
        }
        u -= w;
    }
    let ab = schedule.alpha_bar(t);
    let c = &model.components[pick];
    let std = (ab * c.variance + (1.0 - ab)).sqrt();
    Ok(c.mean
        .iter()
        .map(|&m| ab.sqrt() * m + std * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::schedule::{build_linear_schedule, default_schedule, NoiseSchedule};

    fn two_component() -> MixtureModel {
        MixtureModel::new(
            vec![
                Component {
                    mean: vec![-2.0, 0.0],
                    variance: 1.0,
                },
                Component {
                    mean: vec![2.0, 0.0],
                    variance: 1.0,
                },
            ],
            vec![0.5, 0.5],
        )
        .unwrap()
        .with_condition("left", vec![0])
        .unwrap()
        .with_condition("right", vec![1])
        .unwrap()
    }

    /// ᾱ_1 = 0.25 single-step schedule used by several hand cases.
    fn quarter_schedule() -> NoiseSchedule {
        NoiseSchedule::from_betas(vec![0.75]).unwrap()
    }

    #[test]
    fn weights_must_normalize() {
        let c = Component {
            mean: vec![0.0],
            variance: 1.0,
        };
        assert!(MixtureModel::new(vec![c.clone()], vec![0.9]).is_err());
        assert!(MixtureModel::new(vec![c.clone(), c.clone()], vec![0.5, 0.5 + 1e-9]).is_err());
        assert!(MixtureModel::new(vec![c], vec![1.0 + 1e-13]).is_ok());
    }

    #[test]
    fn noised_mixture_identity_at_t0_and_hand_case() {
        let m = two_component();
        let s = default_schedule();
        let cond = Condition::new("left");
        let at0 = noised_mixture(&m, &s, 0, Some(&cond)).unwrap();
        assert_eq!(at0.components()[0].mean, vec![-2.0, 0.0]);
        assert_eq!(at0.components()[0].variance, 1.0);
        assert_eq!(at0.weights(), &[1.0]);

        // single component (μ, σ²=1) at ᾱ = 0.25 → (0.5 μ, 0.25 + 0.75 = 1.0)
        let m = MixtureModel::single(vec![4.0, -2.0], 1.0).unwrap();
        let s = quarter_schedule();
        let noised = noised_mixture(&m, &s, 1, None).unwrap();
        assert_eq!(noised.components()[0].mean, vec![2.0, -1.0]);
        assert!((noised.components()[0].variance - 1.0).abs() < 1e-15);
    }

    #[test]
    fn noised_mixture_terminal_prior() {
        let m = two_component();
        let s = default_schedule();
        let noised = noised_mixture(&m, &s, 1000, None).unwrap();
        for c in noised.components() {
            assert!(c.mean.iter().all(|v| v.abs() < 0.02));
            assert!((c.variance - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn unknown_condition_rejected() {
        let m = two_component();
        let s = default_schedule();
        let bad = Condition::new("sideways");
        assert!(matches!(
            noised_mixture(&m, &s, 1, Some(&bad)),
            Err(Error::UnknownCondition(_))
        ));
    }

    #[test]
    fn log_density_standard_normal_at_origin() {
        let m = MixtureModel::single(vec![0.0, 0.0], 1.0).unwrap();
        let s = default_schedule();
        let lp = log_density(&m, &s, &[0.0, 0.0], 0, None).unwrap();
        assert!((lp + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn log_density_symmetric_pair_is_average() {
        let m = two_component();
        let s = default_schedule();
        let lp = log_density(&m, &s, &[0.0, 0.0], 0, None).unwrap();
        // both components contribute the same pdf at the midpoint, so the
        // weighted average equals either one
        let single = log_normal_pdf(&[0.0, 0.0], &[-2.0, 0.0], 1.0);
        assert!((lp - single).abs() < 1e-12);
    }

    #[test]
    fn log_density_integrates_to_one() {
        // midpoint quadrature over a generous box at n = 2
        let m = two_component();
        let s = default_schedule();
        let (lo, hi, steps) = (-8.0f64, 8.0f64, 400usize);
        let h = (hi - lo) / steps as f64;
        let mut total = 0.0;
        for i in 0..steps {
            for j in 0..steps {
                let z = [lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h];
                total += log_density(&m, &s, &z, 0, None).unwrap().exp() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 0.02, "integral {total}");
    }

    #[test]
    fn epsilon_single_standard_component_is_linear_in_z() {
        // unit Gaussian data stays N(0, I) at every t, so ε(z) = √(1-ᾱ_t) z
        let m = MixtureModel::single(vec![0.0, 0.0], 1.0).unwrap();
        let s = default_schedule();
        for &t in &[1usize, 250, 900] {
            let z = vec![0.7, -1.3];
            let eps = epsilon_pred(&m, &s, &z, t, None).unwrap();
            let c = (1.0 - s.alpha_bar(t)).sqrt();
            assert!((eps[0] - c * z[0]).abs() < 1e-12);
            assert!((eps[1] - c * z[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn epsilon_vanishes_along_symmetry_axis() {
        let m = two_component();
        let s = default_schedule();
        let eps = epsilon_pred(&m, &s, &[0.0, 0.4], 300, None).unwrap();
        assert!(
            eps[0].abs() < 1e-14,
            "midpoint has no pull along the inter-mean axis"
        );
    }

    #[test]
    fn epsilon_matches_finite_difference_gradient() {
        // ε = -√(1-ᾱ) ∇ log p within 1e-5 on 100 random points (n = 2)
        let m = two_component();
        let s = default_schedule();
        let mut r = rng::stream(42, &[]);
        let h = 1e-5;
        for k in 0..100 {
            let t = 1 + (k * 97) % 1000;
            let z = rng::standard_normal_vec(&mut r, 2);
            let z = linalg::scale(&z, 2.0);
            let eps = epsilon_pred(&m, &s, &z, t, None).unwrap();
            for i in 0..2 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += h;
                zm[i] -= h;
                let g = (log_density(&m, &s, &zp, t, None).unwrap()
                    - log_density(&m, &s, &zm, t, None).unwrap())
                    / (2.0 * h);
                let expect = -(1.0 - s.alpha_bar(t)).sqrt() * g;
                assert!(
                    (eps[i] - expect).abs() < 1e-5,
                    "t={t} i={i}: {} vs {}",
                    eps[i],
                    expect
                );
            }
        }
    }

    #[test]
    fn cfg_reduces_to_plain_prediction() {
        let m = two_component();
        let s = default_schedule();
        let z = vec![0.3, -0.9];
        let plain = epsilon_pred(&m, &s, &z, 100, Some(&Condition::new("left"))).unwrap();
        let cfg = cfg_epsilon(&m, &s, &z, 100, &Condition::new("left")).unwrap();
        assert_eq!(plain, cfg);
    }

    #[test]
    fn cfg_cancels_when_condition_covers_everything() {
        let m = two_component().with_condition("all", vec![0, 1]).unwrap();
        let s = default_schedule();
        let z = vec![0.3, -0.9];
        for &g in &[0.5, 1.0, 4.0] {
            let cond = Condition::with_guidance("all", g);
            let cfg = cfg_epsilon(&m, &s, &z, 100, &cond).unwrap();
            let plain = epsilon_pred(&m, &s, &z, 100, None).unwrap();
            for i in 0..2 {
                assert!((cfg[i] - plain[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cfg_hand_combination_at_pinned_point() {
        let m = two_component();
        let s = quarter_schedule();
        let z = vec![0.5, 0.25];
        let cond = Condition::with_guidance("right", 1.0);
        let cfg = cfg_epsilon(&m, &s, &z, 1, &cond).unwrap();
        let c = epsilon_pred(&m, &s, &z, 1, Some(&Condition::new("right"))).unwrap();
        let u = epsilon_pred(&m, &s, &z, 1, None).unwrap();
        for i in 0..2 {
            assert!((cfg[i] - (2.0 * c[i] - u[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn conditional_density_bounded_by_unconditional() {
        // p(z|y) ≤ p(z) / mass(y) pointwise
        let m = two_component();
        let s = default_schedule();
        let cond = Condition::new("left");
        let mass = m.condition_mass(&cond).unwrap();
        let mut r = rng::stream(9, &[]);
        for _ in 0..200 {
            let z = linalg::scale(&rng::standard_normal_vec(&mut r, 2), 3.0);
            let lc = log_density(&m, &s, &z, 150, Some(&cond)).unwrap();
            let lu = log_density(&m, &s, &z, 150, None).unwrap();
            assert!(lc <= lu - mass.ln() + 1e-12);
        }
    }

    #[test]
    fn terminal_prior_close_in_total_variation() {
        // Pinsker: TV ≤ √(KL/2), with KL(N(m, vI) ‖ N(0, I)) in closed form.
        // Means well inside the unit ball keep the bound under 1e-3 at the
        // default schedule's terminal ᾱ.
        let m = MixtureModel::new(
            vec![
                Component {
                    mean: vec![0.1, -0.1],
                    variance: 0.5,
                },
                Component {
                    mean: vec![-0.1, 0.1],
                    variance: 0.8,
                },
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let s = default_schedule();
        let noised = noised_mixture(&m, &s, 1000, None).unwrap();
        let mut worst: f64 = 0.0;
        for c in noised.components() {
            let v = c.variance;
            let kl = 0.5 * (2.0 * (v - 1.0 - v.ln()) + linalg::dot(&c.mean, &c.mean));
            worst = worst.max((kl / 2.0).sqrt());
        }
        assert!(worst < 1e-3, "TV bound {worst}");
    }

    #[test]
    fn sample_noised_matches_moments() {
        let m = two_component();
        let s = build_linear_schedule(1e-4, 0.02, 1000).unwrap();
        let cond = Condition::new("right");
        let t = 300;
        let mut r = rng::stream(5, &[]);
        let draws = 50_000;
        let mut sum = [0.0f64; 2];
        let mut sumsq = [0.0f64; 2];
        for _ in 0..draws {
            let z = sample_noised(&m, &s, t, Some(&cond), &mut r).unwrap();
            for i in 0..2 {
                sum[i] += z[i];
                sumsq[i] += z[i] * z[i];
            }
        }
        let ab = s.alpha_bar(t);
        let mean0 = sum[0] / draws as f64;
        let var0 = sumsq[0] / draws as f64 - mean0 * mean0;
        assert!((mean0 - 2.0 * ab.sqrt()).abs() < 0.02);
        assert!((var0 - 1.0).abs() < 0.03);
    }
}

//! Numerical laboratory for aggregating multiple diffusion samplers in a
//! shared latent space.
//!
//! Everything runs on analytically tractable Gaussian-mixture "models" whose
//! noised marginals, scores and densities are closed-form, so sampler kernels,
//! aggregation operators and concentration bounds can be verified against
//! exact oracles instead of trained networks.
//!
//! Module map:
//! - [`schedule`]: discrete β/α/ᾱ tables and the shared forward process
//! - [`scoremodel`]: conditional Gaussian mixtures with exact ε-predictions
//! - [`sampler`]: reverse-time kernels (deterministic and ancestral) and
//!   full trajectory generation with deterministic seeding
//! - [`aggregate`]: spherical aggregation, deviation optimization, the
//!   multi-model aggregation loop and its linear-interpolation ablation
//! - [`theory`]: concentration and membership lower bounds, moment ODEs
//! - [`metrics`]: shell deviation, domain membership, MMD, log-likelihood
//! - [`baseline`]: summed-score composition with Langevin correction

pub mod aggregate;
pub mod baseline;
mod error;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod scoremodel;
pub mod theory;

pub use error::{Error, Result};
pub use schedule::NoiseSchedule;
pub use scoremodel::{Condition, MixtureModel};

//! Deterministic Follow-the-Leader particle simulator for one-dimensional
//! aggregation-diffusion equations with nonlinear mobility, plus runtime
//! diagnostics for the structural estimates the scheme satisfies.

// `!(a > b)` is how NaN gets rejected; index loops mirror the tableaux.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod app;
pub mod atomization;
pub mod config;
pub mod density;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod model;
pub mod output;
pub mod quadrature;

pub use atomization::{atomize, local_densities, ParticleState};
pub use density::{
    l1_distance, min_max, pseudo_inverse, reconstruct_density, total_variation, wasserstein1,
    DiscreteDensity, PseudoInverse,
};
pub use dynamics::{assemble_velocity, density_rate, VelocityField};
pub use error::{Error, Result};
pub use integrator::{integrate, step_once, IntegratorConfig, Method, StepOutcome, Trajectory};
pub use model::{
    validate, DiffusionLaw, InitialDatum, InteractionKernel, ModelSpec, ValidationReport,
    VelocityLaw,
};

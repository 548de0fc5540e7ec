//! Synchronized deterministic DDIM sampling across coupled instance spaces.
//!
//! A canonical variable `z` is observed through projections `f_i` into
//! instance spaces where a noise predictor lives. The engine in [`sync`]
//! denoises either the instance variables or the canonical variable and
//! merges views through unprojection `g_i` and aggregation `A` at any of the
//! three computation layers: predicted noise, Tweedie estimates of the clean
//! sample, or the DDIM posterior mean.
//!
//! [`denoiser::GaussianMixture`] is an exact noise predictor for
//! Gaussian-mixture data, so every structural property of the engine can be
//! checked without a trained network.

pub mod denoiser;
pub mod error;
pub mod field;
pub mod metrics;
pub mod noise;
pub mod schedule;
pub mod spaces;
pub mod sync;

pub use denoiser::{GaussianMixture, MixtureLayout, NoisePredictor};
pub use error::{Error, Result};
pub use field::Field;
pub use noise::{gaussian_noise_stream, seeded_gaussian_noise};
pub use schedule::{ddim_step, forward_diffuse, tweedie, NoiseSchedule};
pub use spaces::{
    aggregate, CanonicalKind, CanonicalState, OperatorKind, Partial, ProjectionOperator,
};
pub use sync::{
    run_case, run_plan, CaseId, DenoiseSpace, DenoisingPlan, InitPolicy, SyncEngine, SyncRunResult,
    Trace, Trajectory,
};

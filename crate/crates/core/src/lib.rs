//! A desk-scale generative-modeling laboratory built around noise-level
//! guidance: refining the initial noise of diffusion and rectified-flow
//! samplers with forward model evaluations only, before generation starts.
//!
//! The crate provides deterministic numerics ([`rng`], [`vector`]), forward
//! corruption schedules ([`schedule`]), trainable denoiser / velocity
//! networks next to an exact Gaussian-mixture oracle ([`models`]), guided
//! output composition ([`guidance`]), the noise-alignment loop itself
//! ([`align`]), reverse-process samplers ([`sampling`]), and evaluation
//! metrics ([`eval`]).

pub mod align;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod guidance;
pub mod mlp;
pub mod models;
pub mod rng;
pub mod sampling;
pub mod schedule;
pub mod vector;

pub use align::{
    align_noise, align_noise_with, edit_direction, norm_clip, renormalize,
    steps_for_guidance_scale, AlignOptions, AlignmentTrace, NLGConfig, StepRecord,
};
pub use error::{Error, Result};
pub use guidance::{guided_output, GuidanceMode, GuidanceSpec};
pub use models::{
    AnalyticMixtureModel, ConditionToken, Denoiser, ModelHandle, ModelPair, Parameterization,
    QualityLevel, ScoreNet,
};
pub use rng::{sample_gaussian, RngStream};
pub use schedule::{perturb, NoiseSchedule, ScheduleKind};
pub use vector::{linear_combine, Vector};

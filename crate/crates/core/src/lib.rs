//! Semantic guidance for diffusion sampling.
//!
//! The crate is split along the data flow of a guided sampling run:
//!
//! * [`estimate`]: finite, shape-checked noise-estimate vectors.
//! * [`guidance`]: the per-step guidance arithmetic and momentum.
//! * [`concept`]: the tagged Gaussian-mixture backend with exact noise
//!   predictions.
//! * [`schedule`] and [`sampler`]: variance-preserving schedules and the
//!   deterministic DDIM loop.
//! * [`config`]: the JSON run configuration.
//! * [`metrics`]: concept-shift, strength-sweep and concept-arithmetic
//!   reports.

pub mod concept;
pub mod config;
pub mod error;
pub mod estimate;
pub mod guidance;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod schedule;

pub use concept::{composite_query, marginal_at, Component, ConceptQuery, MixtureScene, NoisePredictor, TagSet};
pub use error::{Result, SegaError};
pub use estimate::NoiseEstimate;
pub use guidance::{
    aggregate_edits, cfg_combine, edit_direction, edit_mask_scale, gamma_single, guided_prediction,
    momentum_apply, momentum_update, sega_step, Direction, EditDirective, GuidanceConfig,
    GuidanceState, MuMode, StepOutput,
};
pub use sampler::{denoise_update, sample_batch, sample_initial, sample_loop, LatentState, SampleTrajectory};
pub use schedule::{make_schedule, Schedule, ScheduleKind};
pub use config::{emit_normalized, parse, parse_with, parse_with_overrides, ConfigError, RunConfig, Strictness};
pub use metrics::{arithmetic_consistency, concept_shift, spearman, strength_sweep, ShiftReport, SweepReport};

//! Deterministic reverse-diffusion loop.
//!
//! Each step gathers the unconditioned, prompt-conditioned and per-edit
//! noise estimates from a [`NoisePredictor`], combines them with
//! [`sega_step`], and takes a deterministic DDIM step (η = 0):
//!
//! ```text
//! x̂       = (z_t - ω_t ε̄) / α_t
//! z_{t-1} = α_{t-1} x̂ + ω_{t-1} ε̄        (x̂ itself at t = 1)
//! ```

use rayon::prelude::*;

use crate::concept::{ConceptQuery, NoisePredictor};
use crate::error::{Result, SegaError};
use crate::estimate::NoiseEstimate;
use crate::guidance::{sega_step, EditDirective, GuidanceConfig, GuidanceState};
use crate::rng::standard_normals;
use crate::schedule::Schedule;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z: NoiseEstimate,
    /// Schedule index of `z`; 0 once fully denoised.
    pub t: usize,
}

/// Diagnostics for one loop iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    /// Latent entering the step.
    pub z: Vec<f64>,
    pub gamma_norm: f64,
    pub active_fractions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrajectory {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub sample: Vec<f64>,
    /// Momentum after the final step.
    pub final_momentum: Vec<f64>,
}

/// Initial latent `z_T ~ N(0, I)` for `seed` (see [`crate::rng`]).
pub fn sample_initial(seed: u64, dim: usize) -> Result<NoiseEstimate> {
    if dim == 0 {
        return Err(SegaError::EmptyVector);
    }
    NoiseEstimate::new(standard_normals(seed, dim))
}

pub fn denoise_update(
    latent: &LatentState,
    eps_bar: &NoiseEstimate,
    schedule: &Schedule,
) -> Result<LatentState> {
    let t = latent.t;
    if t == 0 || t > schedule.steps() {
        return Err(SegaError::OutOfRange {
            name: "t",
            value: t as f64,
            range: "1 ≤ t ≤ T",
        });
    }
    let (alpha, omega) = (schedule.alpha(t), schedule.omega(t));
    let x_hat = latent.z.zip_with(eps_bar, |z, e| (z - omega * e) / alpha)?;
    if t == 1 {
        return Ok(LatentState { z: x_hat, t: 0 });
    }
    let (alpha_prev, omega_prev) = (schedule.alpha(t - 1), schedule.omega(t - 1));
    let z = x_hat.zip_with(eps_bar, |x, e| alpha_prev * x + omega_prev * e)?;
    Ok(LatentState { z, t: t - 1 })
}

fn at_step(step: usize, t: usize) -> impl Fn(SegaError) -> SegaError {
    move |e| match e {
        SegaError::NonFinite { .. } => SegaError::NonFiniteLatent { step, t },
        other => other,
    }
}

/// Runs one guided chain from `seed` through every step of `schedule`.
pub fn sample_loop<P: NoisePredictor + ?Sized>(
    predictor: &P,
    prompt: &ConceptQuery,
    directives: &[EditDirective],
    config: &GuidanceConfig,
    schedule: &Schedule,
    seed: u64,
) -> Result<SampleTrajectory> {
    config.validate()?;
    for d in directives {
        d.validate()?;
    }
    let dim = predictor.dim();
    let mut latent = LatentState {
        z: sample_initial(seed, dim)?,
        t: schedule.steps(),
    };
    let mut state = GuidanceState::new(dim);
    let mut records = Vec::with_capacity(schedule.steps());

    for step in 0..schedule.steps() {
        let t = latent.t;
        let wrap = at_step(step, t);
        let (alpha, omega) = (schedule.alpha(t), schedule.omega(t));
        let eps_uncond = predictor.predict(None, &latent.z, alpha, omega).map_err(&wrap)?;
        let eps_prompt = predictor
            .predict(Some(prompt), &latent.z, alpha, omega)
            .map_err(&wrap)?;
        let eps_edits = directives
            .iter()
            .map(|d| predictor.predict(Some(&d.query), &latent.z, alpha, omega))
            .collect::<Result<Vec<_>>>()
            .map_err(&wrap)?;

        let out = sega_step(&eps_uncond, &eps_prompt, &eps_edits, directives, config, &state)
            .map_err(&wrap)?;
        records.push(StepRecord {
            t,
            z: latent.z.as_slice().to_vec(),
            gamma_norm: out.gamma.norm(),
            active_fractions: out.active_fractions,
        });
        latent = denoise_update(&latent, &out.prediction, schedule).map_err(&wrap)?;
        state = out.state;
    }

    Ok(SampleTrajectory {
        seed,
        steps: records,
        sample: latent.z.into_vec(),
        final_momentum: state.momentum.into_vec(),
    })
}

/// Runs one chain per seed, in parallel, returning results in seed order.
pub fn sample_batch<P: NoisePredictor + ?Sized>(
    predictor: &P,
    prompt: &ConceptQuery,
    directives: &[EditDirective],
    config: &GuidanceConfig,
    schedule: &Schedule,
    seeds: &[u64],
) -> Result<Vec<SampleTrajectory>> {
    seeds
        .par_iter()
        .map(|&seed| sample_loop(predictor, prompt, directives, config, schedule, seed))
        .collect()
}

/// Seeds `seed, seed + 1, …, seed + n - 1`.
pub fn fan_out_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| seed.wrapping_add(i)).collect()
}

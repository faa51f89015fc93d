//! Semantic guidance arithmetic.
//!
//! Turns an unconditioned prediction, a prompt-conditioned prediction and
//! any number of edit-conditioned predictions into one guided noise
//! estimate. Each edit contributes a direction `ψ` (towards or away from its
//! concept), masked and rescaled elementwise by `μ`; edits are blended with
//! weights `g_i` that stay zero until their warm-up has elapsed, and a
//! momentum accumulator `ν` smooths the blended term across steps.
//!
//! All functions are pure. The only cross-step state is [`GuidanceState`],
//! which is passed in and returned explicitly.

use log::warn;

use crate::concept::{normalize_in_place, ConceptQuery};
use crate::error::{Result, SegaError};
use crate::estimate::NoiseEstimate;

/// Offset added to `p - e` before taking its reciprocal, signed like the
/// difference (zero counts as positive).
pub const RECIPROCAL_GUARD: f64 = 1e-12;

/// Edit scales above this are accepted but logged.
pub const EDIT_SCALE_WARN: f64 = 5000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Steer towards the edit concept.
    Positive,
    /// Steer away from the edit concept.
    Negative,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Positive => "positive",
            Direction::Negative => "negative",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "positive" => Ok(Direction::Positive),
            "negative" => Ok(Direction::Negative),
            other => Err(format!("unknown direction {other:?} (expected positive|negative)")),
        }
    }
}

/// How the elementwise scale of an active element is derived from `|φ|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MuMode {
    /// `max(1, |φ|)`.
    Paper,
    /// `min(s_max, |φ|)`.
    Clamped { s_max: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditDirective {
    pub query: ConceptQuery,
    pub direction: Direction,
    /// `s_e`, non-negative.
    pub edit_scale: f64,
    /// `λ`, in `[-1, 1]`.
    pub threshold: f64,
    /// `δ_i`, in steps.
    pub warmup: usize,
    /// `g_i`, non-negative.
    pub weight: f64,
}

impl EditDirective {
    pub fn new(
        query: ConceptQuery,
        direction: Direction,
        edit_scale: f64,
        threshold: f64,
        warmup: usize,
        weight: f64,
    ) -> Result<Self> {
        let d = Self {
            query,
            direction,
            edit_scale,
            threshold,
            warmup,
            weight,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.edit_scale.is_finite() && self.edit_scale >= 0.0) {
            return Err(SegaError::OutOfRange {
                name: "s_e",
                value: self.edit_scale,
                range: "s_e ≥ 0",
            });
        }
        if self.edit_scale > EDIT_SCALE_WARN {
            warn!("s_e = {} exceeds {EDIT_SCALE_WARN}", self.edit_scale);
        }
        if !(-1.0..=1.0).contains(&self.threshold) {
            return Err(SegaError::OutOfRange {
                name: "lambda",
                value: self.threshold,
                range: "λ ∈ [−1,1]",
            });
        }
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(SegaError::OutOfRange {
                name: "g",
                value: self.weight,
                range: "g ≥ 0",
            });
        }
        Ok(())
    }
}

/// Rescales directive weights so they sum to one.
pub fn normalize_weights(directives: &mut [EditDirective]) -> Result<()> {
    if directives.is_empty() {
        return Ok(());
    }
    let mut weights: Vec<f64> = directives.iter().map(|d| d.weight).collect();
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(SegaError::InvalidArgument(
            "edit weights must not all be zero".into(),
        ));
    }
    normalize_in_place(&mut weights);
    for (d, w) in directives.iter_mut().zip(weights) {
        d.weight = w;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    /// `s_g`.
    pub guidance_scale: f64,
    /// `s_m`, in `[0, 1]`.
    pub momentum_scale: f64,
    /// `β_m`, in `[0, 1)`.
    pub momentum_beta: f64,
    pub mu_mode: MuMode,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            guidance_scale: 7.5,
            momentum_scale: 0.0,
            momentum_beta: 0.4,
            mu_mode: MuMode::Paper,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.guidance_scale.is_finite() && self.guidance_scale >= 0.0) {
            return Err(SegaError::OutOfRange {
                name: "s_g",
                value: self.guidance_scale,
                range: "s_g ≥ 0",
            });
        }
        if !(0.0..=1.0).contains(&self.momentum_scale) {
            return Err(SegaError::OutOfRange {
                name: "s_m",
                value: self.momentum_scale,
                range: "s_m ∈ [0,1]",
            });
        }
        if !(0.0..1.0).contains(&self.momentum_beta) {
            return Err(SegaError::OutOfRange {
                name: "beta_m",
                value: self.momentum_beta,
                range: "β_m ∈ [0,1)",
            });
        }
        if let MuMode::Clamped { s_max } = self.mu_mode {
            if !(s_max.is_finite() && s_max > 0.0) {
                return Err(SegaError::OutOfRange {
                    name: "s_max",
                    value: s_max,
                    range: "s_max > 0",
                });
            }
        }
        Ok(())
    }
}

/// Momentum accumulator `ν_t` together with the step counter `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceState {
    pub momentum: NoiseEstimate,
    pub step: usize,
}

impl GuidanceState {
    pub fn new(dim: usize) -> Self {
        Self {
            momentum: NoiseEstimate::zeros(dim),
            step: 0,
        }
    }
}

/// Classifier-free guidance: `u + s_g (p - u)`.
pub fn cfg_combine(
    eps_uncond: &NoiseEstimate,
    eps_prompt: &NoiseEstimate,
    guidance_scale: f64,
) -> Result<NoiseEstimate> {
    if !(guidance_scale.is_finite() && guidance_scale >= 0.0) {
        return Err(SegaError::OutOfRange {
            name: "s_g",
            value: guidance_scale,
            range: "s_g ≥ 0",
        });
    }
    eps_uncond.zip_with(eps_prompt, |u, p| u + guidance_scale * (p - u))
}

/// `ψ`: `u - e` for positive edits, `-(u - e)` for negative ones.
pub fn edit_direction(
    eps_uncond: &NoiseEstimate,
    eps_edit: &NoiseEstimate,
    direction: Direction,
) -> Result<NoiseEstimate> {
    match direction {
        Direction::Positive => eps_uncond.zip_with(eps_edit, |u, e| u - e),
        Direction::Negative => eps_uncond.zip_with(eps_edit, |u, e| -(u - e)),
    }
}

#[inline]
fn is_active(diff: f64, threshold: f64, direction: Direction) -> bool {
    match direction {
        Direction::Positive => diff > threshold,
        Direction::Negative => diff < threshold,
    }
}

#[inline]
fn guarded_phi(edit_scale: f64, diff: f64) -> f64 {
    let sign = if diff < 0.0 { -1.0 } else { 1.0 };
    edit_scale / (diff + RECIPROCAL_GUARD * sign)
}

/// `μ`: for each element of `diff = p - e` that passes the threshold test
/// (`diff > λ` positive, `diff < λ` negative) the scale derived from
/// `φ = s_e / diff`; zero elsewhere.
pub fn edit_mask_scale(
    eps_prompt: &NoiseEstimate,
    eps_edit: &NoiseEstimate,
    edit_scale: f64,
    threshold: f64,
    direction: Direction,
    mode: MuMode,
) -> Result<NoiseEstimate> {
    if !(edit_scale.is_finite() && edit_scale >= 0.0) {
        return Err(SegaError::OutOfRange {
            name: "s_e",
            value: edit_scale,
            range: "s_e ≥ 0",
        });
    }
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(SegaError::OutOfRange {
            name: "lambda",
            value: threshold,
            range: "λ ∈ [−1,1]",
        });
    }
    eps_prompt.zip_with(eps_edit, |p, e| {
        let diff = p - e;
        if !is_active(diff, threshold, direction) {
            return 0.0;
        }
        let phi = guarded_phi(edit_scale, diff).abs();
        match mode {
            MuMode::Paper => phi.max(1.0),
            MuMode::Clamped { s_max } => phi.min(s_max),
        }
    })
}

/// Fraction of elements passing the threshold test of [`edit_mask_scale`].
pub fn active_fraction(
    eps_prompt: &NoiseEstimate,
    eps_edit: &NoiseEstimate,
    threshold: f64,
    direction: Direction,
) -> Result<f64> {
    eps_prompt.ensure_same_shape(eps_edit)?;
    let active = eps_prompt
        .as_slice()
        .iter()
        .zip(eps_edit.as_slice())
        .filter(|(&p, &e)| is_active(p - e, threshold, direction))
        .count();
    Ok(active as f64 / eps_prompt.dim() as f64)
}

/// `γ = μ ⊙ ψ`.
pub fn gamma_single(psi: &NoiseEstimate, mu: &NoiseEstimate) -> Result<NoiseEstimate> {
    mu.mul(psi)
}

fn weighted_sum(gammas: &[NoiseEstimate], weights: &[f64], dim: usize) -> Result<NoiseEstimate> {
    let mut acc = NoiseEstimate::zeros(dim);
    for (gamma, &w) in gammas.iter().zip(weights) {
        acc = acc.axpy(w, gamma)?;
    }
    Ok(acc)
}

fn gated_weights(directives: &[EditDirective], step: usize) -> Vec<f64> {
    directives
        .iter()
        .map(|d| if step < d.warmup { 0.0 } else { d.weight })
        .collect()
}

/// `γ̂_t = Σ g_i γ_i` with `g_i = 0` while `t < δ_i`. Surviving weights are
/// not renormalized. An empty list yields the zero vector of `dim`.
pub fn aggregate_edits(
    gammas: &[NoiseEstimate],
    directives: &[EditDirective],
    step: usize,
    dim: usize,
) -> Result<NoiseEstimate> {
    if gammas.len() != directives.len() {
        return Err(SegaError::InvalidArgument(format!(
            "{} guidance terms for {} directives",
            gammas.len(),
            directives.len()
        )));
    }
    weighted_sum(gammas, &gated_weights(directives, step), dim)
}

/// Adds `s_m ν_t` once every warm-up has elapsed; identity before that.
pub fn momentum_apply(
    gamma_hat: &NoiseEstimate,
    state: &GuidanceState,
    momentum_scale: f64,
    all_warmups_done: bool,
) -> Result<NoiseEstimate> {
    if all_warmups_done {
        gamma_hat.axpy(momentum_scale, &state.momentum)
    } else {
        gamma_hat.ensure_same_shape(&state.momentum)?;
        Ok(gamma_hat.clone())
    }
}

/// `ν_{t+1} = β_m ν_t + (1 - β_m) γ_t`, advancing the step counter.
pub fn momentum_update(
    state: &GuidanceState,
    gamma: &NoiseEstimate,
    momentum_beta: f64,
) -> Result<GuidanceState> {
    if !(0.0..1.0).contains(&momentum_beta) {
        return Err(SegaError::OutOfRange {
            name: "beta_m",
            value: momentum_beta,
            range: "β_m ∈ [0,1)",
        });
    }
    let momentum = state
        .momentum
        .zip_with(gamma, |v, g| momentum_beta * v + (1.0 - momentum_beta) * g)?;
    Ok(GuidanceState {
        momentum,
        step: state.step + 1,
    })
}

/// `u + s_g (p - u - γ)` once past warm-up, plain classifier-free guidance
/// before.
pub fn guided_prediction(
    eps_uncond: &NoiseEstimate,
    eps_prompt: &NoiseEstimate,
    gamma: &NoiseEstimate,
    guidance_scale: f64,
    past_warmup: bool,
) -> Result<NoiseEstimate> {
    let plain = cfg_combine(eps_uncond, eps_prompt, guidance_scale)?;
    if !past_warmup {
        gamma.ensure_same_shape(eps_uncond)?;
        return Ok(plain);
    }
    let delta = eps_prompt.zip_with(eps_uncond, |p, u| p - u)?;
    let guided = delta.sub(gamma)?;
    eps_uncond.zip_with(&guided, |u, g| u + guidance_scale * g)
}

/// Result of one guidance step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// The combined noise estimate handed to the latent update.
    pub prediction: NoiseEstimate,
    /// State for the next step.
    pub state: GuidanceState,
    /// The guidance term applied this step (zero before any warm-up ends).
    pub gamma: NoiseEstimate,
    /// Per edit, the fraction of elements passing its threshold test.
    pub active_fractions: Vec<f64>,
}

/// One full guidance step for step index `state.step`.
///
/// Momentum is fed every step with the ungated blend of all edit terms, so
/// it accumulates through warm-up; the blend that enters the prediction is
/// gated per edit, and `s_m ν_t` joins it only once the longest warm-up has
/// elapsed.
pub fn sega_step(
    eps_uncond: &NoiseEstimate,
    eps_prompt: &NoiseEstimate,
    eps_edits: &[NoiseEstimate],
    directives: &[EditDirective],
    config: &GuidanceConfig,
    state: &GuidanceState,
) -> Result<StepOutput> {
    if eps_edits.len() != directives.len() {
        return Err(SegaError::InvalidArgument(format!(
            "{} edit predictions for {} directives",
            eps_edits.len(),
            directives.len()
        )));
    }
    eps_uncond.ensure_same_shape(eps_prompt)?;
    eps_uncond.ensure_same_shape(&state.momentum)?;
    let dim = eps_uncond.dim();
    let t = state.step;

    let mut gammas = Vec::with_capacity(directives.len());
    let mut active_fractions = Vec::with_capacity(directives.len());
    for (eps_edit, d) in eps_edits.iter().zip(directives) {
        let psi = edit_direction(eps_uncond, eps_edit, d.direction)?;
        let mu = edit_mask_scale(
            eps_prompt,
            eps_edit,
            d.edit_scale,
            d.threshold,
            d.direction,
            config.mu_mode,
        )?;
        gammas.push(gamma_single(&psi, &mu)?);
        active_fractions.push(active_fraction(eps_prompt, eps_edit, d.threshold, d.direction)?);
    }

    let any_active = directives.iter().any(|d| t >= d.warmup);
    let all_done = !directives.is_empty() && directives.iter().all(|d| t >= d.warmup);

    let gamma_hat = aggregate_edits(&gammas, directives, t, dim)?;
    let gamma = momentum_apply(&gamma_hat, state, config.momentum_scale, all_done)?;
    let momentum_input = if all_done {
        gamma.clone()
    } else {
        let weights: Vec<f64> = directives.iter().map(|d| d.weight).collect();
        weighted_sum(&gammas, &weights, dim)?
    };
    let next = momentum_update(state, &momentum_input, config.momentum_beta)?;
    let prediction = guided_prediction(
        eps_uncond,
        eps_prompt,
        &gamma,
        config.guidance_scale,
        any_active,
    )?;
    Ok(StepOutput {
        prediction,
        state: next,
        gamma: if any_active { gamma } else { NoiseEstimate::zeros(dim) },
        active_fractions,
    })
}

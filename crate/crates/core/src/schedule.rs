//! Variance-preserving noise schedules.
//!
//! Steps are indexed `t = T` (noisiest) down to `t = 1`. Each step carries a
//! signal level `α_t` and noise level `ω_t` with `α_t² + ω_t² = 1`. Index 0
//! is the clean endpoint `(1, 0)`.

use crate::error::{Result, SegaError};

pub const MAX_STEPS: usize = 10_000;

/// Per-step variance rates are capped here so the final level keeps a
/// non-zero signal.
const MAX_BETA: f64 = 0.999;

const COSINE_OFFSET: f64 = 0.008;

/// The linear schedule uses a continuous-time rate `β(τ)` rising linearly
/// from `β_min` to `β_max` over `τ ∈ [0, 1]`, so the cumulative signal is
/// `exp(-(β_min τ + (β_max - β_min) τ² / 2))` at `τ = t / T`. The terminal
/// level (`α_T ≈ 0.0066`) is the same for every `T`.
const LINEAR_BETA_MIN: f64 = 0.1;
const LINEAR_BETA_MAX: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    LinearVp,
    Cosine,
}

impl ScheduleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::LinearVp => "linear_vp",
            ScheduleKind::Cosine => "cosine",
        }
    }
}

impl std::str::FromStr for ScheduleKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear_vp" => Ok(ScheduleKind::LinearVp),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(format!("unknown schedule {other:?} (expected linear_vp|cosine)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    kind: ScheduleKind,
    alphas: Vec<f64>,
    omegas: Vec<f64>,
}

fn cosine_level(tau: f64) -> f64 {
    let angle = (tau + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
    angle.cos().powi(2)
}

pub fn make_schedule(steps: usize, kind: ScheduleKind) -> Result<Schedule> {
    if !(1..=MAX_STEPS).contains(&steps) {
        return Err(SegaError::OutOfRange {
            name: "steps",
            value: steps as f64,
            range: "1 ≤ T ≤ 10000",
        });
    }
    let n = steps as f64;
    let mut alphas = Vec::with_capacity(steps);
    let mut omegas = Vec::with_capacity(steps);
    let mut signal = 1.0;
    for t in 1..=steps {
        let tau = t as f64 / n;
        signal = match kind {
            ScheduleKind::LinearVp => {
                let log_signal =
                    -(LINEAR_BETA_MIN * tau + 0.5 * (LINEAR_BETA_MAX - LINEAR_BETA_MIN) * tau * tau);
                log_signal.exp()
            }
            ScheduleKind::Cosine => {
                let prev = (t - 1) as f64 / n;
                let beta = 1.0 - cosine_level(tau) / cosine_level(prev);
                signal * (1.0 - beta.clamp(0.0, MAX_BETA))
            }
        };
        alphas.push(signal.sqrt());
        omegas.push((1.0 - signal).sqrt());
    }
    Ok(Schedule {
        kind,
        alphas,
        omegas,
    })
}

impl Schedule {
    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn steps(&self) -> usize {
        self.alphas.len()
    }

    /// `α_t`; `t = 0` is the clean endpoint.
    pub fn alpha(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alphas[t - 1]
        }
    }

    /// `ω_t`; `t = 0` is the clean endpoint.
    pub fn omega(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.omegas[t - 1]
        }
    }
}

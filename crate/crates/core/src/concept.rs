//! Analytic ε-prediction backend.
//!
//! A [`MixtureScene`] is a diagonal-covariance Gaussian mixture whose
//! components carry string tags. A concept is a conjunction of tags; the
//! concept-conditioned distribution is the sub-mixture of matching
//! components with renormalized weights. Under the variance-preserving
//! forward process `z = α x + ω ε` every component stays Gaussian, so the
//! noise prediction `ε̂ = -ω ∇_z log p_t(z)` is available in closed form.

use std::collections::BTreeSet;

use crate::error::{Result, SegaError};
use crate::estimate::NoiseEstimate;

pub type TagSet = BTreeSet<String>;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Weights whose sum is already within this distance of 1 are left untouched
/// so that normalizing twice is a no-op.
pub(crate) const NORMALIZED_TOLERANCE: f64 = 1e-12;

pub(crate) fn normalize_in_place(weights: &mut [f64]) {
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > NORMALIZED_TOLERANCE {
        for w in weights.iter_mut() {
            *w /= total;
        }
    }
}

pub fn tags<I, S>(items: I) -> TagSet
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    items.into_iter().map(Into::into).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub mean: Vec<f64>,
    pub variances: Vec<f64>,
    pub weight: f64,
    pub tags: TagSet,
}

impl Component {
    pub fn new(mean: Vec<f64>, variances: Vec<f64>, weight: f64, tags: TagSet) -> Result<Self> {
        if mean.is_empty() {
            return Err(SegaError::InvalidScene("component mean is empty".into()));
        }
        if mean.len() != variances.len() {
            return Err(SegaError::InvalidScene(format!(
                "mean has {} entries but variances has {}",
                mean.len(),
                variances.len()
            )));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(SegaError::InvalidScene("component mean is not finite".into()));
        }
        if variances.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(SegaError::InvalidScene("variances must be positive and finite".into()));
        }
        if !(weight.is_finite() && weight > 0.0) {
            return Err(SegaError::InvalidScene("component weight must be positive".into()));
        }
        if tags.is_empty() {
            return Err(SegaError::InvalidScene("component tags must be non-empty".into()));
        }
        Ok(Self {
            mean,
            variances,
            weight,
            tags,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn has_all(&self, required: &TagSet) -> bool {
        required.is_subset(&self.tags)
    }
}

/// Per-dimension mean and variance of a component after diffusing to level
/// `(alpha, omega)`: mean `α m`, variance `α² s + ω²`.
pub fn marginal_at(component: &Component, alpha: f64, omega: f64) -> (Vec<f64>, Vec<f64>) {
    let mean = component.mean.iter().map(|m| alpha * m).collect();
    let var = component
        .variances
        .iter()
        .map(|s| alpha * alpha * s + omega * omega)
        .collect();
    (mean, var)
}

/// A concept: either a tag conjunction or a weighted blend of conjunctions.
#[derive(Debug, Clone, PartialEq)]
pub enum ConceptQuery {
    Atomic(TagSet),
    /// Weights are positive and normalized.
    Composite(Vec<(TagSet, f64)>),
}

impl ConceptQuery {
    pub fn atomic<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ConceptQuery::Atomic(tags(items))
    }

    /// Every atomic part with its blend weight (1 for an atomic query).
    pub fn parts(&self) -> Vec<(&TagSet, f64)> {
        match self {
            ConceptQuery::Atomic(t) => vec![(t, 1.0)],
            ConceptQuery::Composite(parts) => parts.iter().map(|(t, w)| (t, *w)).collect(),
        }
    }

    pub fn label(&self) -> String {
        fn join(t: &TagSet) -> String {
            if t.is_empty() {
                "*".to_string()
            } else {
                t.iter().cloned().collect::<Vec<_>>().join("+")
            }
        }
        match self {
            ConceptQuery::Atomic(t) => join(t),
            ConceptQuery::Composite(parts) => parts
                .iter()
                .map(|(t, w)| format!("{}@{}", join(t), w))
                .collect::<Vec<_>>()
                .join("|"),
        }
    }
}

/// Blends atomic queries with positive weights, normalized to sum to one.
pub fn composite_query(queries: Vec<TagSet>, weights: &[f64]) -> Result<ConceptQuery> {
    if queries.len() != weights.len() {
        return Err(SegaError::InvalidQuery(format!(
            "{} queries but {} weights",
            queries.len(),
            weights.len()
        )));
    }
    if queries.is_empty() {
        return Err(SegaError::InvalidQuery("composite query needs at least one part".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(SegaError::InvalidQuery(format!(
            "composite weights must be positive, got {w}"
        )));
    }
    let mut normalized = weights.to_vec();
    normalize_in_place(&mut normalized);
    Ok(ConceptQuery::Composite(queries.into_iter().zip(normalized).collect()))
}

/// Components of a scene with the weights a query assigns them (summing to 1).
#[derive(Debug, Clone, PartialEq)]
pub struct SubMixture {
    pub entries: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureScene {
    dim: usize,
    components: Vec<Component>,
}

impl MixtureScene {
    /// Validates shapes and normalizes component weights to sum to one.
    pub fn new(mut components: Vec<Component>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| SegaError::InvalidScene("scene has no components".into()))?;
        let dim = first.dim();
        if let Some((i, c)) = components.iter().enumerate().find(|(_, c)| c.dim() != dim) {
            return Err(SegaError::InvalidScene(format!(
                "component {i} has dimension {} but the scene has dimension {dim}",
                c.dim()
            )));
        }
        let mut weights: Vec<f64> = components.iter().map(|c| c.weight).collect();
        normalize_in_place(&mut weights);
        for (c, w) in components.iter_mut().zip(weights) {
            c.weight = w;
        }
        Ok(Self { dim, components })
    }

    /// Four unit-variance components in the plane: king, queen and two
    /// commoners, equal weights.
    pub fn royal_court() -> Self {
        let c = |x: f64, y: f64, t: &[&str]| {
            Component::new(vec![x, y], vec![1.0, 1.0], 1.0, tags(t.iter().copied())).unwrap()
        };
        Self::new(vec![
            c(-3.0, 3.0, &["royal", "male"]),
            c(3.0, 3.0, &["royal", "female"]),
            c(-3.0, -3.0, &["common", "male"]),
            c(3.0, -3.0, &["common", "female"]),
        ])
        .unwrap()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Components carrying every tag in `required`, weights renormalized.
    pub fn select(&self, required: &TagSet) -> Result<SubMixture> {
        let matching: Vec<usize> = self
            .components
            .iter()
            .enumerate()
            .filter(|(_, c)| c.has_all(required))
            .map(|(i, _)| i)
            .collect();
        if matching.is_empty() {
            return Err(SegaError::EmptySelection {
                tags: required.iter().cloned().collect(),
            });
        }
        let total: f64 = matching.iter().map(|&i| self.components[i].weight).sum();
        Ok(SubMixture {
            entries: matching
                .into_iter()
                .map(|i| (i, self.components[i].weight / total))
                .collect(),
        })
    }

    /// The conditional distribution a query denotes. Composite queries pool
    /// their sub-mixtures, scaled by the blend weights.
    pub fn resolve(&self, query: Option<&ConceptQuery>) -> Result<SubMixture> {
        match query {
            None => Ok(SubMixture {
                entries: self
                    .components
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (i, c.weight))
                    .collect(),
            }),
            Some(ConceptQuery::Atomic(t)) => self.select(t),
            Some(ConceptQuery::Composite(parts)) => {
                let mut pooled = vec![0.0; self.components.len()];
                for (t, blend) in parts {
                    for (i, w) in self.select(t)?.entries {
                        pooled[i] += blend * w;
                    }
                }
                Ok(SubMixture {
                    entries: pooled
                        .into_iter()
                        .enumerate()
                        .filter(|(_, w)| *w > 0.0)
                        .collect(),
                })
            }
        }
    }

    fn log_joint(&self, sub: &SubMixture, z: &[f64], alpha: f64, omega: f64) -> Vec<f64> {
        sub.entries
            .iter()
            .map(|&(k, w)| {
                let c = &self.components[k];
                let mut acc = 0.0;
                for ((&zi, &m), &s) in z.iter().zip(&c.mean).zip(&c.variances) {
                    let v = alpha * alpha * s + omega * omega;
                    let r = zi - alpha * m;
                    acc += r * r / v + v.ln() + LN_2PI;
                }
                w.ln() - 0.5 * acc
            })
            .collect()
    }

    /// Posterior responsibilities of the sub-mixture entries at diffusion
    /// level `(alpha, omega)`, in entry order.
    pub fn responsibilities(&self, sub: &SubMixture, z: &[f64], alpha: f64, omega: f64) -> Vec<f64> {
        let logs = self.log_joint(sub, z, alpha, omega);
        let lse = log_sum_exp(&logs);
        logs.into_iter().map(|l| (l - lse).exp()).collect()
    }

    /// Closed-form `log p_t(z)` of the (sub-)mixture.
    pub fn log_density(&self, sub: &SubMixture, z: &[f64], alpha: f64, omega: f64) -> f64 {
        log_sum_exp(&self.log_joint(sub, z, alpha, omega))
    }

    pub fn eps_predict_resolved(
        &self,
        sub: &SubMixture,
        z: &[f64],
        alpha: f64,
        omega: f64,
    ) -> Result<NoiseEstimate> {
        if z.len() != self.dim {
            return Err(SegaError::ShapeMismatch {
                expected: self.dim,
                found: z.len(),
            });
        }
        let resp = self.responsibilities(sub, z, alpha, omega);
        let mut eps = vec![0.0; self.dim];
        for (&(k, _), r) in sub.entries.iter().zip(resp) {
            let c = &self.components[k];
            for (i, e) in eps.iter_mut().enumerate() {
                let v = alpha * alpha * c.variances[i] + omega * omega;
                *e += r * (z[i] - alpha * c.mean[i]) / v;
            }
        }
        for e in eps.iter_mut() {
            *e *= omega;
        }
        NoiseEstimate::new(eps)
    }

    /// Exact ε-prediction of the diffused distribution selected by `query`
    /// (the full mixture when `None`).
    pub fn eps_predict(
        &self,
        query: Option<&ConceptQuery>,
        z: &[f64],
        alpha: f64,
        omega: f64,
    ) -> Result<NoiseEstimate> {
        validate_level(alpha, omega)?;
        let sub = self.resolve(query)?;
        self.eps_predict_resolved(&sub, z, alpha, omega)
    }

    /// Responsibilities of all components under the undiffused data
    /// distribution.
    pub fn data_responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let all = self.resolve(None).expect("full scene is never empty");
        self.responsibilities(&all, x, 1.0, 0.0)
    }

    /// Posterior probability (at t = 0) that `x` came from a component
    /// matching `query`. Composite queries blend their parts' probabilities.
    pub fn posterior_tag_probability(&self, x: &[f64], query: &ConceptQuery) -> f64 {
        let resp = self.data_responsibilities(x);
        let p: f64 = query
            .parts()
            .into_iter()
            .map(|(t, w)| {
                w * self
                    .components
                    .iter()
                    .zip(&resp)
                    .filter(|(c, _)| c.has_all(t))
                    .map(|(_, r)| r)
                    .sum::<f64>()
            })
            .sum();
        p.clamp(0.0, 1.0)
    }

    /// Index of the component with the largest data-space responsibility.
    pub fn argmax_component(&self, x: &[f64]) -> usize {
        let all = self.resolve(None).expect("full scene is never empty");
        let logs = self.log_joint(&all, x, 1.0, 0.0);
        logs.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &l)| if l > best.1 { (i, l) } else { best })
            .0
    }

    /// Whether the component at `index` matches any part of `query`.
    pub fn component_matches(&self, index: usize, query: &ConceptQuery) -> bool {
        let c = &self.components[index];
        query.parts().into_iter().any(|(t, _)| c.has_all(t))
    }

    /// Mean and full covariance (row-major) of the sub-mixture at t = 0.
    pub fn moments(&self, sub: &SubMixture) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let mut mean = vec![0.0; d];
        for &(k, w) in &sub.entries {
            for (m, cm) in mean.iter_mut().zip(&self.components[k].mean) {
                *m += w * cm;
            }
        }
        let mut cov = vec![0.0; d * d];
        for &(k, w) in &sub.entries {
            let c = &self.components[k];
            for i in 0..d {
                for j in 0..d {
                    let mut v = (c.mean[i] - mean[i]) * (c.mean[j] - mean[j]);
                    if i == j {
                        v += c.variances[i];
                    }
                    cov[i * d + j] += w * v;
                }
            }
        }
        (mean, cov)
    }
}

pub(crate) fn validate_level(alpha: f64, omega: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(SegaError::OutOfRange {
            name: "alpha",
            value: alpha,
            range: "(0, 1]",
        });
    }
    if !(0.0..1.0).contains(&omega) {
        return Err(SegaError::OutOfRange {
            name: "omega",
            value: omega,
            range: "[0, 1)",
        });
    }
    Ok(())
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Anything that can produce unconditioned and concept-conditioned noise
/// estimates for a latent at a given diffusion level.
pub trait NoisePredictor: Sync {
    fn dim(&self) -> usize;

    fn predict(
        &self,
        query: Option<&ConceptQuery>,
        z: &NoiseEstimate,
        alpha: f64,
        omega: f64,
    ) -> Result<NoiseEstimate>;
}

impl NoisePredictor for MixtureScene {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(
        &self,
        query: Option<&ConceptQuery>,
        z: &NoiseEstimate,
        alpha: f64,
        omega: f64,
    ) -> Result<NoiseEstimate> {
        self.eps_predict(query, z.as_slice(), alpha, omega)
    }
}

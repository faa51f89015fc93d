//! Measurements of edit effects on final samples.
//!
//! Concept presence is the posterior probability, under the undiffused
//! scene, that a sample came from a component matching a query. Means are
//! summed in sorted order so reports do not depend on sample order.

use log::warn;
use serde_json::{json, Value};

use crate::concept::{ConceptQuery, MixtureScene, TagSet};
use crate::config::{RunConfig, SamplerSettings, DEFAULT_NEGATIVE_THRESHOLD, DEFAULT_POSITIVE_THRESHOLD};
use crate::error::{Result, SegaError};
use crate::guidance::{Direction, EditDirective, GuidanceConfig};
use crate::sampler::sample_batch;

/// Mean and standard error of a set of per-sample values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// `s / √n` with the unbiased sample deviation; 0 when `n = 1`.
    pub standard_error: f64,
    pub count: usize,
}

fn sorted_sum(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Summarizes `values`, which must be non-empty.
pub fn summarize(values: &[f64]) -> Result<Summary> {
    let n = values.len();
    if n == 0 {
        return Err(SegaError::InvalidArgument("cannot summarize an empty sample".into()));
    }
    let mean = sorted_sum(values) / n as f64;
    let standard_error = if n < 2 {
        0.0
    } else {
        let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        (sorted_sum(&sq) / (n - 1) as f64 / n as f64).sqrt()
    };
    Ok(Summary {
        mean,
        standard_error,
        count: n,
    })
}

/// Sample mean and unbiased covariance (row-major) of `samples`.
pub fn sample_moments(samples: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = samples.len();
    let d = samples.first().map(Vec::len).ok_or(SegaError::EmptyVector)?;
    if samples.iter().any(|s| s.len() != d) {
        return Err(SegaError::InvalidArgument("samples have differing dimensions".into()));
    }
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    if n > 1 {
        for s in samples {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += (s[i] - mean[i]) * (s[j] - mean[j]);
                }
            }
        }
        cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
    }
    Ok((mean, cov))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftReport {
    pub target: String,
    pub posterior_before: Summary,
    pub posterior_after: Summary,
    /// Fraction of samples whose argmax component matches the target.
    pub target_fraction_before: f64,
    pub target_fraction_after: f64,
    /// Argmax fractions for every scene component, in scene order.
    pub component_fractions_before: Vec<f64>,
    pub component_fractions_after: Vec<f64>,
    /// Seeds of the edited chains when the report came from sampling.
    pub seeds: Vec<u64>,
}

impl ShiftReport {
    pub fn posterior_shift(&self) -> f64 {
        self.posterior_after.mean - self.posterior_before.mean
    }

    pub fn fraction_shift(&self) -> f64 {
        self.target_fraction_after - self.target_fraction_before
    }

    pub fn to_json(&self) -> Value {
        let summary = |s: &Summary| {
            json!({"mean": s.mean, "standard_error": s.standard_error, "count": s.count})
        };
        json!({
            "target": self.target,
            "posterior_before": summary(&self.posterior_before),
            "posterior_after": summary(&self.posterior_after),
            "posterior_shift": self.posterior_shift(),
            "target_fraction_before": self.target_fraction_before,
            "target_fraction_after": self.target_fraction_after,
            "fraction_shift": self.fraction_shift(),
            "component_fractions_before": self.component_fractions_before,
            "component_fractions_after": self.component_fractions_after,
            "seeds": self.seeds,
        })
    }
}

/// Argmax-component fractions over `samples`, in scene order.
pub fn component_fractions(scene: &MixtureScene, samples: &[Vec<f64>]) -> Vec<f64> {
    let mut counts = vec![0usize; scene.components().len()];
    for s in samples {
        counts[scene.argmax_component(s)] += 1;
    }
    counts
        .into_iter()
        .map(|c| c as f64 / samples.len().max(1) as f64)
        .collect()
}

fn target_fraction(scene: &MixtureScene, fractions: &[f64], target: &ConceptQuery) -> f64 {
    let matching: Vec<f64> = fractions
        .iter()
        .enumerate()
        .filter(|(i, _)| scene.component_matches(*i, target))
        .map(|(_, f)| *f)
        .collect();
    sorted_sum(&matching).min(1.0)
}

fn check_samples(scene: &MixtureScene, samples: &[Vec<f64>], which: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(SegaError::InvalidArgument(format!("{which} sample set is empty")));
    }
    for s in samples {
        if s.len() != scene.dim() {
            return Err(SegaError::ShapeMismatch {
                expected: scene.dim(),
                found: s.len(),
            });
        }
        if let Some(i) = s.iter().position(|x| !x.is_finite()) {
            return Err(SegaError::NonFinite { index: i });
        }
    }
    Ok(())
}

/// Mean posterior of `query` over `samples`.
pub fn posterior_summary(
    scene: &MixtureScene,
    samples: &[Vec<f64>],
    query: &ConceptQuery,
) -> Result<Summary> {
    let p: Vec<f64> = samples
        .iter()
        .map(|s| scene.posterior_tag_probability(s, query))
        .collect();
    summarize(&p)
}

pub fn concept_shift(
    samples_base: &[Vec<f64>],
    samples_edited: &[Vec<f64>],
    scene: &MixtureScene,
    target: &ConceptQuery,
) -> Result<ShiftReport> {
    check_samples(scene, samples_base, "base")?;
    check_samples(scene, samples_edited, "edited")?;
    scene.resolve(Some(target))?;
    let before = component_fractions(scene, samples_base);
    let after = component_fractions(scene, samples_edited);
    Ok(ShiftReport {
        target: target.label(),
        posterior_before: posterior_summary(scene, samples_base, target)?,
        posterior_after: posterior_summary(scene, samples_edited, target)?,
        target_fraction_before: target_fraction(scene, &before, target),
        target_fraction_after: target_fraction(scene, &after, target),
        component_fractions_before: before,
        component_fractions_after: after,
        seeds: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub edit_scale: f64,
    pub posterior: Summary,
    pub seeds: Vec<u64>,
    pub samples: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub edit_index: usize,
    pub target: String,
    pub points: Vec<SweepPoint>,
    /// Spearman correlation of `s_e` against mean posterior; `None` when a
    /// side has no spread.
    pub spearman: Option<f64>,
    pub warnings: Vec<String>,
}

impl SweepReport {
    pub fn to_json(&self) -> Value {
        let points: Vec<Value> = self
            .points
            .iter()
            .map(|p| {
                json!({
                    "s_e": p.edit_scale,
                    "mean_posterior": p.posterior.mean,
                    "standard_error": p.posterior.standard_error,
                    "count": p.posterior.count,
                })
            })
            .collect();
        json!({
            "edit_index": self.edit_index,
            "target": self.target,
            "points": points,
            "spearman": self.spearman,
            "warnings": self.warnings,
        })
    }

    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.posterior.mean).collect()
    }
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rank correlation; `None` for mismatched lengths, fewer than
/// two points, or a constant side.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Sweeps `s_e` of one edit, measuring the posterior of that edit's query.
pub fn strength_sweep(
    config: &RunConfig,
    edit_index: usize,
    s_e_values: &[f64],
    seeds: &[u64],
) -> Result<SweepReport> {
    strength_sweep_with_target(config, edit_index, s_e_values, seeds, None)
}

pub fn strength_sweep_with_target(
    config: &RunConfig,
    edit_index: usize,
    s_e_values: &[f64],
    seeds: &[u64],
    target: Option<&ConceptQuery>,
) -> Result<SweepReport> {
    let edit = config.edits.get(edit_index).ok_or_else(|| {
        SegaError::InvalidArgument(format!(
            "edit index {edit_index} out of range ({} edits)",
            config.edits.len()
        ))
    })?;
    if s_e_values.len() < 3 {
        return Err(SegaError::InvalidArgument(format!(
            "a sweep needs at least 3 s_e values, got {}",
            s_e_values.len()
        )));
    }
    if s_e_values.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
        return Err(SegaError::InvalidArgument(
            "s_e values must be strictly increasing".into(),
        ));
    }
    if seeds.is_empty() {
        return Err(SegaError::InvalidArgument("a sweep needs at least one seed".into()));
    }
    let target = target.unwrap_or(&edit.query).clone();
    config.scene.resolve(Some(&target))?;

    let mut warnings = Vec::new();
    if seeds.len() == 1 {
        let msg = "only one seed per point: standard errors are reported as 0".to_string();
        warn!("{msg}");
        warnings.push(msg);
    }

    let schedule = config.sampler.schedule();
    let mut points = Vec::with_capacity(s_e_values.len());
    for &s_e in s_e_values {
        let mut edits = config.edits.clone();
        edits[edit_index].edit_scale = s_e;
        let runs = sample_batch(
            &config.scene,
            &config.prompt,
            &edits,
            &config.guidance,
            &schedule,
            seeds,
        )?;
        let samples: Vec<Vec<f64>> = runs.into_iter().map(|r| r.sample).collect();
        points.push(SweepPoint {
            edit_scale: s_e,
            posterior: posterior_summary(&config.scene, &samples, &target)?,
            seeds: seeds.to_vec(),
            samples,
        });
    }
    let means: Vec<f64> = points.iter().map(|p| p.posterior.mean).collect();
    Ok(SweepReport {
        edit_index,
        target: target.label(),
        spearman: spearman(s_e_values, &means),
        points,
        warnings,
    })
}

/// Shared parameters of the two directives built by
/// [`arithmetic_consistency`]. `None` thresholds take the per-direction
/// defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ArithmeticParams {
    pub edit_scale: f64,
    pub remove_threshold: Option<f64>,
    pub add_threshold: Option<f64>,
    pub warmup: usize,
}

impl Default for ArithmeticParams {
    fn default() -> Self {
        Self {
            edit_scale: crate::config::DEFAULT_EDIT_SCALE,
            remove_threshold: None,
            add_threshold: None,
            warmup: crate::config::DEFAULT_WARMUP,
        }
    }
}

fn atomic_tags<'a>(q: &'a ConceptQuery, what: &str) -> Result<&'a TagSet> {
    match q {
        ConceptQuery::Atomic(t) => Ok(t),
        ConceptQuery::Composite(_) => Err(SegaError::InvalidQuery(format!(
            "{what} must be an atomic tag query"
        ))),
    }
}

/// `(base − remove) ∪ add` on tag sets.
pub fn arithmetic_target(
    base: &ConceptQuery,
    remove: &ConceptQuery,
    add: &ConceptQuery,
) -> Result<ConceptQuery> {
    let base = atomic_tags(base, "base query")?;
    let remove = atomic_tags(remove, "removed query")?;
    let add = atomic_tags(add, "added query")?;
    Ok(ConceptQuery::Atomic(
        base.difference(remove).chain(add).cloned().collect(),
    ))
}

/// Samples `base` with and without a (negative `remove`, positive `add`)
/// directive pair, both at weight 0.5, and reports the shift towards the
/// arithmetic target.
pub fn arithmetic_consistency(
    scene: &MixtureScene,
    base: &ConceptQuery,
    remove: &ConceptQuery,
    add: &ConceptQuery,
    params: &ArithmeticParams,
    guidance: &GuidanceConfig,
    sampler: &SamplerSettings,
) -> Result<ShiftReport> {
    let target = arithmetic_target(base, remove, add)?;
    scene.resolve(Some(&target))?;
    let directives = vec![
        EditDirective::new(
            remove.clone(),
            Direction::Negative,
            params.edit_scale,
            params.remove_threshold.unwrap_or(DEFAULT_NEGATIVE_THRESHOLD),
            params.warmup,
            0.5,
        )?,
        EditDirective::new(
            add.clone(),
            Direction::Positive,
            params.edit_scale,
            params.add_threshold.unwrap_or(DEFAULT_POSITIVE_THRESHOLD),
            params.warmup,
            0.5,
        )?,
    ];
    let schedule = sampler.schedule();
    let seeds = sampler.seeds();
    let samples = |d: &[EditDirective]| -> Result<Vec<Vec<f64>>> {
        Ok(sample_batch(scene, base, d, guidance, &schedule, &seeds)?
            .into_iter()
            .map(|r| r.sample)
            .collect())
    };
    let before = samples(&[])?;
    let after = samples(&directives)?;
    let mut report = concept_shift(&before, &after, scene, &target)?;
    report.seeds = seeds;
    Ok(report)
}

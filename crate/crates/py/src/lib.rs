//! Python bindings for `sega-core`.
//!
//! ```python
//! import sega
//! scene = sega.Scene.royal_court()
//! edits = [sega.EditDirective(["male"], "negative"), sega.EditDirective(["female"])]
//! xs = sega.sample_batch(scene, ["royal", "male"], edits, sega.GuidanceConfig(), seeds=range(10))
//! ```

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sega_core::config::{self, Strictness, DEFAULT_NEGATIVE_THRESHOLD, DEFAULT_POSITIVE_THRESHOLD};
use sega_core::metrics;
use sega_core::{
    concept::tags, Component, ConceptQuery, Direction, MixtureScene, MuMode, NoiseEstimate,
    ScheduleKind,
};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn estimate(v: Vec<f64>) -> PyResult<NoiseEstimate> {
    NoiseEstimate::new(v).map_err(value_error)
}

fn query(t: Option<Vec<String>>) -> Option<ConceptQuery> {
    t.map(|t| ConceptQuery::Atomic(tags(t)))
}

/// `(mean, variances, weight, tags)`.
type ComponentSpec = (Vec<f64>, Vec<f64>, f64, Vec<String>);

/// A tagged diagonal Gaussian mixture with exact noise predictions.
#[pyclass(name = "Scene", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScene {
    inner: MixtureScene,
}

#[pymethods]
impl PyScene {
    /// `components` is a list of `(mean, variances, weight, tags)` tuples.
    #[new]
    fn new(components: Vec<ComponentSpec>) -> PyResult<Self> {
        let comps = components
            .into_iter()
            .map(|(m, v, w, t)| Component::new(m, v, w, tags(t)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(value_error)?;
        Ok(Self {
            inner: MixtureScene::new(comps).map_err(value_error)?,
        })
    }

    #[staticmethod]
    fn royal_court() -> Self {
        Self {
            inner: MixtureScene::royal_court(),
        }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Normalized component weights, in scene order.
    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.components().iter().map(|c| c.weight).collect()
    }

    #[pyo3(signature = (z, alpha, omega, tags=None))]
    fn eps_predict(&self, z: Vec<f64>, alpha: f64, omega: f64, tags: Option<Vec<String>>) -> PyResult<Vec<f64>> {
        self.inner
            .eps_predict(query(tags).as_ref(), &z, alpha, omega)
            .map(NoiseEstimate::into_vec)
            .map_err(value_error)
    }

    fn posterior(&self, x: Vec<f64>, tags: Vec<String>) -> PyResult<f64> {
        if x.len() != self.inner.dim() {
            return Err(value_error(format!("expected {} coordinates", self.inner.dim())));
        }
        Ok(self.inner.posterior_tag_probability(&x, &ConceptQuery::Atomic(self::tags(tags))))
    }

    fn argmax_component(&self, x: Vec<f64>) -> PyResult<usize> {
        if x.len() != self.inner.dim() {
            return Err(value_error(format!("expected {} coordinates", self.inner.dim())));
        }
        Ok(self.inner.argmax_component(&x))
    }

    fn __repr__(&self) -> String {
        format!("Scene(dim={}, components={})", self.inner.dim(), self.inner.components().len())
    }
}

#[pyclass(name = "EditDirective", frozen, from_py_object)]
#[derive(Clone)]
struct PyEditDirective {
    inner: sega_core::EditDirective,
}

#[pymethods]
impl PyEditDirective {
    /// `lam` defaults to +0.2 for positive and -0.2 for negative edits.
    #[new]
    #[pyo3(signature = (tags, direction="positive", s_e=5.0, lam=None, delta=5, g=1.0))]
    fn new(tags: Vec<String>, direction: &str, s_e: f64, lam: Option<f64>, delta: usize, g: f64) -> PyResult<Self> {
        let direction: Direction = direction.parse().map_err(value_error)?;
        let lam = lam.unwrap_or(match direction {
            Direction::Positive => DEFAULT_POSITIVE_THRESHOLD,
            Direction::Negative => DEFAULT_NEGATIVE_THRESHOLD,
        });
        let inner = sega_core::EditDirective::new(
            ConceptQuery::Atomic(self::tags(tags)),
            direction,
            s_e,
            lam,
            delta,
            g,
        )
        .map_err(value_error)?;
        Ok(Self { inner })
    }

    fn __repr__(&self) -> String {
        let d = &self.inner;
        format!(
            "EditDirective({:?}, {:?}, s_e={}, lam={}, delta={}, g={})",
            d.query.label(),
            d.direction.as_str(),
            d.edit_scale,
            d.threshold,
            d.warmup,
            d.weight
        )
    }
}

#[pyclass(name = "GuidanceConfig", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGuidanceConfig {
    inner: sega_core::GuidanceConfig,
}

#[pymethods]
impl PyGuidanceConfig {
    #[new]
    #[pyo3(signature = (s_g=7.5, s_m=0.0, beta_m=0.4, mu_mode="paper", s_max=10.0))]
    fn new(s_g: f64, s_m: f64, beta_m: f64, mu_mode: &str, s_max: f64) -> PyResult<Self> {
        let mu_mode = match mu_mode {
            "paper" => MuMode::Paper,
            "clamped" => MuMode::Clamped { s_max },
            other => return Err(value_error(format!("unknown mu_mode {other:?}"))),
        };
        let inner = sega_core::GuidanceConfig {
            guidance_scale: s_g,
            momentum_scale: s_m,
            momentum_beta: beta_m,
            mu_mode,
        };
        inner.validate().map_err(value_error)?;
        Ok(Self { inner })
    }
}

/// `u + s_g (p - u)`.
#[pyfunction]
fn cfg_combine(u: Vec<f64>, p: Vec<f64>, s_g: f64) -> PyResult<Vec<f64>> {
    sega_core::cfg_combine(&estimate(u)?, &estimate(p)?, s_g)
        .map(NoiseEstimate::into_vec)
        .map_err(value_error)
}

/// One guidance step. Returns `(prediction, next_momentum)`.
#[pyfunction]
#[pyo3(signature = (u, p, edits, directives, config, momentum, step))]
fn sega_step(
    u: Vec<f64>,
    p: Vec<f64>,
    edits: Vec<Vec<f64>>,
    directives: Vec<PyEditDirective>,
    config: &PyGuidanceConfig,
    momentum: Vec<f64>,
    step: usize,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let edits = edits.into_iter().map(estimate).collect::<PyResult<Vec<_>>>()?;
    let directives: Vec<_> = directives.into_iter().map(|d| d.inner).collect();
    let state = sega_core::GuidanceState {
        momentum: estimate(momentum)?,
        step,
    };
    let out = sega_core::sega_step(&estimate(u)?, &estimate(p)?, &edits, &directives, &config.inner, &state)
        .map_err(value_error)?;
    Ok((out.prediction.into_vec(), out.state.momentum.into_vec()))
}

/// Final samples for each seed.
#[pyfunction]
#[pyo3(signature = (scene, prompt, directives, config, seeds, steps=50, schedule="cosine"))]
#[allow(clippy::too_many_arguments)]
fn sample_batch(
    py: Python<'_>,
    scene: &PyScene,
    prompt: Vec<String>,
    directives: Vec<PyEditDirective>,
    config: &PyGuidanceConfig,
    seeds: Vec<u64>,
    steps: usize,
    schedule: &str,
) -> PyResult<Vec<Vec<f64>>> {
    let kind: ScheduleKind = schedule.parse().map_err(value_error)?;
    let schedule = sega_core::make_schedule(steps, kind).map_err(value_error)?;
    let directives: Vec<_> = directives.into_iter().map(|d| d.inner).collect();
    let prompt = ConceptQuery::Atomic(tags(prompt));
    let runs = py
        .detach(|| sega_core::sample_batch(&scene.inner, &prompt, &directives, &config.inner, &schedule, &seeds))
        .map_err(value_error)?;
    Ok(runs.into_iter().map(|r| r.sample).collect())
}

/// `(alphas, omegas)` for steps `t = 1..=T`.
#[pyfunction]
#[pyo3(signature = (steps, kind="cosine"))]
fn schedule(steps: usize, kind: &str) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let kind: ScheduleKind = kind.parse().map_err(value_error)?;
    let s = sega_core::make_schedule(steps, kind).map_err(value_error)?;
    Ok(((1..=steps).map(|t| s.alpha(t)).collect(), (1..=steps).map(|t| s.omega(t)).collect()))
}

fn shift_dict<'py>(py: Python<'py>, r: &metrics::ShiftReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("target", &r.target)?;
    d.set_item("posterior_before", r.posterior_before.mean)?;
    d.set_item("posterior_after", r.posterior_after.mean)?;
    d.set_item("target_fraction_before", r.target_fraction_before)?;
    d.set_item("target_fraction_after", r.target_fraction_after)?;
    d.set_item("component_fractions_before", r.component_fractions_before.clone())?;
    d.set_item("component_fractions_after", r.component_fractions_after.clone())?;
    Ok(d)
}

#[pyfunction]
fn concept_shift<'py>(
    py: Python<'py>,
    base: Vec<Vec<f64>>,
    edited: Vec<Vec<f64>>,
    scene: &PyScene,
    target: Vec<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let r = metrics::concept_shift(&base, &edited, &scene.inner, &ConceptQuery::Atomic(tags(target)))
        .map_err(value_error)?;
    shift_dict(py, &r)
}

#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> Option<f64> {
    metrics::spearman(&x, &y)
}

/// A validated run configuration.
#[pyclass(name = "RunConfig", frozen)]
struct PyRunConfig {
    inner: config::RunConfig,
    warnings: Vec<String>,
}

#[pymethods]
impl PyRunConfig {
    #[staticmethod]
    #[pyo3(signature = (text, overrides=None, lax=false))]
    fn parse(text: &str, overrides: Option<Vec<String>>, lax: bool) -> PyResult<Self> {
        let strictness = if lax { Strictness::Lax } else { Strictness::Strict };
        let (inner, warnings) = config::parse_with_overrides(text, &overrides.unwrap_or_default(), strictness)
            .map_err(value_error)?;
        Ok(Self { inner, warnings })
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.warnings.clone()
    }

    #[getter]
    fn scene(&self) -> PyScene {
        PyScene {
            inner: self.inner.scene.clone(),
        }
    }

    fn normalized(&self) -> String {
        config::emit_normalized(&self.inner)
    }

    /// Samples every configured seed.
    fn sample(&self, py: Python<'_>) -> PyResult<Vec<Vec<f64>>> {
        let c = &self.inner;
        let runs = py
            .detach(|| {
                sega_core::sample_batch(
                    &c.scene,
                    &c.prompt,
                    &c.edits,
                    &c.guidance,
                    &c.sampler.schedule(),
                    &c.sampler.seeds(),
                )
            })
            .map_err(value_error)?;
        Ok(runs.into_iter().map(|r| r.sample).collect())
    }

    /// `{"points": [(s_e, mean, se), ...], "spearman": float | None}`.
    fn sweep<'py>(
        &self,
        py: Python<'py>,
        edit_index: usize,
        s_e_values: Vec<f64>,
        seeds: Vec<u64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let r = py
            .detach(|| metrics::strength_sweep(&self.inner, edit_index, &s_e_values, &seeds))
            .map_err(value_error)?;
        let d = PyDict::new(py);
        let points: Vec<(f64, f64, f64)> = r
            .points
            .iter()
            .map(|p| (p.edit_scale, p.posterior.mean, p.posterior.standard_error))
            .collect();
        d.set_item("target", &r.target)?;
        d.set_item("points", points)?;
        d.set_item("spearman", r.spearman)?;
        Ok(d)
    }
}

#[pymodule]
fn sega(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScene>()?;
    m.add_class::<PyEditDirective>()?;
    m.add_class::<PyGuidanceConfig>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_function(wrap_pyfunction!(cfg_combine, m)?)?;
    m.add_function(wrap_pyfunction!(sega_step, m)?)?;
    m.add_function(wrap_pyfunction!(sample_batch, m)?)?;
    m.add_function(wrap_pyfunction!(schedule, m)?)?;
    m.add_function(wrap_pyfunction!(concept_shift, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    Ok(())
}

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde_json::{json, Value};

use sega_core::config::{emit_normalized, parse_with_overrides, RunConfig, Strictness};
use sega_core::metrics::{component_fractions, posterior_summary, sample_moments, strength_sweep_with_target};
use sega_core::{sample_batch, ConceptQuery, SegaError};

use crate::output::{samples_csv, scatter_svg, sweep_svg, write_atomic, write_json};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::runtime(format!("{e:#}"))
    }
}

/// What a successful invocation produced.
#[derive(Debug, Default)]
pub struct Invocation {
    pub artifacts: Vec<PathBuf>,
    pub steps: usize,
    pub chains: usize,
    pub warnings: Vec<String>,
    pub stdout: Option<String>,
}

impl Invocation {
    pub fn summary(&self, wall_time: f64) -> Value {
        json!({
            "exit_code": EXIT_OK,
            "artifacts": self.artifacts,
            "steps": self.steps,
            "chains": self.chains,
            "wall_time_s": wall_time,
            "warnings": self.warnings,
        })
    }
}

pub struct Common {
    pub config_path: PathBuf,
    pub overrides: Vec<String>,
    pub out: Option<PathBuf>,
    pub svg: bool,
    pub lax: bool,
}

fn load(common: &Common) -> Result<(RunConfig, Vec<String>), Failure> {
    let text = std::fs::read_to_string(&common.config_path).map_err(|e| {
        Failure::config(format!("cannot read {}: {e}", common.config_path.display()))
    })?;
    let strictness = if common.lax { Strictness::Lax } else { Strictness::Strict };
    let (config, warnings) = parse_with_overrides(&text, &common.overrides, strictness)
        .map_err(|e| Failure::config(format!("invalid config: {e}")))?;
    for w in &warnings {
        warn!("{w}");
    }
    Ok((config, warnings))
}

fn out_dir(common: &Common, config: &RunConfig) -> PathBuf {
    common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.outputs.dir))
}

fn runtime(e: SegaError) -> Failure {
    Failure::runtime(format!("sampling failed: {e}"))
}

/// Prompt first, then each distinct edit query.
fn tracked_queries(config: &RunConfig) -> Vec<ConceptQuery> {
    let mut out = vec![config.prompt.clone()];
    for e in &config.edits {
        if !out.iter().any(|q| q.label() == e.query.label()) {
            out.push(e.query.clone());
        }
    }
    out
}

pub fn validate(common: &Common) -> Result<Invocation, Failure> {
    let (config, warnings) = load(common)?;
    Ok(Invocation {
        warnings,
        stdout: Some(emit_normalized(&config)),
        ..Default::default()
    })
}

pub fn sample(common: &Common) -> Result<Invocation, Failure> {
    let (config, warnings) = load(common)?;
    let dir = out_dir(common, &config);
    let seeds = config.sampler.seeds();
    let schedule = config.sampler.schedule();
    info!(
        "sampling {} chains of {} steps into {}",
        seeds.len(),
        schedule.steps(),
        dir.display()
    );
    let runs = sample_batch(
        &config.scene,
        &config.prompt,
        &config.edits,
        &config.guidance,
        &schedule,
        &seeds,
    )
    .map_err(runtime)?;
    let samples: Vec<Vec<f64>> = runs.into_iter().map(|r| r.sample).collect();

    let mut artifacts = Vec::new();
    let normalized = dir.join("config.normalized.json");
    write_atomic(&normalized, emit_normalized(&config).as_bytes())?;
    artifacts.push(normalized);

    let tracked = tracked_queries(&config);
    if config.outputs.csv {
        let path = dir.join("samples.csv");
        write_atomic(&path, samples_csv(&config.scene, &seeds, &samples, &tracked).as_bytes())?;
        artifacts.push(path);
    }
    if config.outputs.metrics {
        let path = dir.join("metrics.json");
        artifacts.push(write_json(&path, &sample_metrics(&config, &seeds, &samples, &tracked)?)?);
    }
    if config.outputs.svg || common.svg {
        let path = dir.join("samples.svg");
        let title = format!("{} (n = {})", config.prompt.label(), samples.len());
        write_atomic(&path, scatter_svg(&config.scene, &samples, &title).as_bytes())?;
        artifacts.push(path);
    }
    Ok(Invocation {
        artifacts,
        steps: schedule.steps(),
        chains: seeds.len(),
        warnings,
        stdout: None,
    })
}

fn sample_metrics(
    config: &RunConfig,
    seeds: &[u64],
    samples: &[Vec<f64>],
    tracked: &[ConceptQuery],
) -> Result<Value, Failure> {
    let scene = &config.scene;
    let (mean, cov) = sample_moments(samples).map_err(runtime)?;
    let (prompt_mean, prompt_cov) = scene.moments(&scene.resolve(Some(&config.prompt)).map_err(runtime)?);
    let mut posteriors = serde_json::Map::new();
    for q in tracked {
        let s = posterior_summary(scene, samples, q).map_err(runtime)?;
        posteriors.insert(
            q.label(),
            json!({"mean": s.mean, "standard_error": s.standard_error}),
        );
    }
    let fractions: Vec<Value> = scene
        .components()
        .iter()
        .zip(component_fractions(scene, samples))
        .map(|(c, f)| json!({"tags": c.tags, "fraction": f}))
        .collect();
    Ok(json!({
        "num_samples": samples.len(),
        "first_seed": seeds.first(),
        "sample_mean": mean,
        "sample_covariance": cov,
        "prompt_mean": prompt_mean,
        "prompt_covariance": prompt_cov,
        "posteriors": posteriors,
        "argmax_fractions": fractions,
    }))
}

pub struct SweepArgs {
    pub edit_index: usize,
    pub s_e: Vec<f64>,
    pub seeds: Option<usize>,
    pub target: Option<Vec<String>>,
}

pub fn sweep(common: &Common, args: &SweepArgs) -> Result<Invocation, Failure> {
    let (config, mut warnings) = load(common)?;
    if args.edit_index >= config.edits.len() {
        return Err(Failure::config(format!(
            "--edit-index {} out of range: the config has {} edits",
            args.edit_index,
            config.edits.len()
        )));
    }
    if args.s_e.len() < 3 {
        return Err(Failure::config(format!(
            "a sweep needs at least 3 s_e values, got {}",
            args.s_e.len()
        )));
    }
    if args.s_e.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
        return Err(Failure::config("s_e values must be strictly increasing"));
    }
    if let Some(v) = args.s_e.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Failure::config(format!(
            "value {v} is outside the permitted range s_e ≥ 0"
        )));
    }
    let n = args.seeds.unwrap_or(config.sampler.num_samples);
    if n == 0 {
        return Err(Failure::config("--seeds must be at least 1"));
    }
    let target = match &args.target {
        Some(t) => {
            let q = ConceptQuery::atomic(t.iter().cloned());
            config
                .scene
                .resolve(Some(&q))
                .map_err(|e| Failure::config(format!("--target: {e}")))?;
            Some(q)
        }
        None => None,
    };
    let seeds = sega_core::sampler::fan_out_seeds(config.sampler.seed, n);
    let dir = out_dir(common, &config);
    info!(
        "sweeping edit {} over {} values with {} seeds each",
        args.edit_index,
        args.s_e.len(),
        n
    );
    let report = strength_sweep_with_target(&config, args.edit_index, &args.s_e, &seeds, target.as_ref())
        .map_err(runtime)?;
    warnings.extend(report.warnings.iter().cloned());

    let mut artifacts = Vec::new();
    let normalized = dir.join("config.normalized.json");
    write_atomic(&normalized, emit_normalized(&config).as_bytes())?;
    artifacts.push(normalized);
    artifacts.push(write_json(&dir.join("sweep.json"), &report.to_json())?);
    let target_query = target.unwrap_or_else(|| config.edits[args.edit_index].query.clone());
    for (i, p) in report.points.iter().enumerate() {
        let path = dir.join(format!("sweep_point_{i}.csv"));
        write_atomic(
            &path,
            samples_csv(&config.scene, &p.seeds, &p.samples, std::slice::from_ref(&target_query)).as_bytes(),
        )?;
        artifacts.push(path);
    }
    if config.outputs.svg || common.svg {
        let pts: Vec<(f64, f64, f64)> = report
            .points
            .iter()
            .map(|p| (p.edit_scale, p.posterior.mean, p.posterior.standard_error))
            .collect();
        let path = dir.join("sweep.svg");
        write_atomic(&path, sweep_svg(&pts, &format!("posterior of {}", report.target)).as_bytes())?;
        artifacts.push(path);
    }
    Ok(Invocation {
        artifacts,
        steps: config.sampler.steps,
        chains: n * args.s_e.len(),
        warnings,
        stdout: None,
    })
}

/// Resolves the thread count from `SEGA_THREADS`, if set.
pub fn configure_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("SEGA_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Failure::config(format!("SEGA_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::runtime(format!("thread pool: {e}")))?;
    }
    Ok(())
}

pub fn run_timed(
    f: impl FnOnce() -> Result<Invocation, Failure>,
) -> (Result<Invocation, Failure>, f64) {
    let start = Instant::now();
    let r = f();
    (r, start.elapsed().as_secs_f64())
}

pub fn display(path: &Path) -> String {
    path.display().to_string()
}

//! JSON run configuration.
//!
//! A document has the top-level keys `schema_version`, `scene`, `prompt`,
//! `edits`, `guidance`, `sampler` and `outputs`; only `scene` and `prompt`
//! are required. Parsing applies defaults, validates every range, and
//! normalizes scene and edit weights. [`emit_normalized`] writes the fully
//! explicit form with sorted keys, and parsing that output reproduces the
//! same [`RunConfig`].
//!
//! Errors carry the dotted key path of the offending value
//! (`edits[0].lambda`). Unknown keys are rejected in [`Strictness::Strict`]
//! mode and reported as warnings in [`Strictness::Lax`] mode.

use std::fmt;

use serde_json::{json, Map, Value};

use crate::concept::{normalize_in_place, Component, ConceptQuery, MixtureScene, TagSet};
use crate::guidance::{Direction, EditDirective, GuidanceConfig, MuMode, EDIT_SCALE_WARN};
use crate::sampler::fan_out_seeds;
use crate::schedule::{make_schedule, Schedule, ScheduleKind, MAX_STEPS};

pub const SCHEMA_VERSION: u64 = 1;

pub const DEFAULT_EDIT_SCALE: f64 = 5.0;
pub const DEFAULT_WARMUP: usize = 5;
pub const DEFAULT_POSITIVE_THRESHOLD: f64 = 0.2;
pub const DEFAULT_NEGATIVE_THRESHOLD: f64 = -0.2;
pub const DEFAULT_S_MAX: f64 = 10.0;
pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_NUM_SAMPLES: usize = 100;
pub const WARMUP_WARN: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(path: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        path: path.to_string(),
        message: message.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    #[default]
    Strict,
    Lax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSettings {
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub seed: u64,
    pub num_samples: usize,
}

impl SamplerSettings {
    /// `seed, seed + 1, …` for every requested sample.
    pub fn seeds(&self) -> Vec<u64> {
        fan_out_seeds(self.seed, self.num_samples)
    }

    pub fn schedule(&self) -> Schedule {
        make_schedule(self.steps, self.schedule).expect("validated at parse time")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSettings {
    pub dir: String,
    pub csv: bool,
    pub metrics: bool,
    pub svg: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scene: MixtureScene,
    pub prompt: ConceptQuery,
    pub edits: Vec<EditDirective>,
    pub guidance: GuidanceConfig,
    /// Cap used by the clamped scale mode; kept even in paper mode so the
    /// normalized echo is complete.
    pub s_max: f64,
    pub sampler: SamplerSettings,
    pub outputs: OutputSettings,
}

/// Parses with strict unknown-key handling.
pub fn parse(document: &str) -> Result<RunConfig, ConfigError> {
    parse_with(document, Strictness::Strict).map(|(c, _)| c)
}

/// Parses `document`, returning the config together with any warnings.
pub fn parse_with(
    document: &str,
    strictness: Strictness,
) -> Result<(RunConfig, Vec<String>), ConfigError> {
    parse_with_overrides(document, &[], strictness)
}

/// Parses `document` after applying `key.path=value` overrides, so
/// overridden values go through the same validation.
pub fn parse_with_overrides(
    document: &str,
    overrides: &[String],
    strictness: Strictness,
) -> Result<(RunConfig, Vec<String>), ConfigError> {
    if document.trim().is_empty() {
        return err("", "empty document: expected a JSON object");
    }
    let mut value: Value = serde_json::from_str(document)
        .map_err(|e| ConfigError {
            path: String::new(),
            message: format!("malformed JSON: {e}"),
        })?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    from_value(&value, strictness)
}

/// One segment of an override path.
enum Segment {
    Key(String),
    Index(usize),
}

fn split_path(path: &str) -> Result<Vec<Segment>, ConfigError> {
    let mut out = Vec::new();
    for part in path.split('.') {
        if part.is_empty() {
            return err(path, "empty segment in override path");
        }
        // accept both `edits.0.s_e` and `edits[0].s_e`
        let (key, rest) = match part.find('[') {
            Some(i) => (&part[..i], &part[i..]),
            None => (part, ""),
        };
        if !key.is_empty() {
            match key.parse::<usize>() {
                Ok(i) => out.push(Segment::Index(i)),
                Err(_) => out.push(Segment::Key(key.to_string())),
            }
        }
        let mut rest = rest;
        while let Some(stripped) = rest.strip_prefix('[') {
            let close = stripped
                .find(']')
                .ok_or_else(|| ConfigError {
                    path: path.to_string(),
                    message: "unbalanced '[' in override path".into(),
                })?;
            let idx = stripped[..close].parse::<usize>().map_err(|_| ConfigError {
                path: path.to_string(),
                message: "array index must be a non-negative integer".into(),
            })?;
            out.push(Segment::Index(idx));
            rest = &stripped[close + 1..];
        }
        if !rest.is_empty() {
            return err(path, "malformed override path");
        }
    }
    Ok(out)
}

/// Applies one `dotted.path=value` override. The value is read as JSON when
/// possible and as a plain string otherwise.
pub fn apply_override(document: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| ConfigError {
        path: assignment.to_string(),
        message: "override must have the form key.path=value".into(),
    })?;
    let path = path.trim();
    let new_value: Value =
        serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let segments = split_path(path)?;
    let Some((last, parents)) = segments.split_last() else {
        return err(path, "empty override path");
    };
    let mut cursor = document;
    for seg in parents {
        cursor = match seg {
            Segment::Key(k) => {
                let obj = cursor.as_object_mut().ok_or_else(|| ConfigError {
                    path: path.to_string(),
                    message: format!("cannot descend into {k:?}: parent is not an object"),
                })?;
                obj.entry(k.clone()).or_insert_with(|| Value::Object(Map::new()))
            }
            Segment::Index(i) => {
                let arr = cursor.as_array_mut().ok_or_else(|| ConfigError {
                    path: path.to_string(),
                    message: format!("cannot index [{i}]: parent is not an array"),
                })?;
                let len = arr.len();
                arr.get_mut(*i).ok_or_else(|| ConfigError {
                    path: path.to_string(),
                    message: format!("index {i} out of bounds (length {len})"),
                })?
            }
        };
    }
    match last {
        Segment::Key(k) => {
            let obj = cursor.as_object_mut().ok_or_else(|| ConfigError {
                path: path.to_string(),
                message: "parent is not an object".into(),
            })?;
            obj.insert(k.clone(), new_value);
        }
        Segment::Index(i) => {
            let arr = cursor.as_array_mut().ok_or_else(|| ConfigError {
                path: path.to_string(),
                message: "parent is not an array".into(),
            })?;
            let len = arr.len();
            let slot = arr.get_mut(*i).ok_or_else(|| ConfigError {
                path: path.to_string(),
                message: format!("index {i} out of bounds (length {len})"),
            })?;
            *slot = new_value;
        }
    }
    Ok(())
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

struct Reader {
    strictness: Strictness,
    warnings: Vec<String>,
}

impl Reader {
    fn object<'a>(
        &mut self,
        value: &'a Value,
        path: &str,
        allowed: &[&str],
    ) -> Result<&'a Map<String, Value>, ConfigError> {
        let map = value.as_object().ok_or_else(|| ConfigError {
            path: path.to_string(),
            message: "expected an object".into(),
        })?;
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                let p = join(path, key);
                match self.strictness {
                    Strictness::Strict => {
                        return err(&p, format!("unknown key (allowed: {})", allowed.join(", ")))
                    }
                    Strictness::Lax => self.warnings.push(format!("{p}: unknown key ignored")),
                }
            }
        }
        Ok(map)
    }
}

fn number(map: &Map<String, Value>, path: &str, key: &str) -> Result<Option<f64>, ConfigError> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_f64()
            .filter(|x| x.is_finite())
            .map(Some)
            .ok_or_else(|| ConfigError {
                path: join(path, key),
                message: "expected a finite number".into(),
            }),
    }
}

fn unsigned(map: &Map<String, Value>, path: &str, key: &str) -> Result<Option<u64>, ConfigError> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v.as_u64().map(Some).ok_or_else(|| ConfigError {
            path: join(path, key),
            message: "expected a non-negative integer".into(),
        }),
    }
}

fn boolean(map: &Map<String, Value>, path: &str, key: &str) -> Result<Option<bool>, ConfigError> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v.as_bool().map(Some).ok_or_else(|| ConfigError {
            path: join(path, key),
            message: "expected true or false".into(),
        }),
    }
}

fn string<'a>(
    map: &'a Map<String, Value>,
    path: &str,
    key: &str,
) -> Result<Option<&'a str>, ConfigError> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v.as_str().map(Some).ok_or_else(|| ConfigError {
            path: join(path, key),
            message: "expected a string".into(),
        }),
    }
}

fn number_array(value: &Value, path: &str) -> Result<Vec<f64>, ConfigError> {
    let arr = value.as_array().ok_or_else(|| ConfigError {
        path: path.to_string(),
        message: "expected an array of numbers".into(),
    })?;
    arr.iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| ConfigError {
                path: format!("{path}[{i}]"),
                message: "expected a finite number".into(),
            })
        })
        .collect()
}

fn tag_array(value: &Value, path: &str) -> Result<TagSet, ConfigError> {
    let arr = value.as_array().ok_or_else(|| ConfigError {
        path: path.to_string(),
        message: "expected an array of strings".into(),
    })?;
    arr.iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_str().map(str::to_string).ok_or_else(|| ConfigError {
                path: format!("{path}[{i}]"),
                message: "expected a string".into(),
            })
        })
        .collect()
}

fn in_range(path: &str, value: f64, ok: bool, range: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        err(path, format!("value {value} is outside the permitted range {range}"))
    }
}

fn read_scene(r: &mut Reader, value: &Value) -> Result<MixtureScene, ConfigError> {
    let path = "scene";
    let map = r.object(value, path, &["dimension", "components"])?;
    let dim = unsigned(map, path, "dimension")?;
    let comps = map
        .get("components")
        .ok_or_else(|| ConfigError {
            path: join(path, "components"),
            message: "missing required key".into(),
        })?
        .as_array()
        .ok_or_else(|| ConfigError {
            path: join(path, "components"),
            message: "expected an array".into(),
        })?;
    if comps.is_empty() {
        return err(&join(path, "components"), "scene needs at least one component");
    }
    let expected_dim = match dim {
        Some(0) => return err(&join(path, "dimension"), "dimension must be positive"),
        Some(d) => d as usize,
        None => comps
            .first()
            .and_then(|c| c.get("mean"))
            .and_then(Value::as_array)
            .map(Vec::len)
            .unwrap_or(0),
    };

    let mut components = Vec::with_capacity(comps.len());
    for (i, c) in comps.iter().enumerate() {
        let cp = format!("{path}.components[{i}]");
        let cm = r.object(c, &cp, &["mean", "variances", "weight", "tags"])?;
        let mean = number_array(
            cm.get("mean").ok_or_else(|| ConfigError {
                path: join(&cp, "mean"),
                message: "missing required key".into(),
            })?,
            &join(&cp, "mean"),
        )?;
        if mean.len() != expected_dim || mean.is_empty() {
            return err(
                &join(&cp, "mean"),
                format!("expected {expected_dim} entries, found {}", mean.len()),
            );
        }
        let variances = match cm.get("variances") {
            Some(v) => number_array(v, &join(&cp, "variances"))?,
            None => vec![1.0; expected_dim],
        };
        if variances.len() != expected_dim {
            return err(
                &join(&cp, "variances"),
                format!("expected {expected_dim} entries, found {}", variances.len()),
            );
        }
        if let Some(j) = variances.iter().position(|&v| v <= 0.0) {
            return err(&format!("{cp}.variances[{j}]"), "variances must be > 0");
        }
        let weight = number(cm, &cp, "weight")?.unwrap_or(1.0);
        in_range(&join(&cp, "weight"), weight, weight > 0.0, "weight > 0")?;
        let tags = tag_array(
            cm.get("tags").ok_or_else(|| ConfigError {
                path: join(&cp, "tags"),
                message: "missing required key".into(),
            })?,
            &join(&cp, "tags"),
        )?;
        if tags.is_empty() {
            return err(&join(&cp, "tags"), "components need at least one tag");
        }
        components.push(Component::new(mean, variances, weight, tags).map_err(|e| ConfigError {
            path: cp.clone(),
            message: e.to_string(),
        })?);
    }
    MixtureScene::new(components).map_err(|e| ConfigError {
        path: path.into(),
        message: e.to_string(),
    })
}

/// Reads either `{"tags": [...]}` or `{"composite": [{"tags", "weight"}]}`
/// from `map`, returning the query.
fn read_query(
    r: &mut Reader,
    map: &Map<String, Value>,
    path: &str,
    scene: &MixtureScene,
) -> Result<ConceptQuery, ConfigError> {
    let query = match (map.get("tags"), map.get("composite")) {
        (Some(_), Some(_)) => {
            return err(path, "give either `tags` or `composite`, not both");
        }
        (None, None) => return err(&join(path, "tags"), "missing required key"),
        (Some(t), None) => ConceptQuery::Atomic(tag_array(t, &join(path, "tags"))?),
        (None, Some(c)) => {
            let cpath = join(path, "composite");
            let parts = c.as_array().ok_or_else(|| ConfigError {
                path: cpath.clone(),
                message: "expected an array".into(),
            })?;
            if parts.is_empty() {
                return err(&cpath, "composite query needs at least one part");
            }
            let mut tag_sets = Vec::new();
            let mut weights = Vec::new();
            for (i, part) in parts.iter().enumerate() {
                let pp = format!("{cpath}[{i}]");
                let pm = r.object(part, &pp, &["tags", "weight"])?;
                let tags = tag_array(
                    pm.get("tags").ok_or_else(|| ConfigError {
                        path: join(&pp, "tags"),
                        message: "missing required key".into(),
                    })?,
                    &join(&pp, "tags"),
                )?;
                let w = number(pm, &pp, "weight")?.unwrap_or(1.0);
                in_range(&join(&pp, "weight"), w, w > 0.0, "weight > 0")?;
                tag_sets.push(tags);
                weights.push(w);
            }
            normalize_in_place(&mut weights);
            ConceptQuery::Composite(tag_sets.into_iter().zip(weights).collect())
        }
    };
    scene.resolve(Some(&query)).map_err(|e| ConfigError {
        path: path.to_string(),
        message: e.to_string(),
    })?;
    Ok(query)
}

fn read_edits(
    r: &mut Reader,
    value: Option<&Value>,
    scene: &MixtureScene,
) -> Result<Vec<EditDirective>, ConfigError> {
    let Some(value) = value else {
        return Ok(Vec::new());
    };
    let arr = value.as_array().ok_or_else(|| ConfigError {
        path: "edits".into(),
        message: "expected an array".into(),
    })?;
    let mut edits = Vec::with_capacity(arr.len());
    let mut explicit_weights = Vec::with_capacity(arr.len());
    for (i, e) in arr.iter().enumerate() {
        let ep = format!("edits[{i}]");
        let em = r.object(
            e,
            &ep,
            &["tags", "composite", "direction", "s_e", "lambda", "delta", "g"],
        )?;
        let query = read_query(r, em, &ep, scene)?;
        let direction = match string(em, &ep, "direction")? {
            None => Direction::Positive,
            Some(s) => s.parse().map_err(|m: String| ConfigError {
                path: join(&ep, "direction"),
                message: m,
            })?,
        };
        let s_e = number(em, &ep, "s_e")?.unwrap_or(DEFAULT_EDIT_SCALE);
        in_range(&join(&ep, "s_e"), s_e, s_e >= 0.0, "s_e ≥ 0")?;
        if s_e > EDIT_SCALE_WARN {
            r.warnings
                .push(format!("{ep}.s_e: {s_e} exceeds {EDIT_SCALE_WARN}"));
        }
        let default_lambda = match direction {
            Direction::Positive => DEFAULT_POSITIVE_THRESHOLD,
            Direction::Negative => DEFAULT_NEGATIVE_THRESHOLD,
        };
        let lambda = number(em, &ep, "lambda")?.unwrap_or(default_lambda);
        in_range(
            &join(&ep, "lambda"),
            lambda,
            (-1.0..=1.0).contains(&lambda),
            "λ ∈ [−1,1]",
        )?;
        let delta = match em.get("delta") {
            None => DEFAULT_WARMUP,
            Some(v) => match v.as_i64() {
                Some(d) if d >= 0 => d as usize,
                Some(d) => {
                    return err(
                        &join(&ep, "delta"),
                        format!("value {d} is outside the permitted range δ ≥ 0"),
                    )
                }
                None => return err(&join(&ep, "delta"), "expected a non-negative integer"),
            },
        };
        if delta > WARMUP_WARN {
            r.warnings
                .push(format!("{ep}.delta: {delta} exceeds {WARMUP_WARN}"));
        }
        let g = number(em, &ep, "g")?;
        if let Some(g) = g {
            in_range(&join(&ep, "g"), g, g >= 0.0, "g ≥ 0")?;
        }
        explicit_weights.push(g);
        edits.push(EditDirective {
            query,
            direction,
            edit_scale: s_e,
            threshold: lambda,
            warmup: delta,
            weight: 0.0,
        });
    }
    let mut weights: Vec<f64> = explicit_weights.iter().map(|g| g.unwrap_or(1.0)).collect();
    if !weights.is_empty() {
        if weights.iter().sum::<f64>() <= 0.0 {
            return err("edits", "edit weights g must not all be zero");
        }
        normalize_in_place(&mut weights);
    }
    for (e, w) in edits.iter_mut().zip(weights) {
        e.weight = w;
    }
    Ok(edits)
}

fn read_guidance(
    r: &mut Reader,
    value: Option<&Value>,
) -> Result<(GuidanceConfig, f64), ConfigError> {
    let defaults = GuidanceConfig::default();
    let empty = Value::Object(Map::new());
    let value = value.unwrap_or(&empty);
    let path = "guidance";
    let map = r.object(value, path, &["s_g", "s_m", "beta_m", "mu_mode", "s_max"])?;
    let s_g = number(map, path, "s_g")?.unwrap_or(defaults.guidance_scale);
    in_range(&join(path, "s_g"), s_g, s_g >= 0.0, "s_g ≥ 0")?;
    let s_m = number(map, path, "s_m")?.unwrap_or(defaults.momentum_scale);
    in_range(&join(path, "s_m"), s_m, (0.0..=1.0).contains(&s_m), "s_m ∈ [0,1]")?;
    let beta_m = number(map, path, "beta_m")?.unwrap_or(defaults.momentum_beta);
    in_range(
        &join(path, "beta_m"),
        beta_m,
        (0.0..1.0).contains(&beta_m),
        "β_m ∈ [0,1)",
    )?;
    let s_max = number(map, path, "s_max")?.unwrap_or(DEFAULT_S_MAX);
    in_range(&join(path, "s_max"), s_max, s_max > 0.0, "s_max > 0")?;
    let mu_mode = match string(map, path, "mu_mode")?.unwrap_or("paper") {
        "paper" => MuMode::Paper,
        "clamped" => MuMode::Clamped { s_max },
        other => {
            return err(
                &join(path, "mu_mode"),
                format!("unknown mode {other:?} (expected paper|clamped)"),
            )
        }
    };
    Ok((
        GuidanceConfig {
            guidance_scale: s_g,
            momentum_scale: s_m,
            momentum_beta: beta_m,
            mu_mode,
        },
        s_max,
    ))
}

fn read_sampler(r: &mut Reader, value: Option<&Value>) -> Result<SamplerSettings, ConfigError> {
    let empty = Value::Object(Map::new());
    let value = value.unwrap_or(&empty);
    let path = "sampler";
    let map = r.object(value, path, &["steps", "schedule", "seed", "num_samples"])?;
    let steps = unsigned(map, path, "steps")?.unwrap_or(DEFAULT_STEPS as u64);
    in_range(
        &join(path, "steps"),
        steps as f64,
        (1..=MAX_STEPS as u64).contains(&steps),
        "1 ≤ T ≤ 10000",
    )?;
    let schedule = match string(map, path, "schedule")? {
        None => ScheduleKind::Cosine,
        Some(s) => s.parse().map_err(|m: String| ConfigError {
            path: join(path, "schedule"),
            message: m,
        })?,
    };
    let seed = unsigned(map, path, "seed")?.unwrap_or(0);
    let num_samples = unsigned(map, path, "num_samples")?.unwrap_or(DEFAULT_NUM_SAMPLES as u64);
    in_range(
        &join(path, "num_samples"),
        num_samples as f64,
        num_samples >= 1,
        "num_samples ≥ 1",
    )?;
    Ok(SamplerSettings {
        steps: steps as usize,
        schedule,
        seed,
        num_samples: num_samples as usize,
    })
}

fn read_outputs(r: &mut Reader, value: Option<&Value>) -> Result<OutputSettings, ConfigError> {
    let empty = Value::Object(Map::new());
    let value = value.unwrap_or(&empty);
    let path = "outputs";
    let map = r.object(value, path, &["dir", "csv", "metrics", "svg"])?;
    Ok(OutputSettings {
        dir: string(map, path, "dir")?.unwrap_or("out").to_string(),
        csv: boolean(map, path, "csv")?.unwrap_or(true),
        metrics: boolean(map, path, "metrics")?.unwrap_or(true),
        svg: boolean(map, path, "svg")?.unwrap_or(false),
    })
}

/// Validates an already-decoded JSON document.
pub fn from_value(
    value: &Value,
    strictness: Strictness,
) -> Result<(RunConfig, Vec<String>), ConfigError> {
    let mut r = Reader {
        strictness,
        warnings: Vec::new(),
    };
    let top = r.object(
        value,
        "",
        &["schema_version", "scene", "prompt", "edits", "guidance", "sampler", "outputs"],
    )?;
    if let Some(v) = top.get("schema_version") {
        match v.as_u64() {
            Some(SCHEMA_VERSION) => {}
            _ => {
                return err(
                    "schema_version",
                    format!("unsupported schema version {v} (expected {SCHEMA_VERSION})"),
                )
            }
        }
    }
    let scene = read_scene(
        &mut r,
        top.get("scene").ok_or_else(|| ConfigError {
            path: "scene".into(),
            message: "missing required key".into(),
        })?,
    )?;
    let prompt_value = top.get("prompt").ok_or_else(|| ConfigError {
        path: "prompt".into(),
        message: "missing required key".into(),
    })?;
    let prompt_map = r.object(prompt_value, "prompt", &["tags", "composite"])?;
    let prompt = read_query(&mut r, prompt_map, "prompt", &scene)?;
    let edits = read_edits(&mut r, top.get("edits"), &scene)?;
    let (guidance, s_max) = read_guidance(&mut r, top.get("guidance"))?;
    let sampler = read_sampler(&mut r, top.get("sampler"))?;
    let outputs = read_outputs(&mut r, top.get("outputs"))?;
    for (i, e) in edits.iter().enumerate() {
        if e.warmup >= sampler.steps {
            r.warnings.push(format!(
                "edits[{i}].delta: warm-up {} covers all {} steps; the edit never applies",
                e.warmup, sampler.steps
            ));
        }
    }
    Ok((
        RunConfig {
            scene,
            prompt,
            edits,
            guidance,
            s_max,
            sampler,
            outputs,
        },
        r.warnings,
    ))
}

fn query_json(query: &ConceptQuery) -> Map<String, Value> {
    let mut m = Map::new();
    match query {
        ConceptQuery::Atomic(t) => {
            m.insert("tags".into(), json!(t));
        }
        ConceptQuery::Composite(parts) => {
            let arr: Vec<Value> = parts
                .iter()
                .map(|(t, w)| json!({ "tags": t, "weight": w }))
                .collect();
            m.insert("composite".into(), Value::Array(arr));
        }
    }
    m
}

/// The fully explicit JSON value of a config; object keys are sorted.
pub fn to_value(config: &RunConfig) -> Value {
    let components: Vec<Value> = config
        .scene
        .components()
        .iter()
        .map(|c| {
            json!({
                "mean": c.mean,
                "variances": c.variances,
                "weight": c.weight,
                "tags": c.tags,
            })
        })
        .collect();
    let edits: Vec<Value> = config
        .edits
        .iter()
        .map(|e| {
            let mut m = query_json(&e.query);
            m.insert("direction".into(), json!(e.direction.as_str()));
            m.insert("s_e".into(), json!(e.edit_scale));
            m.insert("lambda".into(), json!(e.threshold));
            m.insert("delta".into(), json!(e.warmup));
            m.insert("g".into(), json!(e.weight));
            Value::Object(m)
        })
        .collect();
    let mu_mode = match config.guidance.mu_mode {
        MuMode::Paper => "paper",
        MuMode::Clamped { .. } => "clamped",
    };
    json!({
        "schema_version": SCHEMA_VERSION,
        "scene": {
            "dimension": config.scene.dim(),
            "components": components,
        },
        "prompt": Value::Object(query_json(&config.prompt)),
        "edits": edits,
        "guidance": {
            "s_g": config.guidance.guidance_scale,
            "s_m": config.guidance.momentum_scale,
            "beta_m": config.guidance.momentum_beta,
            "mu_mode": mu_mode,
            "s_max": config.s_max,
        },
        "sampler": {
            "steps": config.sampler.steps,
            "schedule": config.sampler.schedule.as_str(),
            "seed": config.sampler.seed,
            "num_samples": config.sampler.num_samples,
        },
        "outputs": {
            "dir": config.outputs.dir,
            "csv": config.outputs.csv,
            "metrics": config.outputs.metrics,
            "svg": config.outputs.svg,
        },
    })
}

/// Canonical pretty-printed JSON with every default spelled out.
pub fn emit_normalized(config: &RunConfig) -> String {
    let mut s = serde_json::to_string_pretty(&to_value(config)).expect("config serializes");
    s.push('\n');
    s
}

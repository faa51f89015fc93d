//! Independent reference implementations shared by the integration and
//! acceptance suites. Nothing here calls into the guidance or scoring code
//! under test; everything is plain scalar arithmetic.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, RngCore};
use serde_json::{json, Value};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dir {
    Pos,
    Neg,
}

#[derive(Clone, Copy, Debug)]
pub struct EditParams {
    pub dir: Dir,
    pub s_e: f64,
    pub lambda: f64,
    pub delta: usize,
    pub g: f64,
}

#[derive(Clone, Copy, Debug)]
pub enum Mode {
    Floor,
    Cap(f64),
}

/// Per-element guidance step. Returns `(prediction, next momentum)`.
#[allow(clippy::too_many_arguments)]
pub fn scalar_step(
    u: &[f64],
    p: &[f64],
    e: &[Vec<f64>],
    params: &[EditParams],
    s_g: f64,
    s_m: f64,
    beta: f64,
    mode: Mode,
    nu: &[f64],
    t: usize,
) -> (Vec<f64>, Vec<f64>) {
    let n = u.len();
    let any = params.iter().any(|q| t >= q.delta);
    let all = !params.is_empty() && params.iter().all(|q| t >= q.delta);
    let mut pred = vec![0.0; n];
    let mut next = vec![0.0; n];
    for j in 0..n {
        let mut gated = 0.0;
        let mut ungated = 0.0;
        for (i, q) in params.iter().enumerate() {
            let diff = p[j] - e[i][j];
            let on = match q.dir {
                Dir::Pos => diff > q.lambda,
                Dir::Neg => diff < q.lambda,
            };
            let mu = if on {
                let sign = if diff < 0.0 { -1.0 } else { 1.0 };
                let phi = (q.s_e / (diff + 1e-12 * sign)).abs();
                match mode {
                    Mode::Floor => {
                        if phi > 1.0 {
                            phi
                        } else {
                            1.0
                        }
                    }
                    Mode::Cap(c) => {
                        if phi < c {
                            phi
                        } else {
                            c
                        }
                    }
                }
            } else {
                0.0
            };
            let psi = match q.dir {
                Dir::Pos => u[j] - e[i][j],
                Dir::Neg => e[i][j] - u[j],
            };
            let gamma_i = mu * psi;
            if t >= q.delta {
                gated += q.g * gamma_i;
            }
            ungated += q.g * gamma_i;
        }
        let gamma = if all { gated + s_m * nu[j] } else { gated };
        let feed = if all { gamma } else { ungated };
        next[j] = beta * nu[j] + (1.0 - beta) * feed;
        pred[j] = if any {
            u[j] + s_g * ((p[j] - u[j]) - gamma)
        } else {
            u[j] + s_g * (p[j] - u[j])
        };
    }
    (pred, next)
}

/// A plain description of a diagonal Gaussian mixture.
#[derive(Clone, Debug)]
pub struct RawMixture {
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// `log Σ_k w_k N(z; α m_k, α² s_k + ω²)`, weights taken as given.
pub fn log_density(m: &RawMixture, z: &[f64], alpha: f64, omega: f64) -> f64 {
    let terms: Vec<f64> = (0..m.weights.len())
        .map(|k| {
            let mut l = m.weights[k].ln();
            for i in 0..z.len() {
                let v = alpha * alpha * m.vars[k][i] + omega * omega;
                let r = z[i] - alpha * m.means[k][i];
                l += -0.5 * (r * r / v) - 0.5 * (2.0 * std::f64::consts::PI * v).ln();
            }
            l
        })
        .collect();
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    top + terms.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
}

/// `-ω ∇ log p_t` by central differences with step `h`.
pub fn fd_eps(m: &RawMixture, z: &[f64], alpha: f64, omega: f64, h: f64) -> Vec<f64> {
    (0..z.len())
        .map(|i| {
            let mut a = z.to_vec();
            let mut b = z.to_vec();
            a[i] += h;
            b[i] -= h;
            let g = (log_density(m, &a, alpha, omega) - log_density(m, &b, alpha, omega)) / (2.0 * h);
            -omega * g
        })
        .collect()
}

/// Exact `-ω ∇ log p_t`, from per-component densities.
pub fn analytic_eps(m: &RawMixture, z: &[f64], alpha: f64, omega: f64) -> Vec<f64> {
    let d = z.len();
    let logs: Vec<f64> = (0..m.weights.len())
        .map(|k| {
            let single = RawMixture {
                means: vec![m.means[k].clone()],
                vars: vec![m.vars[k].clone()],
                weights: vec![1.0],
            };
            m.weights[k].ln() + log_density(&single, z, alpha, omega)
        })
        .collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = dens.iter().sum();
    let mut out = vec![0.0; d];
    for k in 0..dens.len() {
        let r = dens[k] / total;
        for i in 0..d {
            let v = alpha * alpha * m.vars[k][i] + omega * omega;
            out[i] += r * (z[i] - alpha * m.means[k][i]) / v;
        }
    }
    out.iter().map(|x| omega * x).collect()
}

/// A random scene as JSON components plus the matching raw mixture.
pub struct RandomScene {
    pub components: Vec<Value>,
    pub raw: RawMixture,
    pub tags: Vec<Vec<String>>,
    pub dim: usize,
}

pub const TAG_POOL: [&str; 4] = ["a", "b", "c", "d"];

pub fn random_scene<R: Rng + RngCore>(rng: &mut R, dim: usize, k: usize) -> RandomScene {
    let mut components = Vec::new();
    let mut raw = RawMixture {
        means: vec![],
        vars: vec![],
        weights: vec![],
    };
    let mut all_tags = Vec::new();
    for i in 0..k {
        let mean: Vec<f64> = (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect();
        let vars: Vec<f64> = (0..dim).map(|_| rng.random_range(0.2..2.0)).collect();
        let w: f64 = rng.random_range(0.2..2.0);
        // every component carries "all" and its own index tag so any
        // random query drawn from these sets selects something
        let mut tags = vec!["all".to_string(), format!("k{i}")];
        for t in TAG_POOL {
            if rng.random_bool(0.5) {
                tags.push(t.to_string());
            }
        }
        components.push(json!({"mean": mean, "variances": vars, "weight": w, "tags": tags}));
        raw.means.push(mean);
        raw.vars.push(vars);
        raw.weights.push(w);
        all_tags.push(tags);
    }
    let total: f64 = raw.weights.iter().sum();
    for w in raw.weights.iter_mut() {
        *w /= total;
    }
    RandomScene {
        components,
        raw,
        tags: all_tags,
        dim,
    }
}

impl RandomScene {
    /// Components carrying every tag in `required`, with conditional weights.
    pub fn select(&self, required: &[String]) -> Vec<(usize, f64)> {
        let idx: Vec<usize> = (0..self.tags.len())
            .filter(|&k| required.iter().all(|t| self.tags[k].contains(t)))
            .collect();
        let total: f64 = idx.iter().map(|&k| self.raw.weights[k]).sum();
        idx.into_iter().map(|k| (k, self.raw.weights[k] / total)).collect()
    }

    /// The pooled mixture `Σ_j b_j · select(T_j)`.
    pub fn pooled(&self, parts: &[(Vec<String>, f64)]) -> RawMixture {
        let mut w = vec![0.0; self.tags.len()];
        for (t, b) in parts {
            for (k, cw) in self.select(t) {
                w[k] += b * cw;
            }
        }
        let keep: Vec<usize> = (0..w.len()).filter(|&k| w[k] > 0.0).collect();
        RawMixture {
            means: keep.iter().map(|&k| self.raw.means[k].clone()).collect(),
            vars: keep.iter().map(|&k| self.raw.vars[k].clone()).collect(),
            weights: keep.iter().map(|&k| w[k]).collect(),
        }
    }
}

/// A random valid configuration document.
pub fn random_config<R: Rng + RngCore>(rng: &mut R) -> Value {
    let dim = rng.random_range(1..=3);
    let k = rng.random_range(1..=4);
    let scene = random_scene(rng, dim, k);
    let pick_tags = |rng: &mut R| -> Vec<String> {
        let k = rng.random_range(0..scene.tags.len());
        let mut t = vec![format!("k{k}")];
        if rng.random_bool(0.5) {
            t = vec!["all".to_string()];
        }
        t
    };
    let mut doc = json!({
        "scene": {"dimension": dim, "components": scene.components},
        "prompt": {"tags": pick_tags(rng)},
    });
    let n_edits = rng.random_range(0..=3);
    let mut edits = Vec::new();
    for _ in 0..n_edits {
        let mut e = serde_json::Map::new();
        if rng.random_bool(0.3) {
            let a = pick_tags(rng);
            let b = pick_tags(rng);
            e.insert(
                "composite".into(),
                json!([{"tags": a, "weight": rng.random_range(0.1..3.0)},
                       {"tags": b, "weight": rng.random_range(0.1..3.0)}]),
            );
        } else {
            e.insert("tags".into(), json!(pick_tags(rng)));
        }
        if rng.random_bool(0.5) {
            e.insert(
                "direction".into(),
                json!(if rng.random_bool(0.5) { "positive" } else { "negative" }),
            );
        }
        if rng.random_bool(0.5) {
            e.insert("s_e".into(), json!(rng.random_range(0.0..20.0)));
        }
        if rng.random_bool(0.5) {
            e.insert("lambda".into(), json!(rng.random_range(-1.0..=1.0)));
        }
        if rng.random_bool(0.5) {
            e.insert("delta".into(), json!(rng.random_range(0..15)));
        }
        if rng.random_bool(0.5) {
            e.insert("g".into(), json!(rng.random_range(0.1..4.0)));
        }
        edits.push(Value::Object(e));
    }
    if !edits.is_empty() {
        doc["edits"] = Value::Array(edits);
    }
    if rng.random_bool(0.7) {
        doc["guidance"] = json!({
            "s_g": rng.random_range(0.0..10.0),
            "s_m": rng.random_range(0.0..=1.0),
            "beta_m": rng.random_range(0.0..0.99),
            "mu_mode": if rng.random_bool(0.5) { "paper" } else { "clamped" },
        });
    }
    if rng.random_bool(0.7) {
        doc["sampler"] = json!({
            "steps": rng.random_range(1..=60),
            "schedule": if rng.random_bool(0.5) { "cosine" } else { "linear_vp" },
            "seed": rng.next_u64() >> 1,
            "num_samples": rng.random_range(1..=8),
        });
    }
    doc
}

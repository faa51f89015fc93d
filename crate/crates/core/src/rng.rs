//! Seeded standard-normal draws.
//!
//! The generator is part of the output contract, so it is spelled out here:
//!
//! 1. Key a ChaCha20 stream with `ChaCha20Rng::seed_from_u64(seed)`.
//! 2. Normals are produced in pairs. Each pair consumes two `next_u64`
//!    words `a`, `b` and maps them to `u1 = 1 - (a >> 11) · 2⁻⁵³ ∈ (0, 1]`
//!    and `u2 = (b >> 11) · 2⁻⁵³ ∈ [0, 1)`.
//! 3. Box–Muller: `r = sqrt(-2 ln u1)`, emit `r cos(2π u2)` then
//!    `r sin(2π u2)`. An odd-length request drops the final sine.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

pub struct NormalStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * INV_2_53
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(s) = self.spare.take() {
            return s;
        }
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// `n` i.i.d. standard normals for `seed`.
pub fn standard_normals(seed: u64, n: usize) -> Vec<f64> {
    let mut stream = NormalStream::new(seed);
    (0..n).map(|_| stream.next_normal()).collect()
}

//! Reproducible Laplace noise.
//!
//! Every draw is addressed by `(base, stream, index)`. The generator is
//! ChaCha8 keyed by `base`, with ChaCha stream id `stream`; draw `index`
//! owns one 64-byte keystream block starting at word `16 * index`. Element
//! `i` of a noise vector can therefore be reproduced on its own, and trials
//! with distinct streams never share keystream.
//!
//! Sampling is by inverse CDF, `z = -b · sgn(u) · ln(1 - 2|u|)` with `u`
//! uniform on the open interval (-1/2, 1/2). Textbook floating-point Laplace
//! sampling is known to leak through the low-order bits of its output; this
//! module does not attempt to harden against that.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 0;

const WORDS_PER_DRAW: u128 = 16;
const CANDIDATES_PER_DRAW: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Seed {
    pub base: u64,
    pub stream: u64,
}

impl Seed {
    pub fn new(base: u64) -> Self {
        Self { base, stream: 0 }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        Self { stream, ..self }
    }

    /// Substream for trial `index`: the stream id XOR the index.
    pub fn substream(self, index: u64) -> Self {
        Self {
            stream: self.stream ^ index,
            ..self
        }
    }

    /// A general-purpose generator positioned at the start of this seed's
    /// stream. Used for test data and search procedures, not for mechanism
    /// noise.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base);
        rng.set_stream(self.stream);
        rng
    }
}

/// Scale `b` of the Laplace distribution `Lap(0, b)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct LaplaceScale(f64);

impl LaplaceScale {
    pub const ZERO: LaplaceScale = LaplaceScale(0.0);

    pub fn new(b: f64) -> Result<Self> {
        if !b.is_finite() || b < 0.0 {
            return Err(Error::validation(format!("Laplace scale must be finite and >= 0, got {b}")));
        }
        Ok(Self(b))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }

    /// `2 b²`
    pub fn variance(self) -> f64 {
        2.0 * self.0 * self.0
    }
}

impl TryFrom<f64> for LaplaceScale {
    type Error = Error;

    fn try_from(b: f64) -> Result<Self> {
        Self::new(b)
    }
}

impl From<LaplaceScale> for f64 {
    fn from(s: LaplaceScale) -> f64 {
        s.0
    }
}

/// CDF of `Lap(0, b)` at `z`.
pub fn laplace_cdf(z: f64, b: f64) -> f64 {
    if b == 0.0 {
        return if z >= 0.0 { 1.0 } else { 0.0 };
    }
    if z < 0.0 {
        0.5 * (z / b).exp()
    } else {
        1.0 - 0.5 * (-z / b).exp()
    }
}

/// One draw from `Lap(0, b)`: draw 0 of the seed's stream.
pub fn laplace_sample(scale: LaplaceScale, seed: Seed) -> f64 {
    laplace_at(scale, seed, 0)
}

/// Draw `index` of the seed's stream, computed without generating the
/// draws before it.
pub fn laplace_at(scale: LaplaceScale, seed: Seed, index: u64) -> f64 {
    if scale.is_zero() {
        return 0.0;
    }
    let mut rng = seed.rng();
    rng.set_word_pos(index as u128 * WORDS_PER_DRAW);
    draw(&mut rng, scale.value())
}

/// Independent draws, element `i` with scale `scales[i]` from draw index `i`.
pub fn laplace_vector(scales: &[LaplaceScale], seed: Seed) -> Vec<f64> {
    let mut rng = seed.rng();
    scales.iter().map(|s| draw(&mut rng, s.value())).collect()
}

/// Consumes exactly one keystream block so that sequential and random
/// access agree.
fn draw(rng: &mut ChaCha8Rng, b: f64) -> f64 {
    let mut bits = None;
    for _ in 0..CANDIDATES_PER_DRAW {
        let k = rng.next_u64() >> 11;
        // k == 0 maps to the closed endpoint u = -1/2; redraw.
        if bits.is_none() && k != 0 {
            bits = Some(k);
        }
    }
    if b == 0.0 {
        return 0.0;
    }
    // All eight candidates hit the endpoint with probability 2^-424.
    let k = bits.unwrap_or(1);
    let u = k as f64 / (1u64 << 53) as f64 - 0.5;
    let z = -b * u.signum() * (-2.0 * u.abs()).ln_1p();
    z + 0.0
}

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Inverted dropout configuration for the sequence encoder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub rate: f64,
    pub recurrent_rate: f64,
    pub training: bool,
    pub seed: u64,
}

impl DropoutSpec {
    pub fn new(rate: f64, recurrent_rate: f64, training: bool, seed: u64) -> Result<Self> {
        for r in [rate, recurrent_rate] {
            if !(0.0..1.0).contains(&r) {
                return Err(invalid!("dropout rate {} outside [0, 1)", r));
            }
        }
        Ok(Self {
            rate,
            recurrent_rate,
            training,
            seed,
        })
    }

    /// No dropout at all.
    pub fn disabled() -> Self {
        Self {
            rate: 0.0,
            recurrent_rate: 0.0,
            training: false,
            seed: 0,
        }
    }

    pub fn eval(self) -> Self {
        Self {
            training: false,
            ..self
        }
    }

    /// Stream of randomness for one (step, sample) key.
    pub fn rng(&self, key: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(key);
        rng
    }

    /// Inverted-dropout mask: each entry is 0 with probability `rate`,
    /// otherwise `1 / (1 - rate)`. `None` when dropout is inactive.
    pub fn mask<R: Rng + ?Sized>(&self, rng: &mut R, len: usize, rate: f64) -> Option<Vec<f64>> {
        if !self.training || rate == 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - rate);
        Some(
            (0..len)
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                .collect(),
        )
    }
}

/// Key for dropout streams derived from an optimizer step and a sample index.
pub fn dropout_key(step: u64, sample: u64) -> u64 {
    step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ sample
}

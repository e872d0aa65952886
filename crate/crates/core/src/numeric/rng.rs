//! Seedable random streams.
//!
//! A stream is ChaCha20 keyed by the master seed with the stream id selecting
//! the ChaCha stream, so replication `r` always draws from stream `r` no
//! matter which thread runs it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        Self {
            master_seed,
            stream_id,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.standard_normal()
    }

    pub fn bernoulli(&mut self, p: f64) -> Result<u8> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "bernoulli probability {p} outside [0, 1]"
            )));
        }
        Ok(u8::from(self.uniform() < p))
    }
}

/// `make_stream` in free-function form.
pub fn make_stream(master_seed: u64, stream_id: u64) -> RngStream {
    RngStream::new(master_seed, stream_id)
}

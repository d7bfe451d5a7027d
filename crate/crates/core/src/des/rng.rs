//! Named random streams derived from one master seed.
//!
//! Every stream is a ChaCha8 generator keyed by the master seed and
//! positioned on its own ChaCha stream number, so draws on one stream never
//! perturb another. A MAC-layer change therefore leaves call arrivals intact.

use rand::distributions::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::time::SimDuration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StreamId {
    CallArrivals,
    CallDurations,
    CallPairing,
    Backoff,
    CloudLatency,
}

impl StreamId {
    pub const ALL: [StreamId; 5] = [
        StreamId::CallArrivals,
        StreamId::CallDurations,
        StreamId::CallPairing,
        StreamId::Backoff,
        StreamId::CloudLatency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StreamId::CallArrivals => "call-arrivals",
            StreamId::CallDurations => "call-durations",
            StreamId::CallPairing => "call-pairing",
            StreamId::Backoff => "backoff",
            StreamId::CloudLatency => "cloud-latency",
        }
    }

    fn stream_number(self) -> u64 {
        match self {
            StreamId::CallArrivals => 1,
            StreamId::CallDurations => 2,
            StreamId::CallPairing => 3,
            StreamId::Backoff => 4,
            StreamId::CloudLatency => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum RngError {
    #[error("exponential mean must be positive, got {0} us")]
    NonPositiveMean(u64),
}

#[derive(Debug, Clone)]
pub struct RngStream {
    id: StreamId,
    seed: u64,
    draws: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id.stream_number());
        RngStream {
            id,
            seed,
            draws: 0,
            rng,
        }
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of values drawn so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Uniform integer in `0..=max`.
    pub fn uniform_inclusive(&mut self, max: u32) -> u32 {
        self.draws += 1;
        self.rng.gen_range(0..=max)
    }

    /// Uniform index in `0..len`. `len` must be non-zero.
    pub fn index(&mut self, len: usize) -> usize {
        self.draws += 1;
        self.rng.gen_range(0..len)
    }

    /// Uniform value in the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        self.draws += 1;
        Open01.sample(&mut self.rng)
    }

    /// Uniform value in `[-bound, bound]`, in microseconds.
    pub fn symmetric_micros(&mut self, bound: SimDuration) -> i64 {
        self.draws += 1;
        let b = bound.as_micros() as i64;
        if b == 0 {
            return 0;
        }
        self.rng.gen_range(-b..=b)
    }

    /// Exponential sample with the given mean, rounded to a whole microsecond
    /// and never below 1 us.
    pub fn exp_sample(&mut self, mean: SimDuration) -> Result<SimDuration, RngError> {
        if mean.is_zero() {
            return Err(RngError::NonPositiveMean(0));
        }
        let u = self.open01();
        let us = (-u.ln() * mean.as_micros() as f64).round().max(1.0);
        Ok(SimDuration::from_micros(us as u64))
    }
}

/// One generator per [`StreamId`], all derived from the same master seed.
#[derive(Debug, Clone)]
pub struct RngStreams {
    streams: Vec<RngStream>,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams {
            streams: StreamId::ALL
                .iter()
                .map(|&id| RngStream::new(seed, id))
                .collect(),
        }
    }

    pub fn get(&mut self, id: StreamId) -> &mut RngStream {
        let idx = StreamId::ALL
            .iter()
            .position(|&s| s == id)
            .expect("known stream");
        &mut self.streams[idx]
    }
}

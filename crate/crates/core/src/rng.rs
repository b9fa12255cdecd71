//! Counter-based deterministic random numbers.
//!
//! The generator is SplitMix64 evaluated in counter mode: draw `i` of a
//! stream is `mix64(key + i * GAMMA)`, where the key is derived from the
//! `(seed, stream_id)` pair by two rounds of the same finalizer. Outputs
//! depend only on `(seed, stream_id, i)`, so substreams for independent
//! work units (experiment, seed, batch item, ...) can be derived without
//! any coordination and replayed bit-identically on any platform.

use crate::error::{Error, Result};
use crate::vector::Vector;

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const SEED_SALT: u64 = 0x243f_6a88_85a3_08d3;
const STREAM_SALT: u64 = 0x1319_8a2e_0370_7344;

/// SplitMix64 finalizer. Bijective on u64.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic random stream identified by `(seed, stream_id)`.
///
/// Streams are single-owner: clone or [`RngStream::derive`] to hand
/// randomness to another task, never share one stream between tasks.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    key: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let k = mix64(seed.wrapping_add(SEED_SALT));
        let key = mix64(k ^ mix64(stream_id.wrapping_add(STREAM_SALT)));
        RngStream {
            seed,
            stream_id,
            key,
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derive an independent substream. `mix64` is a bijection, so distinct
    /// labels map to distinct stream ids under the same parent.
    pub fn derive(&self, label: u64) -> RngStream {
        let child = mix64(self.stream_id ^ mix64(label.wrapping_add(GAMMA)));
        RngStream::new(self.seed, child)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        const DEN: f64 = (1u64 << 53) as f64;
        ((self.next_u64() >> 11) as f64) / DEN
    }

    /// Uniform integer in [0, n).
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_f64() * n as f64) as usize % n
    }

    /// One standard normal draw (Marsaglia polar method).
    ///
    /// The mate of the accepted pair is discarded so that the number of
    /// values produced never depends on call grouping.
    pub fn next_gaussian(&mut self) -> f64 {
        self.next_gaussian_pair().0
    }

    fn next_gaussian_pair(&mut self) -> (f64, f64) {
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                return (u * f, v * f);
            }
        }
    }
}

/// I.i.d. normal vector with mean 0 and the given per-coordinate variance.
///
/// Zero variance returns the zero vector without consuming the stream.
pub fn sample_gaussian(dim: usize, variance: f64, rng: &mut RngStream) -> Result<Vector> {
    if dim == 0 {
        return Err(Error::invalid("sample_gaussian: dim must be positive"));
    }
    if !(variance >= 0.0) {
        return Err(Error::invalid(format!(
            "sample_gaussian: variance must be nonnegative, got {variance}"
        )));
    }
    if variance == 0.0 {
        return Vector::new(vec![0.0; dim]);
    }
    let std = variance.sqrt();
    let mut data = Vec::with_capacity(dim);
    while data.len() + 2 <= dim {
        let (a, b) = rng.next_gaussian_pair();
        data.push(a * std);
        data.push(b * std);
    }
    if data.len() < dim {
        data.push(rng.next_gaussian() * std);
    }
    Vector::new(data)
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Matrix;

/// Seeded, splittable random stream.
///
/// Backed by ChaCha8, which is counter based: `(seed, stream_id)` selects an
/// independent keystream, so two streams never share draws no matter how
/// calls are interleaved. `draws` counts the standard-normal samples taken.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    draws: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            draws: 0,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of scalar draws taken so far.
    pub fn counter(&self) -> u64 {
        self.draws
    }

    /// A fresh child stream on the same seed. The child id depends only on
    /// this stream's id and `tag`, never on how many draws were taken.
    pub fn split(&self, tag: u64) -> RngStream {
        RngStream::new(self.seed, splitmix64(self.stream_id ^ splitmix64(tag)))
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.draws += 1;
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        rand::Rng::random::<f64>(&mut self.rng)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.draws += 1;
        rand::Rng::random_range(&mut self.rng, 0..n)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `m × n` matrix of i.i.d. standard normal draws, filled in row-major order.
pub fn gaussian_matrix(rng: &mut RngStream, m: usize, n: usize) -> Matrix {
    Matrix::from_fn(m, n, |_, _| rng.standard_normal())
}

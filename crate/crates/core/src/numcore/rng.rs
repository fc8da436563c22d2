//! Seedable counter-based random streams.
//!
//! Every stream is a ChaCha8 keystream keyed by the base seed; sub-streams are
//! selected through the ChaCha stream id, so `(seed, stream)` fully determines
//! the output regardless of what other streams have consumed.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Matrix;

/// Named top-level streams. Pipeline stages draw from disjoint streams so each
/// can be rerun on its own and still reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Demos,
    DmTrain,
    PolicyTrain,
    Eval,
    Baseline,
    Sampling,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Demos => 0x64656d6f,
            Stream::DmTrain => 0x646d7472,
            Stream::PolicyTrain => 0x706f6c69,
            Stream::Eval => 0x6576616c,
            Stream::Baseline => 0x62617365,
            Stream::Sampling => 0x73616d70,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Independent child stream identified by `id`. Does not advance `self`.
    pub fn fork(&self, id: u64) -> Rng {
        let child = splitmix64(self.stream ^ splitmix64(id.wrapping_add(0x5851_f42d_4c95_7f2d)));
        Self::with_stream(self.seed, child)
    }

    pub fn named(seed: u64, stream: Stream) -> Rng {
        Rng::new(seed).fork(stream.id())
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Standard normal pair via Box-Muller.
    pub fn gaussian_pair(&mut self) -> (f64, f64) {
        // 1 - u lies in (0, 1], so the log is finite
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        (radius * theta.cos(), radius * theta.sin())
    }

    pub fn gaussian(&mut self) -> f64 {
        self.gaussian_pair().0
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        let mut chunks = out.chunks_exact_mut(2);
        for pair in &mut chunks {
            let (a, b) = self.gaussian_pair();
            pair[0] = a;
            pair[1] = b;
        }
        if let [last] = chunks.into_remainder() {
            *last = self.gaussian();
        }
    }

    /// `rows × cols` matrix of standard normal draws.
    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        self.fill_gaussian(m.as_mut_slice());
        m
    }

    /// `rows × cols` matrix of draws uniform in `[lo, hi)`.
    pub fn uniform_matrix(&mut self, lo: f64, hi: f64, rows: usize, cols: usize) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for x in m.as_mut_slice() {
            *x = self.uniform_in(lo, hi);
        }
        m
    }

    /// Uniformly shuffled `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        // Fisher-Yates
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// Free-function form of [`Rng::gaussian_matrix`].
pub fn rng_gaussian(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    rng.gaussian_matrix(rows, cols)
}

/// Free-function form of [`Rng::uniform_matrix`].
pub fn rng_uniform(rng: &mut Rng, lo: f64, hi: f64, rows: usize, cols: usize) -> Matrix {
    rng.uniform_matrix(lo, hi, rows, cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let a = Rng::new(7).gaussian_matrix(4, 5);
        let b = Rng::new(7).gaussian_matrix(4, 5);
        assert_eq!(a, b);
        assert_ne!(a, Rng::new(8).gaussian_matrix(4, 5));
    }

    #[test]
    fn forks_are_independent_of_parent_consumption() {
        let root = Rng::new(3);
        let mut used = root.clone();
        used.next_f64();
        assert_eq!(root.fork(11).next_u64(), used.fork(11).next_u64());
        assert_ne!(root.fork(11).next_u64(), root.fork(12).next_u64());
        assert_ne!(
            Rng::named(1, Stream::DmTrain).next_u64(),
            Rng::named(1, Stream::PolicyTrain).next_u64()
        );
    }

    #[test]
    fn gaussian_moments() {
        let draws = Rng::new(2024).gaussian_matrix(100_000, 1);
        let mean = draws.mean();
        let var = draws.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / draws.as_slice().len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn uniform_range() {
        let draws = Rng::new(5).uniform_matrix(0.0, 1.0, 1000, 10);
        assert!(draws.as_slice().iter().all(|&x| (0.0..1.0).contains(&x)));
    }

    #[test]
    fn permutation_is_bijective() {
        let mut p = Rng::new(9).permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}

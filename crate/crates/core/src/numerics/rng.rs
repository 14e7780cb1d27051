//! Counter-based random streams addressed by `(root_seed, path)`.
//!
//! Each stream is a ChaCha12 generator whose key is derived from its parent's
//! key by evaluating ChaCha20 at a position fixed by the child's `(label, index)`.
//! Nothing about a stream depends on how many values other streams have drawn,
//! so the order in which rounds, clients or sweep cells execute cannot change
//! any draw.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::{ChaCha12Rng, ChaCha20Rng};
use rand_distr::StandardNormal;

use crate::numerics::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct RngStream {
    root_seed: u64,
    path: Vec<(String, u64)>,
    key: [u8; 32],
    gen: ChaCha12Rng,
}

impl RngStream {
    pub fn new(root_seed: u64) -> Self {
        let mut key = [0u8; 32];
        ChaCha20Rng::seed_from_u64(root_seed).fill_bytes(&mut key);
        Self::from_key(root_seed, Vec::new(), key)
    }

    fn from_key(root_seed: u64, path: Vec<(String, u64)>, key: [u8; 32]) -> Self {
        Self {
            root_seed,
            path,
            key,
            gen: ChaCha12Rng::from_seed(key),
        }
    }

    /// Fresh sub-stream at `path ++ [(label, index)]`, independent of this stream's position.
    pub fn child(&self, label: &str, index: u64) -> Self {
        let mut prf = ChaCha20Rng::from_seed(self.key);
        prf.set_stream(fnv1a64(label.as_bytes()));
        // 8 words = 32 bytes per index, so distinct indices never overlap.
        prf.set_word_pos(u128::from(index) * 8);
        let mut key = [0u8; 32];
        prf.fill_bytes(&mut key);
        let mut path = self.path.clone();
        path.push((label.to_owned(), index));
        Self::from_key(self.root_seed, path, key)
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn path(&self) -> &[(String, u64)] {
        &self.path
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.gen.random::<f64>()
    }

    /// `true` with probability `p`; exact at `p = 0` and `p = 1`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.gen.sample(StandardNormal)
    }

    /// Matrix of i.i.d. `N(0, std²)` entries, drawn in row-major order.
    pub fn gaussian_matrix<S: Scalar>(&mut self, rows: usize, cols: usize, std: f64) -> Matrix<S> {
        Matrix::from_fn(rows, cols, |_, _| S::of(std * self.standard_normal()))
    }

    /// Uniform random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.gen);
        idx
    }

    /// `k` distinct indices from `0..n`, uniformly without replacement, sorted.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut idx = rand::seq::index::sample(&mut self.gen, n, k).into_vec();
        idx.sort_unstable();
        idx
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.gen.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.gen.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.gen.fill_bytes(dst)
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Element;

/// Counter-based generator whose full state is `(seed, stream, word position)`.
///
/// ChaCha output is defined bit-for-bit, so the same seed and call sequence
/// produce the same draws on every platform.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// Serializable snapshot of a [`SeededRng`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Independent substream of the same seed.
    pub fn substream(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        SeededRng { seed: self.seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(state.seed);
        inner.set_stream(state.stream);
        inner.set_word_pos(state.word_pos);
        SeededRng { seed: state.seed, inner }
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    pub fn fill_normal<F: Element>(&mut self, out: &mut [F], std: f64) {
        for v in out {
            *v = F::from_f64(self.normal() * std);
        }
    }

    pub fn normal_vec<F: Element>(&mut self, n: usize, std: f64) -> Vec<F> {
        let mut v = vec![F::zero(); n];
        self.fill_normal(&mut v, std);
        v
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn gamma(&mut self, shape: f64) -> f64 {
        use rand_distr::{Distribution, Gamma};
        Gamma::new(shape, 1.0).expect("positive gamma shape").sample(&mut self.inner)
    }
}

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Seeded, splittable random stream.
///
/// Streams are derived by hashing `(seed, component, index)`, so adding a new
/// consumer never shifts the draws seen by existing ones.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325_u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for a named component and index under a master seed.
    pub fn derive(seed: u64, component: &str, index: u64) -> Self {
        let key = splitmix64(seed ^ splitmix64(fnv1a(component.as_bytes()) ^ splitmix64(index)));
        Self::new(key)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream keyed off this stream's seed; does not consume draws.
    pub fn child(&self, component: &str, index: u64) -> Self {
        Self::derive(self.seed, component, index)
    }

    /// `k` independent streams. Consumes one draw from `self`.
    pub fn split(&mut self, k: usize) -> Vec<Rng> {
        let base = self.inner.next_u64();
        (0..k as u64)
            .map(|i| Self::derive(base, "split", i))
            .collect()
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        mean + std * z
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.random::<f64>() < p
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal_vec(&mut self, n: usize, mean: f64, std: f64) -> Vec<f64> {
        (0..n).map(|_| self.normal(mean, std)).collect()
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        let xa: Vec<f64> = (0..64).map(|_| a.normal(0.0, 1.0)).collect();
        let xb: Vec<f64> = (0..64).map(|_| b.normal(0.0, 1.0)).collect();
        assert_eq!(xa, xb);
    }

    #[test]
    fn derived_streams_differ_by_component_and_index() {
        let a = Rng::derive(1, "tasks", 0).next_u64();
        let b = Rng::derive(1, "tasks", 1).next_u64();
        let c = Rng::derive(1, "init", 0).next_u64();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, Rng::derive(1, "tasks", 0).next_u64());
    }

    #[test]
    fn split_streams_are_uncorrelated() {
        let mut root = Rng::new(3);
        let mut streams = root.split(2);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| streams[0].normal(0.0, 1.0)).collect();
        let ys: Vec<f64> = (0..n).map(|_| streams[1].normal(0.0, 1.0)).collect();
        let corr = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / n as f64;
        // 5 standard errors of a sample correlation
        assert!(corr.abs() < 5.0 / (n as f64).sqrt(), "corr = {corr}");
    }
}

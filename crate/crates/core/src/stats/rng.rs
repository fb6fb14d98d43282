//! Per-replication random streams.
//!
//! A stream is identified by `(base_seed, stream_index)`. The underlying
//! generator is ChaCha8 keyed by the base seed with the stream index
//! selecting one of its 2^64 independent streams, so replication `i`
//! draws the same numbers no matter which worker runs it or in what order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct RngStream {
    base_seed: u64,
    stream_index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(base_seed: u64, stream_index: u64) -> Self {
        Self::keyed(base_seed, base_seed, stream_index)
    }

    fn keyed(base_seed: u64, key: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(stream_index);
        Self {
            base_seed,
            stream_index,
            rng,
        }
    }

    /// An independent stream for one purpose (historical pool, stage I
    /// recruits, ...) within the same replication. Draws from a substream
    /// never depend on how much the parent or any sibling has consumed.
    pub fn substream(&self, purpose: u64) -> Self {
        let key = splitmix64(self.base_seed ^ splitmix64(purpose.wrapping_add(0x5851_f42d_4c95_7f2d)));
        Self::keyed(self.base_seed, key, self.stream_index)
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    #[inline]
    pub fn draw_uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    #[inline]
    pub fn draw_standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Sample from N(mean, sd^2). `sd = 0` returns `mean` exactly; one
    /// normal variate is consumed either way so streams stay aligned.
    #[inline]
    pub fn draw_normal(&mut self, mean: f64, sd: f64) -> f64 {
        debug_assert!(sd >= 0.0);
        let z = self.draw_standard_normal();
        if sd == 0.0 {
            mean
        } else {
            mean + sd * z
        }
    }

    #[inline]
    pub fn draw_bernoulli(&mut self, p: f64) -> bool {
        debug_assert!((0.0..=1.0).contains(&p));
        self.draw_uniform() < p
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_sd(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }

    #[test]
    fn equal_ids_give_identical_sequences() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        for _ in 0..1000 {
            assert_eq!(a.draw_uniform().to_bits(), b.draw_uniform().to_bits());
            assert_eq!(a.draw_normal(1.0, 2.0).to_bits(), b.draw_normal(1.0, 2.0).to_bits());
        }
    }

    #[test]
    fn distinct_streams_differ_and_are_uncorrelated() {
        let mut a = RngStream::new(42, 0);
        let mut b = RngStream::new(42, 1);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| a.draw_standard_normal()).collect();
        let ys: Vec<f64> = (0..n).map(|_| b.draw_standard_normal()).collect();
        assert_ne!(xs[..8], ys[..8]);
        let corr = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / n as f64;
        // sd of the sample correlation is about 1/sqrt(n) = 0.0032
        assert!(corr.abs() < 0.015, "corr = {corr}");
    }

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let root = RngStream::new(3, 11);
        let mut a = root.substream(1);
        let mut a2 = RngStream::new(3, 11).substream(1);
        let mut b = root.substream(2);
        let x = a.draw_uniform();
        assert_eq!(x.to_bits(), a2.draw_uniform().to_bits());
        assert_ne!(x.to_bits(), b.draw_uniform().to_bits());
        assert_eq!(a.stream_index(), 11);
        assert_eq!(a.base_seed(), 3);
    }

    #[test]
    fn degenerate_normal_returns_mean() {
        let mut s = RngStream::new(1, 1);
        for _ in 0..100 {
            assert_eq!(s.draw_normal(55.0, 0.0), 55.0);
        }
    }

    #[test]
    fn normal_moments() {
        let mut s = RngStream::new(2024, 0);
        let xs: Vec<f64> = (0..1_000_000).map(|_| s.draw_normal(55.0, 15.0)).collect();
        let (mean, _) = mean_sd(&xs);
        assert!((mean - 55.0).abs() < 0.05, "mean = {mean}");

        let zs: Vec<f64> = (0..1_000_000).map(|_| s.draw_normal(0.0, 1.0)).collect();
        let (_, sd) = mean_sd(&zs);
        assert!((sd - 1.0).abs() < 0.005, "sd = {sd}");
    }

    #[test]
    fn bernoulli_edges_and_rate() {
        let mut s = RngStream::new(9, 9);
        for _ in 0..10_000 {
            assert!(!s.draw_bernoulli(0.0));
            assert!(s.draw_bernoulli(1.0));
        }
        let n = 1_000_000;
        let hits = (0..n).filter(|_| s.draw_bernoulli(0.34)).count();
        let rate = hits as f64 / n as f64;
        assert!((rate - 0.34).abs() < 0.002, "rate = {rate}");
    }
}

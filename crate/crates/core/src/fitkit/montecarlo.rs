//! Seeded random streams. All sampling goes through ChaCha8 so that a
//! (seed, stream index) pair reproduces bit-identical draws on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent child seed for stream `index` of `master` (SplitMix64 mix).
pub fn substream_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn substream(master: u64, index: u64) -> Rng {
    rng(substream_seed(master, index))
}

/// Number of successes in `shots` Bernoulli(p) trials.
pub fn binomial(rng: &mut Rng, shots: u64, p: f64) -> u64 {
    let p = p.clamp(0.0, 1.0);
    Binomial::new(shots, p).expect("p clamped to [0, 1]").sample(rng)
}

/// Empirical frequency of `shots` Bernoulli(p) trials.
pub fn sample_fraction(rng: &mut Rng, shots: u64, p: f64) -> f64 {
    binomial(rng, shots, p) as f64 / shots as f64
}

pub fn normal(rng: &mut Rng, mean: f64, std_dev: f64) -> f64 {
    Normal::new(mean, std_dev.max(0.0)).expect("finite σ").sample(rng)
}

/// Multinomial draw over `probs` (need not be exactly normalized).
pub fn multinomial(rng: &mut Rng, shots: u64, probs: &[f64]) -> Vec<u64> {
    let mut remaining = shots;
    let mut mass_left: f64 = probs.iter().map(|p| p.max(0.0)).sum();
    let mut counts = Vec::with_capacity(probs.len());
    for (i, &p) in probs.iter().enumerate() {
        if i + 1 == probs.len() {
            counts.push(remaining);
            break;
        }
        let p = p.max(0.0);
        let c = if mass_left > 0.0 && remaining > 0 { binomial(rng, remaining, p / mass_left) } else { 0 };
        counts.push(c);
        remaining -= c;
        mass_left -= p;
    }
    counts
}

/// Standard deviation of an observed fraction `p` from `shots` trials, with
/// the estimate pulled off 0 and 1 by half a count so that σ > 0.
pub fn binomial_sigma(p: f64, shots: f64) -> f64 {
    let k = p.clamp(0.0, 1.0) * shots;
    let q = (k + 0.5) / (shots + 1.0);
    (q * (1.0 - q) / shots).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<u64> = (0..5).map(|i| binomial(&mut substream(7, i), 500, 0.3)).collect();
        let b: Vec<u64> = (0..5).map(|i| binomial(&mut substream(7, i), 500, 0.3)).collect();
        assert_eq!(a, b);
        let x: f64 = rng(42).random();
        let y: f64 = rng(42).random();
        assert_eq!(x.to_bits(), y.to_bits());
    }

    #[test]
    fn substreams_differ() {
        assert_ne!(substream_seed(1, 0), substream_seed(1, 1));
        assert_ne!(substream_seed(1, 0), substream_seed(2, 0));
    }

    #[test]
    fn multinomial_sums_to_shots() {
        let mut r = rng(3);
        for _ in 0..100 {
            let c = multinomial(&mut r, 300, &[0.45, 0.05, 0.05, 0.45]);
            assert_eq!(c.iter().sum::<u64>(), 300);
        }
        assert_eq!(multinomial(&mut r, 10, &[1.0, 0.0, 0.0, 0.0]), vec![10, 0, 0, 0]);
    }

    #[test]
    fn binomial_edge_probabilities() {
        let mut r = rng(9);
        assert_eq!(binomial(&mut r, 50, 0.0), 0);
        assert_eq!(binomial(&mut r, 50, 1.0), 50);
        assert_eq!(binomial(&mut r, 50, 1.2), 50);
    }
}

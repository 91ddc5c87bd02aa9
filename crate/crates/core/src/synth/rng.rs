//! SplitMix64, written out so that synthetic corpora can be reproduced
//! bit-for-bit by any implementation.
//!
//! State update: `state += 0x9E3779B97F4A7C15`; output: the state passed
//! through [`mix`]. A sub-stream for `(seed, tag, index)` starts from
//! `mix(mix(seed ^ tag) ^ index)`. Floats take the top 53 bits of one output.

/// Golden-ratio increment of SplitMix64.
pub const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Independent stream for one purpose (`tag`) and one entity (`index`).
    pub fn stream(seed: u64, tag: u64, index: u64) -> Self {
        SplitMix64::new(mix(mix(seed ^ tag) ^ index))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix(self.state)
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n` by the high half of a 128-bit product.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((u128::from(self.next_u64()) * u128::from(n)) >> 64) as u64
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Knuth's product-of-uniforms Poisson sampler; rates above 30 are split
    /// into a sum of smaller draws.
    pub fn poisson(&mut self, lambda: f64) -> u32 {
        if !(lambda > 0.0) {
            return 0;
        }
        let parts = (lambda / 30.0).ceil() as u32;
        let l = (-lambda / parts as f64).exp();
        let mut total = 0;
        for _ in 0..parts {
            let mut p = self.next_f64();
            while p > l {
                total += 1;
                p *= self.next_f64();
            }
        }
        total
    }

    /// Index drawn with probability proportional to the increments of a
    /// cumulative weight table.
    pub fn pick_cumulative(&mut self, cumulative: &[f64]) -> usize {
        let total = *cumulative.last().expect("non-empty table");
        let u = self.next_f64() * total;
        cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Running sums of `weights`.
pub fn cumulative(weights: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .into_iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_outputs() {
        // first outputs of SplitMix64 seeded with 1234567
        let mut r = SplitMix64::new(1234567);
        let got: Vec<u64> = (0..5).map(|_| r.next_u64()).collect();
        assert_eq!(
            got,
            vec![
                6457827717110365317,
                3203168211198807973,
                9817491932198370423,
                4593380528125082431,
                16408922859458223821
            ]
        );
    }

    #[test]
    fn streams_differ_and_repeat() {
        let a: Vec<u64> = (0..4).map(|_| SplitMix64::stream(7, 1, 2).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let mut s1 = SplitMix64::stream(7, 1, 2);
        let mut s2 = SplitMix64::stream(7, 1, 3);
        assert_ne!(s1.next_u64(), s2.next_u64());
    }

    #[test]
    fn poisson_moments() {
        let mut r = SplitMix64::new(99);
        for &lambda in &[0.5, 4.0, 45.0] {
            let n = 200_000;
            let draws: Vec<f64> = (0..n).map(|_| r.poisson(lambda) as f64).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (lambda / n as f64).sqrt();
            assert!((mean - lambda).abs() < 5.0 * se, "lambda {lambda}: mean {mean}");
            assert!((var / lambda - 1.0).abs() < 0.03, "lambda {lambda}: var {var}");
        }
        assert_eq!(r.poisson(0.0), 0);
    }

    #[test]
    fn below_and_cumulative_are_unbiased() {
        let mut r = SplitMix64::new(5);
        let mut hits = [0u32; 3];
        let cum = cumulative([1.0, 2.0, 1.0]);
        for _ in 0..400_000 {
            hits[r.pick_cumulative(&cum)] += 1;
        }
        let share: Vec<f64> = hits.iter().map(|&h| h as f64 / 400_000.0).collect();
        assert!((share[0] - 0.25).abs() < 0.005 && (share[1] - 0.5).abs() < 0.005);
        let mut counts = [0u32; 7];
        for _ in 0..70_000 {
            counts[r.below(7) as usize] += 1;
        }
        assert!(counts.iter().all(|&c| (c as i64 - 10_000).abs() < 500));
        let f = r.next_f64();
        assert!((0.0..1.0).contains(&f));
    }
}

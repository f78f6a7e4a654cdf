//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use causalrank::bundle::DataBundle;
use causalrank::datagen::{generate_synthetic_base, GenConfig, SyntheticBaseConfig, TargetMean};
use causalrank::{MetricKind, ObservedRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One user-item pair of a hand-built fixture.
#[derive(Debug, Clone, Copy)]
pub struct Pair {
    pub p: f64,
    pub y_t: bool,
    pub y_c: bool,
}

impl Pair {
    pub fn tau(&self) -> f64 {
        self.y_t as u8 as f64 - self.y_c as u8 as f64
    }
}

/// Rank weight written out directly from the metric definitions.
pub fn lambda_oracle(kind: MetricKind, rank: usize, n_items: usize) -> f64 {
    let i = n_items as f64;
    match kind {
        MetricKind::Car | MetricKind::Ar => -(rank as f64),
        MetricKind::CpAt(k) | MetricKind::PAt(k) => {
            if rank <= k {
                i / k as f64
            } else {
                0.0
            }
        }
        MetricKind::Cdcg | MetricKind::Dcg => i / (1.0 + rank as f64).log2(),
    }
}

/// `(1/I) sum_i lambda(rank_i) tau_i` for one user.
pub fn delta_oracle(ranks: &[u32], pairs: &[Pair], kind: MetricKind) -> f64 {
    let n = pairs.len();
    pairs
        .iter()
        .zip(ranks)
        .map(|(pair, &r)| lambda_oracle(kind, r as usize, n) * pair.tau())
        .sum::<f64>()
        / n as f64
}

/// Observed records of one user for a given assignment pattern (bit `i` of
/// `pattern` is `Z_i`), keeping only pairs with `y` or `z` set.
pub fn records_for(pairs: &[Pair], pattern: u64, user: u32) -> Vec<ObservedRecord> {
    pairs
        .iter()
        .enumerate()
        .filter_map(|(i, pair)| {
            let z = pattern >> i & 1 == 1;
            let y = if z { pair.y_t } else { pair.y_c };
            (y || z).then_some(ObservedRecord { user, item: i as u32, y, z, p: pair.p })
        })
        .collect()
}

/// Probability of assignment `pattern` under independent `Bernoulli(P_i)`.
pub fn pattern_probability(pairs: &[Pair], pattern: u64) -> f64 {
    pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| if pattern >> i & 1 == 1 { pair.p } else { 1.0 - pair.p })
        .product()
}

/// Exact expectation of `estimate` over all `2^n` assignment patterns.
/// Patterns where `estimate` returns `None` are dropped and the remaining
/// mass renormalized.
pub fn enumerate_expectation(pairs: &[Pair], mut estimate: impl FnMut(u64) -> Option<f64>) -> f64 {
    let (mut total, mut mass) = (0.0, 0.0);
    for pattern in 0..1u64 << pairs.len() {
        if let Some(v) = estimate(pattern) {
            let w = pattern_probability(pairs, pattern);
            total += w * v;
            mass += w;
        }
    }
    total / mass
}

/// Random pairs with propensities in `[lo, hi]`.
pub fn random_pairs(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<Pair> {
    (0..n)
        .map(|_| Pair {
            p: rng.random_range(lo..=hi),
            y_t: rng.random_bool(0.5),
            y_c: rng.random_bool(0.4),
        })
        .collect()
}

/// Uniformly random 1-based ranks over `n` items.
pub fn random_ranks(rng: &mut ChaCha8Rng, n: usize) -> Vec<u32> {
    use rand::seq::SliceRandom;
    let mut ranks: Vec<u32> = (1..=n as u32).collect();
    ranks.shuffle(rng);
    ranks
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Desk dataset: 200 users, 50 items, personalized propensity at `beta`.
pub fn desk_bundle(seed: u64, beta: f64, xi: f64) -> DataBundle {
    let base = generate_synthetic_base(&SyntheticBaseConfig { seed, ..Default::default() }).unwrap();
    let cfg = GenConfig { beta, xi, seed, ..Default::default() };
    DataBundle::generate(&base, &cfg, "desk").unwrap()
}

/// Heavy-skew desk dataset: target mean propensity 0.05 and a steep
/// exponent, leaving the least-likely pairs near `1e-4`.
pub fn heavy_skew_bundle(seed: u64) -> DataBundle {
    let base = generate_synthetic_base(&SyntheticBaseConfig { seed, ..Default::default() }).unwrap();
    let cfg = GenConfig {
        beta: 2.8,
        target_mean_propensity: TargetMean::Value(0.05),
        seed,
        ..Default::default()
    };
    DataBundle::generate(&base, &cfg, "heavy-skew").unwrap()
}

//! Paired tests between two models evaluated on the same records.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

use super::metrics::{PairedP, SampleResult};
use crate::error::{Error, Result};

pub const DEFAULT_PERMUTATIONS: usize = 10_000;
pub const DEFAULT_SIGNIFICANCE_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationConfig {
    pub permutations: usize,
    pub seed: u64,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        Self {
            permutations: DEFAULT_PERMUTATIONS,
            seed: DEFAULT_SIGNIFICANCE_SEED,
        }
    }
}

/// Two-sided sign-flip permutation test on paired differences, using the
/// absolute mean difference as statistic.
///
/// When `2^n` does not exceed the permutation budget every sign pattern is
/// enumerated and the p-value is exact; otherwise it is the Monte-Carlo
/// estimate `(1 + #{T* >= T}) / (1 + N)`.
pub fn sign_flip_p(diffs: &[f64], cfg: PermutationConfig) -> f64 {
    let n = diffs.len();
    if n == 0 {
        return 1.0;
    }
    let observed = diffs.iter().sum::<f64>().abs();
    // Guards against rounding when a flipped sum equals the observed one.
    let tol = 1e-12 * diffs.iter().map(|d| d.abs()).sum::<f64>().max(1e-300);
    if n < 64 && (1u64 << n) <= cfg.permutations as u64 {
        let total = 1u64 << n;
        let mut count = 0u64;
        for mask in 0..total {
            let s: f64 = diffs
                .iter()
                .enumerate()
                .map(|(i, d)| if mask >> i & 1 == 1 { -d } else { *d })
                .sum();
            if s.abs() >= observed - tol {
                count += 1;
            }
        }
        return count as f64 / total as f64;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut count = 0usize;
    for _ in 0..cfg.permutations {
        let mut s = 0.0;
        for d in diffs {
            s += if rng.random::<bool>() { *d } else { -d };
        }
        if s.abs() >= observed - tol {
            count += 1;
        }
    }
    (count + 1) as f64 / (cfg.permutations + 1) as f64
}

/// Exact two-sided McNemar test from the discordant counts.
pub fn mcnemar_exact_p(only_a: u64, only_b: u64) -> f64 {
    let n = only_a + only_b;
    if n == 0 {
        return 1.0;
    }
    let k = only_a.min(only_b);
    let binom = Binomial::new(0.5, n).expect("valid binomial");
    (2.0 * binom.cdf(k)).min(1.0)
}

/// Paired permutation test on IoU and exact McNemar test on hits. Both
/// result lists must cover the same records in the same order.
pub fn significance_paired(
    a: &[SampleResult],
    b: &[SampleResult],
    cfg: PermutationConfig,
) -> Result<PairedP> {
    if a.len() != b.len() {
        return Err(Error::Mismatch(format!(
            "{} vs {} samples",
            a.len(),
            b.len()
        )));
    }
    if let Some((x, y)) = a.iter().zip(b).find(|(x, y)| x.record_id != y.record_id) {
        return Err(Error::Mismatch(format!(
            "record {} is paired with {}",
            x.record_id, y.record_id
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x.iou - y.iou).collect();
    let only_a = a.iter().zip(b).filter(|(x, y)| x.hit && !y.hit).count() as u64;
    let only_b = a.iter().zip(b).filter(|(x, y)| !x.hit && y.hit).count() as u64;
    Ok(PairedP {
        p_miou: sign_flip_p(&diffs, cfg),
        p_acc: mcnemar_exact_p(only_a, only_b),
    })
}

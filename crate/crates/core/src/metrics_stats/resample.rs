use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const DEFAULT_BOOTSTRAP: usize = 2000;
pub const DEFAULT_BOOTSTRAP_SEED: u64 = 123;
pub const DEFAULT_PERMUTATIONS: usize = 10_000;
/// Slack on `|Δ*| >= |Δ|` so exact ties survive rounding.
pub const PERMUTATION_TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub n_resamples: usize,
    pub n_undefined: usize,
}

/// Linear-interpolation quantile of sorted data (`h = (m - 1) q`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    let h = (m - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(m - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Resample indices for replicate `b`, drawn from stream `(seed, b)`.
pub fn resample_indices(n: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = SplitMix64::for_stream(seed, b as u64);
    (0..n).map(|_| rng.below(n)).collect()
}

/// Percentile bootstrap over `n` units: `metric` sees the resampled index
/// list. Undefined replicates are skipped and counted; when more than half
/// are undefined the interval is missing.
pub fn bootstrap_ci<F>(n: usize, n_boot: usize, seed: u64, metric: F) -> Result<BootstrapCi>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    if n == 0 {
        return Err(Error::invalid("bootstrap over empty data"));
    }
    if n_boot == 0 {
        return Err(Error::invalid("bootstrap needs at least one resample"));
    }
    let stats: Vec<Option<f64>> = (0..n_boot)
        .into_par_iter()
        .map(|b| metric(&resample_indices(n, seed, b)).filter(|v| v.is_finite()))
        .collect();
    percentile_ci(stats, n_boot)
}

/// 2.5th and 97.5th percentiles of the defined replicate statistics.
pub fn percentile_ci(stats: Vec<Option<f64>>, n_boot: usize) -> Result<BootstrapCi> {
    if n_boot == 0 {
        return Err(Error::invalid("bootstrap needs at least one resample"));
    }
    let mut valid: Vec<f64> = stats.into_iter().flatten().collect();
    let n_undefined = n_boot - valid.len();
    if valid.is_empty() || 2 * n_undefined > n_boot {
        return Ok(BootstrapCi {
            lo: None,
            hi: None,
            n_resamples: n_boot,
            n_undefined,
        });
    }
    valid.sort_unstable_by(f64::total_cmp);
    Ok(BootstrapCi {
        lo: Some(quantile_sorted(&valid, 0.025)),
        hi: Some(quantile_sorted(&valid, 0.975)),
        n_resamples: n_boot,
        n_undefined,
    })
}

/// Swap pattern for one null draw: unit `i` takes bit `i % 64` of word
/// `i / 64`, words drawn in order from the replicate's stream.
pub fn swap_words(rng: &mut SplitMix64, n: usize) -> Vec<u64> {
    (0..n.div_ceil(64)).map(|_| rng.next()).collect()
}

#[inline]
pub fn swap_bit(words: &[u64], i: usize) -> bool {
    (words[i / 64] >> (i % 64)) & 1 == 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub delta: f64,
    pub p: f64,
    /// Number of null draws (or `2^N` when enumerated).
    pub n_null: usize,
    pub exhaustive: bool,
    pub n_undefined: usize,
}

fn swapped(a: &[f64], b: &[f64], swap: impl Fn(usize) -> bool) -> (Vec<f64>, Vec<f64>) {
    let mut sa = Vec::with_capacity(a.len());
    let mut sb = Vec::with_capacity(b.len());
    for i in 0..a.len() {
        if swap(i) {
            sa.push(b[i]);
            sb.push(a[i]);
        } else {
            sa.push(a[i]);
            sb.push(b[i]);
        }
    }
    (sa, sb)
}

/// Paired permutation test of `metric(a) - metric(b)`. The null swaps the
/// two scores of each unit independently. With `2^N <= n_perm` all swap
/// patterns are enumerated and `p = #{|Δ*| >= |Δ|} / 2^N`; otherwise
/// `p = (1 + #) / (1 + n_perm)` over seeded random patterns.
pub fn paired_permutation<T, F>(
    a: &[f64],
    b: &[f64],
    target: &[T],
    n_perm: usize,
    seed: u64,
    metric: F,
) -> Result<PermutationResult>
where
    T: Sync,
    F: Fn(&[f64], &[T]) -> Option<f64> + Sync,
{
    let n = a.len();
    if b.len() != n || target.len() != n {
        return Err(Error::invalid(format!(
            "paired scores differ in length: {n}, {}, {}",
            b.len(),
            target.len()
        )));
    }
    let ma = metric(a, target).ok_or_else(|| Error::invalid("metric undefined on first arm"))?;
    let mb = metric(b, target).ok_or_else(|| Error::invalid("metric undefined on second arm"))?;
    let delta = ma - mb;
    let thresh = delta.abs() - PERMUTATION_TIE_EPS;
    let null_delta = |words: &[u64]| -> Option<bool> {
        let (sa, sb) = swapped(a, b, |i| swap_bit(words, i));
        Some((metric(&sa, target)? - metric(&sb, target)?).abs() >= thresh)
    };
    let exhaustive = n < 63 && (1u64 << n) <= n_perm as u64;
    let draws: Vec<Option<bool>> = if exhaustive {
        (0..1u64 << n)
            .into_par_iter()
            .map(|mask| null_delta(&[mask]))
            .collect()
    } else {
        (0..n_perm)
            .into_par_iter()
            .map(|r| {
                let mut rng = SplitMix64::for_stream(seed, r as u64);
                null_delta(&swap_words(&mut rng, n))
            })
            .collect()
    };
    Ok(PermutationResult::from_draws(delta, &draws, exhaustive))
}

impl PermutationResult {
    /// `draws[k]` is whether null draw `k` reached `|Δ|`, or `None` when
    /// the metric was undefined on it.
    pub fn from_draws(delta: f64, draws: &[Option<bool>], exhaustive: bool) -> Self {
        let n_undefined = draws.iter().filter(|d| d.is_none()).count();
        let hits = draws.iter().filter(|d| **d == Some(true)).count();
        let defined = draws.len() - n_undefined;
        let p = if exhaustive {
            hits as f64 / defined.max(1) as f64
        } else {
            (1 + hits) as f64 / (1 + defined) as f64
        };
        PermutationResult {
            delta,
            p,
            n_null: draws.len(),
            exhaustive,
            n_undefined,
        }
    }
}

/// Benjamini-Hochberg step-up adjustment, returned in input order.
pub fn bh_adjust(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("p-value {bad} outside [0, 1]")));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p[i].total_cmp(&p[j]).then(i.cmp(&j)));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        // Scaling by m/j (>= 1) keeps fl(p m / j) >= p.
        running = running.min(p[i] * (m as f64 / (rank + 1) as f64));
        adjusted[i] = running.min(1.0);
    }
    Ok(adjusted)
}

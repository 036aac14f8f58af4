//! Per-code quantile breakpoints and robust location/scale statistics,
//! fitted on training data only.
//!
//! Quantiles use the nearest-rank rule on the sorted sample: the `j`-th of
//! `B - 1` breakpoints is `sorted[ceil(j * n / B) - 1]`. Equal breakpoints
//! are merged, so rounded measurements realize fewer bins than requested.
//! Bin `k` covers `[r_{k-1}, r_k)` over the merged breakpoints `r`, with
//! bin 0 open below and the last bin open above.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_model::Admission;
use crate::io::{exact_f64, exact_f64_vec};

/// Scale divisor turning an interquartile range into a normal-equivalent SD.
pub const IQR_TO_SCALE: f64 = 1.35;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSpec {
    pub code: String,
    #[serde(rename = "B")]
    pub granularity: usize,
    pub anchored: bool,
    /// `(n_below, n_within, n_above)` when anchored.
    pub layout: Option<(usize, usize, usize)>,
    #[serde(with = "exact_f64_vec")]
    pub breakpoints: Vec<f64>,
    #[serde(with = "exact_f64_vec")]
    pub realized_breakpoints: Vec<f64>,
    /// `(L_c, U_c)` used as explicit boundaries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_range: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<CodeStats>,
}

impl QuantileSpec {
    pub fn realized_bins(&self) -> usize {
        self.realized_breakpoints.len() + 1
    }

    /// Bin index of `v` over the realized breakpoints (half-open bins).
    pub fn assign_bin(&self, v: f64) -> Result<usize> {
        assign_bin(&self.realized_breakpoints, v)
    }

    fn from_breakpoints(code: &str, granularity: usize, breakpoints: Vec<f64>) -> Self {
        let realized_breakpoints = dedupe_sorted(&breakpoints);
        QuantileSpec {
            code: code.to_string(),
            granularity,
            anchored: false,
            layout: None,
            breakpoints,
            realized_breakpoints,
            reference_range: None,
            stats: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeStats {
    #[serde(with = "exact_f64")]
    pub median: f64,
    #[serde(with = "exact_f64")]
    pub iqr: f64,
    #[serde(with = "exact_f64")]
    pub scale: f64,
    pub n: usize,
}

impl CodeStats {
    pub fn is_degenerate(&self) -> bool {
        !(self.iqr > 0.0)
    }
}

fn sorted_finite(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN in quantile input"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn dedupe_sorted(xs: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(xs.len());
    for &x in xs {
        if out.last().is_none_or(|&last| x > last) {
            out.push(x);
        }
    }
    out
}

/// Nearest-rank interior breakpoints `sorted[ceil(j*n/bins) - 1]`, `j = 1..bins-1`.
fn nearest_rank_breakpoints(sorted: &[f64], bins: usize) -> Vec<f64> {
    let n = sorted.len();
    if n == 0 || bins < 2 {
        return Vec::new();
    }
    (1..bins)
        .map(|j| {
            let rank = (j * n).div_ceil(bins);
            sorted[rank.max(1) - 1]
        })
        .collect()
}

/// Nearest-rank percentile (`p` in `[0, 100]`).
fn nearest_rank_percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = (p / 100.0 * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn fit_population_quantiles(code: &str, values: &[f64], granularity: usize) -> Result<QuantileSpec> {
    if values.is_empty() {
        return Err(Error::invalid(format!("no training values for {code}")));
    }
    if granularity < 1 {
        return Err(Error::invalid("granularity must be at least 1"));
    }
    let sorted = sorted_finite(values)?;
    if sorted.len() < granularity {
        log::warn!(
            "{code}: {} values for {granularity} bins; realized bins will be fewer",
            sorted.len()
        );
    }
    let bps = nearest_rank_breakpoints(&sorted, granularity);
    Ok(QuantileSpec::from_breakpoints(code, granularity, bps))
}

/// Region-wise equal-frequency breakpoints with `L_c` and `U_c` as explicit
/// boundaries. Regions are `v < L`, `L <= v < U` and `v >= U`.
pub fn fit_anchored_quantiles(
    code: &str,
    values: &[f64],
    lower: f64,
    upper: f64,
    layout: (usize, usize, usize),
) -> Result<QuantileSpec> {
    if !(lower.is_finite() && upper.is_finite()) || lower > upper {
        return Err(Error::invalid(format!(
            "{code}: invalid reference range [{lower}, {upper}]"
        )));
    }
    let (nb, nw, na) = layout;
    if nb == 0 || nw == 0 || na == 0 {
        return Err(Error::invalid("anchored layout regions need at least one bin"));
    }
    let sorted = sorted_finite(values)?;
    let below: Vec<f64> = sorted.iter().copied().filter(|&v| v < lower).collect();
    let within: Vec<f64> = sorted
        .iter()
        .copied()
        .filter(|&v| v >= lower && v < upper)
        .collect();
    let above: Vec<f64> = sorted.iter().copied().filter(|&v| v >= upper).collect();

    let mut bps = nearest_rank_breakpoints(&below, nb);
    bps.push(lower);
    bps.extend(nearest_rank_breakpoints(&within, nw));
    bps.push(upper);
    bps.extend(nearest_rank_breakpoints(&above, na));

    let mut spec = QuantileSpec::from_breakpoints(code, nb + nw + na, bps);
    spec.anchored = true;
    spec.layout = Some(layout);
    spec.reference_range = Some((lower, upper));
    Ok(spec)
}

/// Median and IQR from nearest-rank 25th/50th/75th percentiles.
pub fn fit_code_stats(values: &[f64]) -> Result<CodeStats> {
    if values.is_empty() {
        return Err(Error::invalid("no values for code statistics"));
    }
    let sorted = sorted_finite(values)?;
    let q1 = nearest_rank_percentile(&sorted, 25.0);
    let median = nearest_rank_percentile(&sorted, 50.0);
    let q3 = nearest_rank_percentile(&sorted, 75.0);
    let iqr = q3 - q1;
    Ok(CodeStats {
        median,
        iqr,
        scale: iqr / IQR_TO_SCALE,
        n: sorted.len(),
    })
}

/// Number of breakpoints `<= v`, i.e. the half-open bin containing `v`.
pub fn assign_bin(realized_breakpoints: &[f64], v: f64) -> Result<usize> {
    if v.is_nan() {
        return Err(Error::invalid("cannot bin NaN"));
    }
    Ok(realized_breakpoints.partition_point(|&b| b <= v))
}

/// Default anchored layouts: 5-10-5 for ventiles, 10-10-10 for trentiles,
/// otherwise quarter/half/quarter.
pub fn default_anchor_layout(granularity: usize) -> (usize, usize, usize) {
    match granularity {
        20 => (5, 10, 5),
        30 => (10, 10, 10),
        b => {
            let side = (b / 4).max(1);
            (side, b.saturating_sub(2 * side).max(1), side)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitOptions {
    pub granularity: usize,
    pub anchored: bool,
    pub layout: Option<(usize, usize, usize)>,
}

/// Fitted specs for every numeric code, keyed by code.
pub type SpecSet = BTreeMap<String, QuantileSpec>;

/// Most frequent `(L, U)` pair per code; ties go to the smallest pair.
pub fn modal_reference_ranges<'a, I>(admissions: I) -> BTreeMap<String, (f64, f64)>
where
    I: IntoIterator<Item = &'a Admission>,
{
    let mut counts: HashMap<&str, HashMap<(u64, u64), usize>> = HashMap::new();
    for a in admissions {
        for e in &a.events {
            if let (true, Some((lo, hi))) = (e.is_numeric(), e.reference_range()) {
                *counts
                    .entry(e.code.as_str())
                    .or_default()
                    .entry((lo.to_bits(), hi.to_bits()))
                    .or_default() += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|(code, pairs)| {
            let best = pairs
                .into_iter()
                .map(|((lo, hi), n)| (f64::from_bits(lo), f64::from_bits(hi), n))
                .max_by(|a, b| {
                    a.2.cmp(&b.2)
                        .then(b.0.total_cmp(&a.0))
                        .then(b.1.total_cmp(&a.1))
                })
                .expect("non-empty");
            (code.to_string(), (best.0, best.1))
        })
        .collect()
}

/// Collects numeric values per code.
pub fn values_by_code<'a, I>(admissions: I) -> BTreeMap<String, Vec<f64>>
where
    I: IntoIterator<Item = &'a Admission>,
{
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for a in admissions {
        for e in &a.events {
            if let Some(v) = e.numeric_value {
                out.entry(e.code.clone()).or_default().push(v);
            }
        }
    }
    out
}

/// Fits quantile specs and code statistics for every numeric code in the
/// given (training) admissions. Codes with a reference range are anchored
/// when requested; others fall back to population quantiles.
pub fn fit_all<'a, I>(train: I, opts: &FitOptions) -> Result<SpecSet>
where
    I: IntoIterator<Item = &'a Admission> + Clone,
{
    let values = values_by_code(train.clone());
    let ranges = if opts.anchored {
        modal_reference_ranges(train)
    } else {
        BTreeMap::new()
    };
    let layout = opts
        .layout
        .unwrap_or_else(|| default_anchor_layout(opts.granularity));
    let mut out = SpecSet::new();
    for (code, vals) in values {
        let mut spec = match ranges.get(&code) {
            Some(&(lo, hi)) => fit_anchored_quantiles(&code, &vals, lo, hi, layout)?,
            None => fit_population_quantiles(&code, &vals, opts.granularity)?,
        };
        spec.stats = Some(fit_code_stats(&vals)?);
        out.insert(code, spec);
    }
    Ok(out)
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stream::TokenStream;

pub const LENGTH_THRESHOLDS: [usize; 3] = [1024, 2048, 4096];
/// Upper edges of the length histogram; a final bin catches the rest.
pub const HISTOGRAM_EDGES: [usize; 8] = [64, 128, 256, 512, 1024, 2048, 4096, 8192];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: usize,
    /// Exclusive; `None` for the open last bin.
    pub hi: Option<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthReport {
    pub config: String,
    pub n: usize,
    pub median: f64,
    pub mean: f64,
    pub min: usize,
    pub max: usize,
    pub frac_over: BTreeMap<usize, f64>,
    pub histogram: Vec<HistogramBin>,
}

/// Median of lengths; the mean of the two middle values for even counts.
pub fn median(lengths: &[usize]) -> f64 {
    if lengths.is_empty() {
        return f64::NAN;
    }
    let mut v = lengths.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

pub fn length_report_from(config: &str, lengths: &[usize]) -> LengthReport {
    let n = lengths.len();
    let frac_over = LENGTH_THRESHOLDS
        .iter()
        .map(|&t| {
            let c = lengths.iter().filter(|&&l| l > t).count();
            (t, if n == 0 { f64::NAN } else { c as f64 / n as f64 })
        })
        .collect();
    let mut histogram = Vec::with_capacity(HISTOGRAM_EDGES.len() + 1);
    let mut lo = 0;
    for &hi in &HISTOGRAM_EDGES {
        let count = lengths.iter().filter(|&&l| l >= lo && l < hi).count();
        histogram.push(HistogramBin { lo, hi: Some(hi), count });
        lo = hi;
    }
    histogram.push(HistogramBin {
        lo,
        hi: None,
        count: lengths.iter().filter(|&&l| l >= lo).count(),
    });
    LengthReport {
        config: config.to_string(),
        n,
        median: median(lengths),
        mean: if n == 0 {
            f64::NAN
        } else {
            lengths.iter().sum::<usize>() as f64 / n as f64
        },
        min: lengths.iter().copied().min().unwrap_or(0),
        max: lengths.iter().copied().max().unwrap_or(0),
        frac_over,
        histogram,
    }
}

pub fn length_report(config: &str, streams: &[TokenStream]) -> LengthReport {
    let lengths: Vec<usize> = streams.iter().map(TokenStream::len).collect();
    length_report_from(config, &lengths)
}

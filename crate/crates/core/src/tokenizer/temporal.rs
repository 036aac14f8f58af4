use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MIN: i64 = 60;
const HOUR: i64 = 3600;
const DAY: i64 = 86_400;
const WEEK: i64 = 7 * DAY;

/// Lower edges (seconds) of the 13 spacing bins; the last bin is open-ended.
pub const DEFAULT_SPACING_EDGES: [i64; 13] = [
    5 * MIN,
    15 * MIN,
    HOUR,
    2 * HOUR,
    6 * HOUR,
    12 * HOUR,
    DAY,
    3 * DAY,
    WEEK,
    2 * WEEK,
    30 * DAY,
    90 * DAY,
    180 * DAY,
];

pub const TIME_PREFIX: &str = "TIME//";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalMode {
    TimeTokens,
    EventOrder,
    AdmissionRelative,
}

impl TemporalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TemporalMode::TimeTokens => "time_tokens",
            TemporalMode::EventOrder => "event_order",
            TemporalMode::AdmissionRelative => "admission_relative",
        }
    }
}

impl std::str::FromStr for TemporalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time_tokens" | "tt" => Ok(TemporalMode::TimeTokens),
            "event_order" | "none" => Ok(TemporalMode::EventOrder),
            "admission_relative" | "rope" => Ok(TemporalMode::AdmissionRelative),
            _ => Err(Error::config(format!("unknown temporal mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalConfig {
    pub mode: TemporalMode,
    /// Seconds per position in admission-relative mode.
    #[serde(default = "default_rope_scale")]
    pub rope_scale: i64,
    #[serde(default = "default_edges")]
    pub spacing_bin_edges: Vec<i64>,
}

fn default_rope_scale() -> i64 {
    60
}

fn default_edges() -> Vec<i64> {
    DEFAULT_SPACING_EDGES.to_vec()
}

impl TemporalConfig {
    pub fn new(mode: TemporalMode) -> Self {
        TemporalConfig {
            mode,
            rope_scale: default_rope_scale(),
            spacing_bin_edges: default_edges(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rope_scale <= 0 {
            return Err(Error::config("rope_scale must be positive"));
        }
        let e = &self.spacing_bin_edges;
        if e.is_empty() || e[0] <= 0 {
            return Err(Error::config("spacing edges must start at a positive duration"));
        }
        if e.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("spacing edges must be strictly increasing"));
        }
        Ok(())
    }

    /// Spacing bin for a gap, or `None` below the first edge.
    pub fn spacing_bin(&self, gap_secs: i64) -> Option<usize> {
        let k = self.spacing_bin_edges.partition_point(|&e| e <= gap_secs);
        k.checked_sub(1)
    }

    pub fn time_tokens(&self) -> Vec<String> {
        self.spacing_bin_edges
            .iter()
            .map(|&e| time_token(e))
            .collect()
    }

    /// Position id under admission-relative mode.
    pub fn relative_position(&self, admit: i64, t: i64) -> i64 {
        (t - admit).max(0).div_euclid(self.rope_scale)
    }
}

/// Compact duration label: `5m`, `2h`, `1w`, `30d`.
pub fn duration_label(secs: i64) -> String {
    if secs % WEEK == 0 && secs < 30 * DAY {
        format!("{}w", secs / WEEK)
    } else if secs % DAY == 0 {
        format!("{}d", secs / DAY)
    } else if secs % HOUR == 0 {
        format!("{}h", secs / HOUR)
    } else if secs % MIN == 0 {
        format!("{}m", secs / MIN)
    } else {
        format!("{secs}s")
    }
}

/// Token for the spacing bin whose lower edge is `edge_secs`.
pub fn time_token(edge_secs: i64) -> String {
    format!("{TIME_PREFIX}{}", duration_label(edge_secs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_edges_are_valid() {
        let c = TemporalConfig::new(TemporalMode::TimeTokens);
        c.validate().unwrap();
        assert_eq!(c.time_tokens().len(), 13);
        assert_eq!(c.time_tokens()[0], "TIME//5m");
        assert_eq!(c.time_tokens()[12], "TIME//180d");
        assert_eq!(c.time_tokens()[8], "TIME//1w");
    }

    #[test]
    fn gap_binning() {
        let c = TemporalConfig::new(TemporalMode::TimeTokens);
        assert_eq!(c.spacing_bin(0), None);
        assert_eq!(c.spacing_bin(299), None);
        assert_eq!(c.spacing_bin(300), Some(0));
        assert_eq!(c.spacing_bin(90 * 60), Some(2));
        assert_eq!(c.spacing_bin(2 * 3600), Some(3));
        assert_eq!(c.spacing_bin(3600), Some(2));
        assert_eq!(c.spacing_bin(400 * DAY), Some(12));
    }

    #[test]
    fn bad_edges_rejected() {
        let mut c = TemporalConfig::new(TemporalMode::TimeTokens);
        c.spacing_bin_edges = vec![300, 300];
        assert!(c.validate().is_err());
        c.spacing_bin_edges = vec![];
        assert!(c.validate().is_err());
    }

    #[test]
    fn relative_positions() {
        let c = TemporalConfig::new(TemporalMode::AdmissionRelative);
        assert_eq!(c.relative_position(1000, 1000), 0);
        assert_eq!(c.relative_position(1000, 1059), 0);
        assert_eq!(c.relative_position(1000, 1060), 1);
        assert_eq!(c.relative_position(1000, 500), 0);
    }
}

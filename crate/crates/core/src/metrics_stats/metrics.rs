use crate::error::{Error, Result};

/// Index order of `scores`, ascending (NaN-free input assumed by callers).
fn argsort(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// Average ranks (1-based); tied values share the mean of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let idx = argsort(values);
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, got: b });
    }
    Ok(())
}

/// Mann-Whitney AUROC with half credit for ties; `None` when one class is
/// absent.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 || scores.len() != labels.len() {
        return None;
    }
    // Doubled rank sum of positives stays integral with tied half-ranks.
    let idx = argsort(scores);
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let pos_in_group = idx[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        twice_rank_sum += pos_in_group * (i + j + 2) as u64;
        i = j + 1;
    }
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Some(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Average precision over descending tie groups: `Σ (R_k - R_{k-1}) P_k`.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || scores.len() != labels.len() {
        return None;
    }
    let mut idx = argsort(scores);
    idx.reverse();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        tp += idx[i..=j].iter().filter(|&&k| labels[k]).count();
        seen += j - i + 1;
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
        i = j + 1;
    }
    Some(ap)
}

fn check_probs(probs: &[f64]) -> Result<()> {
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

pub fn brier(probs: &[f64], labels: &[bool]) -> Result<f64> {
    check_len(probs.len(), labels.len())?;
    check_probs(probs)?;
    if probs.is_empty() {
        return Err(Error::invalid("brier score of empty input"));
    }
    let s: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| (p - f64::from(u8::from(y))).powi(2))
        .sum();
    Ok(s / probs.len() as f64)
}

pub const ECE_BINS: usize = 15;

/// Bin of a probability among 15 equal-width bins; 1.0 goes to the last.
pub fn ece_bin(p: f64) -> usize {
    ((p * ECE_BINS as f64).floor() as usize).min(ECE_BINS - 1)
}

/// Expected calibration error over 15 equal-width bins.
pub fn ece15(probs: &[f64], labels: &[bool]) -> Result<f64> {
    check_len(probs.len(), labels.len())?;
    check_probs(probs)?;
    if probs.is_empty() {
        return Err(Error::invalid("ECE of empty input"));
    }
    let mut count = [0usize; ECE_BINS];
    let mut pos = [0usize; ECE_BINS];
    let mut conf = [0.0f64; ECE_BINS];
    for (&p, &y) in probs.iter().zip(labels) {
        let b = ece_bin(p);
        count[b] += 1;
        pos[b] += usize::from(y);
        conf[b] += p;
    }
    let n = probs.len() as f64;
    Ok((0..ECE_BINS)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let c = count[b] as f64;
            (c / n) * (pos[b] as f64 / c - conf[b] / c).abs()
        })
        .sum())
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of average ranks; `None` without rank variance.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auroc,
    Auprc,
    Brier,
    Ece15,
    Spearman,
}

impl Metric {
    pub const BINARY: [Metric; 4] = [Metric::Auroc, Metric::Auprc, Metric::Brier, Metric::Ece15];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Auroc => "auroc",
            Metric::Auprc => "auprc",
            Metric::Brier => "brier",
            Metric::Ece15 => "ece15",
            Metric::Spearman => "spearman",
        }
    }

    /// Binary metrics read `target > 0.5` as the positive class.
    pub fn eval(self, scores: &[f64], target: &[f64]) -> Option<f64> {
        if self == Metric::Spearman {
            return spearman(scores, target);
        }
        let labels: Vec<bool> = target.iter().map(|&t| t > 0.5).collect();
        self.eval_binary(scores, &labels)
    }

    pub fn eval_binary(self, scores: &[f64], labels: &[bool]) -> Option<f64> {
        match self {
            Metric::Auroc => auroc(scores, labels),
            Metric::Auprc => auprc(scores, labels),
            Metric::Brier => brier(scores, labels).ok(),
            Metric::Ece15 => ece15(scores, labels).ok(),
            Metric::Spearman => None,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auroc" => Ok(Metric::Auroc),
            "auprc" => Ok(Metric::Auprc),
            "brier" => Ok(Metric::Brier),
            "ece15" | "ece" => Ok(Metric::Ece15),
            "spearman" => Ok(Metric::Spearman),
            _ => Err(Error::invalid(format!("unknown metric {s:?}"))),
        }
    }
}

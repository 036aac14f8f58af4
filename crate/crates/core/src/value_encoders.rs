//! Numeric value encoders as embedding-level transforms: two-bin soft
//! discretization (input interpolation and soft output target) and
//! code-normalized xVal (multiplicative and affine injection), over a
//! seeded toy embedding table.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::probes::{self, FeatureMatrix, GradNorm, LogisticOptions, StepRule};
use crate::rng::{derive_seed, SplitMix64};
use crate::stats_fit::{assign_bin, CodeStats, QuantileSpec};

/// Bound applied to normalized xVal scalars.
pub const Z_CLIP: f64 = 5.0;
/// Half-width of the uniform embedding initialization.
pub const INIT_RANGE: f64 = 0.1;
pub const NUM_TOKEN: &str = "[NUM]";

/// Token embeddings plus the `[NUM]` direction and the affine bias.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    seed: u64,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    rows: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingTableJson {
    d: usize,
    seed: u64,
    tokens: std::collections::BTreeMap<String, Vec<f64>>,
    bias: Vec<f64>,
}

fn token_seed(seed: u64, token: &str) -> u64 {
    let digest = Sha256::digest(token.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    derive_seed(seed, u64::from_le_bytes(b))
}

impl EmbeddingTable {
    /// Initializes one vector per token (plus `[NUM]` if absent) with
    /// coordinates uniform on `[-0.1, 0.1]`. Each token draws from its own
    /// stream keyed by the token string, so a token's vector does not depend
    /// on the rest of the vocabulary. The bias starts at zero.
    pub fn init<S: AsRef<str>>(tokens: &[S], dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let mut names: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
        if !names.iter().any(|t| t == NUM_TOKEN) {
            names.push(NUM_TOKEN.to_string());
        }
        let mut rows = Vec::with_capacity(names.len() * dim);
        let mut index = HashMap::with_capacity(names.len());
        for (i, tok) in names.iter().enumerate() {
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate token {tok:?}")));
            }
            let mut rng = SplitMix64::new(token_seed(seed, tok));
            rows.extend((0..dim).map(|_| (2.0 * rng.unit() - 1.0) * INIT_RANGE));
        }
        let table = EmbeddingTable {
            dim,
            seed,
            tokens: names,
            index,
            rows,
            bias: vec![0.0; dim],
        };
        if table.num().iter().all(|&v| v == 0.0) {
            return Err(Error::invalid("[NUM] embedding initialized to zero"));
        }
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.rows[id * self.dim..(id + 1) * self.dim]
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.id(token).map(|i| self.row(i))
    }

    pub fn num(&self) -> &[f64] {
        self.get(NUM_TOKEN).expect("[NUM] always present")
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn set_bias(&mut self, bias: Vec<f64>) -> Result<()> {
        if bias.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: bias.len(),
            });
        }
        self.bias = bias;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let json = EmbeddingTableJson {
            d: self.dim,
            seed: self.seed,
            tokens: self
                .tokens
                .iter()
                .enumerate()
                .map(|(i, t)| (t.clone(), self.row(i).to_vec()))
                .collect(),
            bias: self.bias.clone(),
        };
        Ok(serde_json::to_string(&json)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let json: EmbeddingTableJson = serde_json::from_str(s)?;
        let mut tokens = Vec::with_capacity(json.tokens.len());
        let mut rows = Vec::with_capacity(json.tokens.len() * json.d);
        let mut index = HashMap::new();
        for (i, (tok, v)) in json.tokens.into_iter().enumerate() {
            if v.len() != json.d || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("bad embedding for {tok:?}")));
            }
            index.insert(tok.clone(), i);
            tokens.push(tok);
            rows.extend(v);
        }
        if !index.contains_key(NUM_TOKEN) {
            return Err(Error::invalid("embedding table lacks [NUM]"));
        }
        Ok(EmbeddingTable {
            dim: json.d,
            seed: json.seed,
            tokens,
            index,
            rows,
            bias: json.bias,
        })
    }
}

/// Lower bin index and interpolation weight toward the next bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftValue {
    pub lower_bin: usize,
    pub alpha: f64,
}

/// `(v - lo) / (hi - lo)`, or 0 when the interval is degenerate.
pub fn interpolation_weight(lo: f64, hi: f64, v: f64) -> f64 {
    if hi == lo {
        0.0
    } else {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}

/// Soft discretization weight over the realized breakpoints. Values outside
/// the breakpoint range take the boundary bin with `α = 0`.
pub fn soft_weight(spec: &QuantileSpec, v: f64) -> Result<SoftValue> {
    let r = &spec.realized_breakpoints;
    let bin = assign_bin(r, v)?;
    let alpha = if bin == 0 || bin == r.len() {
        0.0
    } else {
        interpolation_weight(r[bin - 1], r[bin], v)
    };
    Ok(SoftValue {
        lower_bin: bin,
        alpha,
    })
}

/// `(1 - α) E_i + α E_{i+1}`, clamped per coordinate to the segment hull.
pub fn soft_embed(lower: &[f64], upper: &[f64], alpha: f64) -> Vec<f64> {
    lower
        .iter()
        .zip(upper)
        .map(|(&a, &b)| {
            let v = (1.0 - alpha) * a + alpha * b;
            v.clamp(a.min(b), a.max(b))
        })
        .collect()
}

/// Soft embedding from a table of shared quantile tokens named by `q_token`.
/// At the upper boundary (`α = 0`, no next bin) the lower embedding is used.
pub fn soft_embed_table(
    table: &EmbeddingTable,
    sv: SoftValue,
    q_token: impl Fn(usize) -> String,
) -> Result<Vec<f64>> {
    let lower = table
        .get(&q_token(sv.lower_bin))
        .ok_or_else(|| Error::invalid(format!("no embedding for bin {}", sv.lower_bin)))?;
    if sv.alpha == 0.0 {
        return Ok(lower.to_vec());
    }
    let upper = table
        .get(&q_token(sv.lower_bin + 1))
        .ok_or_else(|| Error::invalid(format!("no embedding for bin {}", sv.lower_bin + 1)))?;
    Ok(soft_embed(lower, upper, sv.alpha))
}

/// Two-point target over quantile bins: `(1-α)` on `Q_i`, `α` on `Q_{i+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftTarget {
    pub entries: Vec<(usize, f64)>,
}

impl SoftTarget {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn mass(&self, bin: usize) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.0 == bin)
            .map(|e| e.1)
            .sum()
    }

    /// `-Σ p(k) log q(k)` against a predicted distribution over bins.
    pub fn cross_entropy(&self, predicted: impl Fn(usize) -> f64) -> f64 {
        self.entries
            .iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|&(k, p)| -p * predicted(k).ln())
            .sum()
    }
}

pub fn soft_target(sv: SoftValue) -> SoftTarget {
    let entries = if sv.alpha == 0.0 {
        vec![(sv.lower_bin, 1.0)]
    } else {
        vec![(sv.lower_bin, 1.0 - sv.alpha), (sv.lower_bin + 1, sv.alpha)]
    };
    SoftTarget { entries }
}

/// Clipped robust z-score; also the auxiliary regression label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedScalar {
    pub z: f64,
    pub degenerate: bool,
}

/// `z = clip((v - median_c) / scale_c, -5, 5)`. Returns `None` when the code
/// has no statistics (the `[NUM]` embedding is then left unscaled and the
/// position carries no regression label). Degenerate scale gives `z = 0`.
pub fn xval_normalize(stats: Option<&CodeStats>, v: f64) -> Result<Option<NormalizedScalar>> {
    if v.is_nan() {
        return Err(Error::invalid("cannot normalize NaN"));
    }
    let Some(stats) = stats else {
        return Ok(None);
    };
    if stats.is_degenerate() || !(stats.scale > 0.0) {
        return Ok(Some(NormalizedScalar {
            z: 0.0,
            degenerate: true,
        }));
    }
    let z = ((v - stats.median) / stats.scale).clamp(-Z_CLIP, Z_CLIP);
    Ok(Some(NormalizedScalar {
        z,
        degenerate: false,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XvalVariant {
    Multiplicative,
    Affine,
}

/// `z · e_NUM`, or `z · e_NUM + b` for the affine variant.
pub fn xval_embed(num: &[f64], bias: &[f64], z: f64, variant: XvalVariant) -> Vec<f64> {
    match variant {
        XvalVariant::Multiplicative => num.iter().map(|e| z * e).collect(),
        XvalVariant::Affine => num.iter().zip(bias).map(|(e, b)| z * e + b).collect(),
    }
}

pub fn xval_embed_table(table: &EmbeddingTable, ns: NormalizedScalar, variant: XvalVariant) -> Vec<f64> {
    xval_embed(table.num(), table.bias(), ns.z, variant)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryProbeReport {
    pub code: String,
    pub granularity: usize,
    pub loo_accuracy: f64,
    #[serde(skip)]
    pub predictions: Vec<bool>,
}

/// Abnormal flag per realized bin: the bin midpoint lies outside `[lo, hi]`.
/// Open-ended boundary bins use their single finite edge.
pub fn bin_reference_labels(spec: &QuantileSpec, lo: f64, hi: f64) -> Vec<bool> {
    let r = &spec.realized_breakpoints;
    (0..spec.realized_bins())
        .map(|k| {
            let mid = match (k.checked_sub(1).and_then(|i| r.get(i)), r.get(k)) {
                (Some(&a), Some(&b)) => 0.5 * (a + b),
                (Some(&a), None) => a,
                (None, Some(&b)) => b,
                (None, None) => return false,
            };
            !(lo..=hi).contains(&mid)
        })
        .collect()
}

/// Options for the leave-one-out boundary probe: fixed `1/L` step,
/// 5000 iterations, stop at gradient 2-norm < 1e-8.
pub fn boundary_probe_options() -> LogisticOptions {
    LogisticOptions {
        max_iter: 5000,
        tol: 1e-8,
        norm: GradNorm::L2,
        step: StepRule::Lipschitz,
        l2: 0.0,
    }
}

/// Leave-one-out logistic probe on per-bin embeddings. A fold whose
/// training part has a single class predicts that class.
pub fn boundary_probe(
    table: &EmbeddingTable,
    spec: &QuantileSpec,
    bin_tokens: &[String],
    abnormal: &[bool],
) -> Result<BoundaryProbeReport> {
    if bin_tokens.len() != abnormal.len() {
        return Err(Error::DimensionMismatch {
            expected: bin_tokens.len(),
            got: abnormal.len(),
        });
    }
    if bin_tokens.len() < 3 {
        return Err(Error::invalid("boundary probe needs at least 3 bins"));
    }
    let n_abn = abnormal.iter().filter(|&&a| a).count();
    if n_abn == 0 || n_abn == abnormal.len() {
        return Err(Error::invalid("boundary probe labels are single-class"));
    }
    let rows: Vec<Vec<f64>> = bin_tokens
        .iter()
        .map(|t| {
            table
                .get(t)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::invalid(format!("no embedding for {t:?}")))
        })
        .collect::<Result<_>>()?;
    let y: Vec<f64> = abnormal.iter().map(|&a| f64::from(u8::from(a))).collect();
    let predictions = loo_logistic(&rows, &y, &boundary_probe_options())?;
    let correct = predictions
        .iter()
        .zip(abnormal)
        .filter(|(p, a)| p == a)
        .count();
    Ok(BoundaryProbeReport {
        code: spec.code.clone(),
        granularity: spec.granularity,
        loo_accuracy: correct as f64 / abnormal.len() as f64,
        predictions,
    })
}

/// Held-out class predictions of leave-one-out logistic fits.
pub fn loo_logistic(rows: &[Vec<f64>], y: &[f64], opts: &LogisticOptions) -> Result<Vec<bool>> {
    let n = rows.len();
    let mut out = Vec::with_capacity(n);
    for hold in 0..n {
        let idx: Vec<usize> = (0..n).filter(|&i| i != hold).collect();
        let train_rows: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
        let train_y: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let pos = train_y.iter().filter(|&&v| v == 1.0).count();
        if pos == 0 || pos == train_y.len() {
            out.push(pos > 0);
            continue;
        }
        let ids = (0..train_rows.len()).map(|i| i.to_string()).collect();
        let x = FeatureMatrix::from_rows(ids, &train_rows)?;
        let (model, _) = probes::fit_logistic_with(&x, &train_y, opts)?;
        let held = FeatureMatrix::from_rows(vec![hold.to_string()], &[rows[hold].clone()])?;
        out.push(probes::predict(&model, &held)?[0] >= 0.5);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats_fit::fit_population_quantiles;
    use proptest::prelude::*;

    fn spec(bps: &[f64]) -> QuantileSpec {
        let values: Vec<f64> = bps.to_vec();
        let mut s = fit_population_quantiles("c", &values, 2).unwrap();
        s.breakpoints = bps.to_vec();
        s.realized_breakpoints = bps.to_vec();
        s.granularity = bps.len() + 1;
        s
    }

    fn stats(median: f64, iqr: f64) -> CodeStats {
        CodeStats {
            median,
            iqr,
            scale: iqr / 1.35,
            n: 10,
        }
    }

    #[test]
    fn soft_weight_rules() {
        let s = spec(&[1.0, 2.0, 4.0]);
        assert_eq!(soft_weight(&s, 3.0).unwrap(), SoftValue { lower_bin: 2, alpha: 0.5 });
        assert_eq!(soft_weight(&s, 2.0).unwrap(), SoftValue { lower_bin: 2, alpha: 0.0 });
        assert_eq!(soft_weight(&s, 0.0).unwrap(), SoftValue { lower_bin: 0, alpha: 0.0 });
        assert_eq!(soft_weight(&s, 9.0).unwrap(), SoftValue { lower_bin: 3, alpha: 0.0 });
        assert!(soft_weight(&s, f64::NAN).is_err());
        assert_eq!(interpolation_weight(2.0, 2.0, 2.0), 0.0);
    }

    #[test]
    fn soft_embed_endpoints_and_quarter() {
        let a = [0.1, -0.2, 0.05];
        let b = [-0.03, 0.07, 0.09];
        assert_eq!(soft_embed(&a, &b, 0.0), a.to_vec());
        assert_eq!(soft_embed(&a, &b, 1.0), b.to_vec());
        let q = soft_embed(&a, &b, 0.25);
        for k in 0..3 {
            assert!((q[k] - (0.75 * a[k] + 0.25 * b[k])).abs() <= 1e-12);
        }
    }

    #[test]
    fn soft_target_shapes() {
        let t = soft_target(SoftValue { lower_bin: 4, alpha: 0.0 });
        assert_eq!(t.entries, vec![(4, 1.0)]);
        let h = soft_target(SoftValue { lower_bin: 4, alpha: 0.5 });
        assert_eq!(h.mass(4), 0.5);
        assert_eq!(h.mass(5), 0.5);
        assert_eq!(h.total(), 1.0);
    }

    #[test]
    fn self_cross_entropy_is_binary_entropy() {
        for alpha in [0.1, 0.25, 0.5, 0.9] {
            let t = soft_target(SoftValue { lower_bin: 0, alpha });
            let ce = t.cross_entropy(|k| t.mass(k));
            let h = -(alpha * alpha.ln() + (1.0 - alpha) * (1.0 - alpha).ln());
            assert!((ce - h).abs() < 1e-15);
        }
    }

    #[test]
    fn xval_normalization_cases() {
        let s = stats(4.0, 1.35);
        assert_eq!(xval_normalize(Some(&s), 4.0).unwrap().unwrap().z, 0.0);
        assert_eq!(xval_normalize(Some(&s), 9.5).unwrap().unwrap().z, 5.0);
        let s2 = CodeStats { median: 100.0, iqr: 27.0, scale: 20.0, n: 5 };
        assert_eq!(xval_normalize(Some(&s2), 60.0).unwrap().unwrap().z, -2.0);
        let d = xval_normalize(Some(&stats(3.0, 0.0)), 7.0).unwrap().unwrap();
        assert!(d.degenerate);
        assert_eq!(d.z, 0.0);
        assert_eq!(xval_normalize(None, 1.0).unwrap(), None);
    }

    #[test]
    fn xval_embedding_cases() {
        let mut t = EmbeddingTable::init(&["a", "b"], 8, 1).unwrap();
        let zero = xval_embed_table(&t, NormalizedScalar { z: 0.0, degenerate: false }, XvalVariant::Multiplicative);
        assert_eq!(zero.iter().map(|v| v * v).sum::<f64>(), 0.0);
        t.set_bias(vec![0.25; 8]).unwrap();
        let aff = xval_embed_table(&t, NormalizedScalar { z: 0.0, degenerate: false }, XvalVariant::Affine);
        assert_eq!(aff, vec![0.25; 8]);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let one = xval_embed(t.num(), t.bias(), 1.0, XvalVariant::Multiplicative);
        let two = xval_embed(t.num(), t.bias(), 2.0, XvalVariant::Multiplicative);
        assert_eq!(norm(&two) / norm(&one), 2.0);
    }

    #[test]
    fn table_init_is_stable_and_bounded() {
        let t1 = EmbeddingTable::init(&["x", "y", "z"], 16, 9).unwrap();
        let t2 = EmbeddingTable::init(&["z", "x"], 16, 9).unwrap();
        assert_eq!(t1.get("x"), t2.get("x"));
        assert!(t1.get("y").unwrap().iter().all(|v| v.abs() <= 0.1));
        assert!(t1.bias().iter().all(|&b| b == 0.0));
        let back = EmbeddingTable::from_json(&t1.to_json().unwrap()).unwrap();
        assert_eq!(back.get("y"), t1.get("y"));
        assert_eq!(back.num(), t1.num());
    }

    fn table_with(vectors: &[(&str, Vec<f64>)]) -> EmbeddingTable {
        let names: Vec<&str> = vectors.iter().map(|v| v.0).collect();
        let dim = vectors[0].1.len();
        let mut t = EmbeddingTable::init(&names, dim, 0).unwrap();
        for (name, v) in vectors {
            let id = t.id(name).unwrap();
            t.rows[id * dim..(id + 1) * dim].copy_from_slice(v);
        }
        t
    }

    #[test]
    fn separable_probe_is_perfect() {
        let vecs: Vec<(String, Vec<f64>)> = (0..8)
            .map(|k| {
                let side = if k < 2 || k > 5 { 1.0 } else { -1.0 };
                (format!("Q{k}"), vec![side * (0.5 + 0.1 * f64::from(k)), 0.3 * f64::from(k % 3)])
            })
            .collect();
        let refs: Vec<(&str, Vec<f64>)> = vecs.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
        let t = table_with(&refs);
        let tokens: Vec<String> = vecs.iter().map(|v| v.0.clone()).collect();
        let labels: Vec<bool> = (0..8).map(|k| k < 2 || k > 5).collect();
        let s = spec(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let r = boundary_probe(&t, &s, &tokens, &labels).unwrap();
        assert_eq!(r.loo_accuracy, 1.0);
    }

    #[test]
    fn random_probe_accuracy_in_unit_interval() {
        let names: Vec<String> = (0..10).map(|k| format!("Q{k}")).collect();
        let t = EmbeddingTable::init(&names, 64, 4).unwrap();
        let labels: Vec<bool> = (0..10).map(|k| k % 2 == 0).collect();
        let s = spec(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let r = boundary_probe(&t, &s, &names, &labels).unwrap();
        assert!((0.0..=1.0).contains(&r.loo_accuracy));
        assert!(boundary_probe(&t, &s, &names, &[true; 10]).is_err());
    }

    #[test]
    fn one_dimensional_boundary_at_midpoint() {
        // Two training points at -1 (normal) and +1 (abnormal): by symmetry
        // the fitted boundary -b/w is 0, so held-out points are classified by sign.
        let rows = vec![vec![-1.0], vec![1.0]];
        let y = vec![0.0, 1.0];
        let x = FeatureMatrix::from_rows(vec!["a".into(), "b".into()], &rows).unwrap();
        let (m, _) = probes::fit_logistic_with(&x, &y, &boundary_probe_options()).unwrap();
        let boundary = -m.intercept / m.weights[0];
        assert!(boundary.abs() < 1e-9, "{boundary}");
        let loo = loo_logistic(
            &[vec![-1.0], vec![-0.5], vec![0.5], vec![1.0]],
            &[0.0, 0.0, 1.0, 1.0],
            &boundary_probe_options(),
        )
        .unwrap();
        assert_eq!(loo, vec![false, false, true, true]);
    }

    #[test]
    fn reference_labels_from_midpoints() {
        let s = spec(&[1.0, 2.0, 3.0, 4.0]);
        // bins: <1 (edge 1), [1,2) mid 1.5, [2,3) mid 2.5, [3,4) mid 3.5, >=4 (edge 4)
        assert_eq!(bin_reference_labels(&s, 2.0, 3.0), vec![true, true, false, true, true]);
    }

    proptest! {
        #[test]
        fn soft_embed_in_hull(a in prop::collection::vec(-1.0f64..1.0, 4), b in prop::collection::vec(-1.0f64..1.0, 4), alpha in 0.0f64..=1.0) {
            let e = soft_embed(&a, &b, alpha);
            for k in 0..4 {
                prop_assert!(e[k] >= a[k].min(b[k]) && e[k] <= a[k].max(b[k]));
            }
        }

        #[test]
        fn soft_target_sums_to_one(bin in 0usize..100, alpha in 0.0f64..1.0) {
            let t = soft_target(SoftValue { lower_bin: bin, alpha });
            prop_assert!((t.total() - 1.0).abs() < 1e-15);
            prop_assert!(t.entries.len() <= 2);
        }

        #[test]
        fn z_monotone_and_clipped(median in -10.0f64..10.0, iqr in 0.01f64..5.0, v in -100.0f64..100.0, dv in 0.0f64..10.0) {
            let s = stats(median, iqr);
            let z1 = xval_normalize(Some(&s), v).unwrap().unwrap().z;
            let z2 = xval_normalize(Some(&s), v + dv).unwrap().unwrap().z;
            prop_assert!(z1 <= z2);
            prop_assert!(z1.abs() <= Z_CLIP && z2.abs() <= Z_CLIP);
        }

        #[test]
        fn unit_change_leaves_z_unchanged(values in prop::collection::vec(0.1f64..100.0, 5..60), c in 0.01f64..100.0) {
            let s = crate::stats_fit::fit_code_stats(&values).unwrap();
            prop_assume!(!s.is_degenerate());
            let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
            let sc = crate::stats_fit::fit_code_stats(&scaled).unwrap();
            prop_assert!((sc.median - c * s.median).abs() <= 1e-12 * c * s.median.abs().max(1.0));
            for &v in &values {
                let z = xval_normalize(Some(&s), v).unwrap().unwrap().z;
                let zc = xval_normalize(Some(&sc), v * c).unwrap().unwrap().z;
                prop_assert!((z - zc).abs() < 1e-9, "{} vs {}", z, zc);
            }
        }
    }
}

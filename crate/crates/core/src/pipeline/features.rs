//! Stand-in admission features for running probes without a trained
//! encoder: seeded token embeddings with the configured value injection,
//! rotated by position id and mean-pooled, plus mean-pooled products of
//! adjacent embeddings.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::probes::FeatureMatrix;
use crate::rng::{derive_seed, SplitMix64};
use crate::tokenizer::{quantile_token, TokenStream, Vocabulary};
use crate::value_encoders::{soft_embed_table, xval_embed, EmbeddingTable, SoftValue, XvalVariant, INIT_RANGE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureOptions {
    /// Embedding width; features have twice as many columns.
    pub dim: usize,
    pub seed: u64,
    pub rope_base: f64,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions {
            dim: 16,
            seed: 7,
            rope_base: 10_000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueInjection {
    Discrete,
    Soft,
    Xval(XvalVariant),
}

/// Embedding table over the vocabulary, ids aligned with token ids. The
/// affine bias is drawn so the two xVal variants differ.
pub fn embedding_table(vocab: &Vocabulary, opts: &FeatureOptions) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::init(vocab.tokens(), opts.dim, opts.seed)?;
    let mut rng = SplitMix64::new(derive_seed(opts.seed, u64::MAX));
    table.set_bias((0..opts.dim).map(|_| (2.0 * rng.unit() - 1.0) * INIT_RANGE).collect())?;
    Ok(table)
}

fn rotate(v: &mut [f64], pos: i64, base: f64) {
    let d = v.len();
    for j in 0..d / 2 {
        let theta = pos as f64 * base.powf(-2.0 * j as f64 / d as f64);
        let (s, c) = theta.sin_cos();
        let (x, y) = (v[2 * j], v[2 * j + 1]);
        v[2 * j] = x * c - y * s;
        v[2 * j + 1] = x * s + y * c;
    }
}

fn position_embedding(
    ts: &TokenStream,
    i: usize,
    table: &EmbeddingTable,
    inj: ValueInjection,
) -> Result<Vec<f64>> {
    let tok = ts.tokens[i] as usize;
    if tok >= table.len() {
        return Err(Error::invalid(format!("token id {tok} outside the embedding table")));
    }
    match inj {
        ValueInjection::Soft => {
            if let Some((lower_bin, alpha)) = ts.soft[i] {
                return soft_embed_table(table, SoftValue { lower_bin, alpha }, quantile_token);
            }
        }
        ValueInjection::Xval(variant) => {
            if let Some(z) = ts.z[i] {
                return Ok(xval_embed(table.num(), table.bias(), z, variant));
            }
        }
        ValueInjection::Discrete => {}
    }
    Ok(table.row(tok).to_vec())
}

/// Feature vector of one stream: `[mean R(p_i) e_i, mean e_{i-1} * e_i]`.
pub fn stream_features(
    ts: &TokenStream,
    table: &EmbeddingTable,
    inj: ValueInjection,
    opts: &FeatureOptions,
) -> Result<Vec<f64>> {
    let d = table.dim();
    let mut out = vec![0.0; 2 * d];
    let mut prev: Option<Vec<f64>> = None;
    for i in 0..ts.len() {
        let e = position_embedding(ts, i, table, inj)?;
        if let Some(p) = &prev {
            for k in 0..d {
                out[d + k] += p[k] * e[k];
            }
        }
        let mut r = e.clone();
        rotate(&mut r, ts.positions[i], opts.rope_base);
        for k in 0..d {
            out[k] += r[k];
        }
        prev = Some(e);
    }
    let n = ts.len();
    if n > 0 {
        for v in &mut out[..d] {
            *v /= n as f64;
        }
    }
    if n > 1 {
        for v in &mut out[d..] {
            *v /= (n - 1) as f64;
        }
    }
    Ok(out)
}

pub fn synthetic_features(
    streams: &[TokenStream],
    vocab: &Vocabulary,
    inj: ValueInjection,
    opts: &FeatureOptions,
) -> Result<FeatureMatrix> {
    let table = embedding_table(vocab, opts)?;
    let rows: Vec<Vec<f64>> = streams
        .par_iter()
        .map(|ts| stream_features(ts, &table, inj, opts))
        .collect::<Result<_>>()?;
    let ids = streams.iter().map(|s| s.admission_id.clone()).collect();
    if rows.is_empty() {
        return FeatureMatrix::new(ids, 2 * opts.dim, Vec::new());
    }
    FeatureMatrix::from_rows(ids, &rows)
}

/// `admission_id,f0,...,f{d-1}` with round-trip float formatting.
pub fn write_features_csv(path: &Path, x: &FeatureMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(io::create(path)?);
    let mut header = vec!["admission_id".to_string()];
    header.extend((0..x.cols).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for i in 0..x.rows() {
        let mut rec = vec![x.ids[i].clone()];
        rec.extend(x.row(i).iter().map(|&v| io::f64_17(v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_features_csv(path: &Path) -> Result<FeatureMatrix> {
    let mut rdr = csv::Reader::from_reader(io::open(path)?);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("admission_id") {
        return Err(Error::invalid(format!("{}: first column must be admission_id", path.display())));
    }
    let cols = headers.len() - 1;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        ids.push(rec[0].to_string());
        for raw in rec.iter().skip(1) {
            data.push(raw.parse::<f64>().map_err(|_| {
                Error::invalid(format!("{}:{}: bad feature {raw:?}", path.display(), line + 2))
            })?);
        }
    }
    FeatureMatrix::new(ids, cols, data)
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::temporal::{time_token, TemporalMode};
use super::vocab::{
    fused_token, quantile_token, scaffold_token, TokenKind, Vocabulary, NUM_ID, UNK, UNK_ID,
};
use super::{EncoderMode, Fusion, TokenizerConfig};
use crate::error::{Error, Result};
use crate::event_model::{Admission, Event, PREFIX_SCAFFOLD, SUFFIX_SCAFFOLD};
use crate::stats_fit::SpecSet;
use crate::value_encoders::{soft_weight, xval_normalize};

/// One admission's tokens with parallel per-position channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStream {
    pub admission_id: String,
    pub tokens: Vec<u32>,
    pub positions: Vec<i64>,
    /// `(lower_bin, α)` at soft quantile positions.
    pub soft: Vec<Option<(usize, f64)>>,
    /// Normalized value at `[NUM]` positions.
    pub z: Vec<Option<f64>>,
    pub times: Vec<i64>,
}

impl TokenStream {
    fn new(admission_id: &str) -> Self {
        TokenStream {
            admission_id: admission_id.to_string(),
            tokens: Vec::new(),
            positions: Vec::new(),
            soft: Vec::new(),
            z: Vec::new(),
            times: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn check_aligned(&self) -> Result<()> {
        let n = self.tokens.len();
        for (name, len) in [
            ("positions", self.positions.len()),
            ("soft", self.soft.len()),
            ("z", self.z.len()),
            ("times", self.times.len()),
        ] {
            if len != n {
                return Err(Error::invalid(format!(
                    "{}: channel {name} has {len} entries for {n} tokens",
                    self.admission_id
                )));
            }
        }
        Ok(())
    }

    fn slice(&self, lo: usize, hi: usize) -> TokenStream {
        TokenStream {
            admission_id: self.admission_id.clone(),
            tokens: self.tokens[lo..hi].to_vec(),
            positions: self.positions[lo..hi].to_vec(),
            soft: self.soft[lo..hi].to_vec(),
            z: self.z[lo..hi].to_vec(),
            times: self.times[lo..hi].to_vec(),
        }
    }
}

struct Builder<'a> {
    ts: TokenStream,
    cfg: &'a TokenizerConfig,
    admit: i64,
    time_tokens: usize,
}

impl Builder<'_> {
    fn push(&mut self, id: u32, t: i64, soft: Option<(usize, f64)>, z: Option<f64>) {
        let pos = match self.cfg.temporal.mode {
            TemporalMode::AdmissionRelative => {
                let p = self.cfg.temporal.relative_position(self.admit, t);
                p.max(self.ts.positions.last().copied().unwrap_or(0))
            }
            _ => self.ts.tokens.len() as i64,
        };
        self.ts.tokens.push(id);
        self.ts.positions.push(pos);
        self.ts.soft.push(soft);
        self.ts.z.push(z);
        self.ts.times.push(t);
    }
}

fn check_vocab(vocab: &Vocabulary, cfg: &TokenizerConfig) -> Result<()> {
    let m = &vocab.meta;
    let has_time = m.counts.time_tokens > 0 || m.temporal_mode == TemporalMode::TimeTokens;
    let wants_time = cfg.temporal.mode == TemporalMode::TimeTokens;
    if m.fusion != cfg.fusion
        || has_time != wants_time
        || (m.encoder == EncoderMode::Xval) != (cfg.encoder == EncoderMode::Xval)
    {
        return Err(Error::invalid(format!(
            "vocabulary built for {:?}/{}/{:?} cannot tokenize {:?}/{}/{:?}",
            m.fusion,
            m.temporal_mode.as_str(),
            m.encoder,
            cfg.fusion,
            cfg.temporal.mode.as_str(),
            cfg.encoder
        )));
    }
    Ok(())
}

fn emit_event(b: &mut Builder<'_>, e: &Event, vocab: &Vocabulary, specs: &SpecSet) -> Result<()> {
    let t = e.time;
    let Some(v) = e.numeric_value else {
        b.push(vocab.id_or_unk(&e.code), t, None, None);
        return Ok(());
    };
    let spec = specs.get(&e.code);
    match b.cfg.fusion {
        Fusion::Fused => {
            let id = match spec {
                Some(s) => vocab.id_or_unk(&fused_token(&e.code, s.assign_bin(v)?)),
                None => UNK_ID,
            };
            b.push(id, t, None, None);
        }
        Fusion::Unfused => {
            let (Some(code_id), Some(spec)) = (vocab.id(&e.code), spec) else {
                b.push(UNK_ID, t, None, None);
                if b.cfg.encoder == EncoderMode::Xval {
                    b.push(NUM_ID, t, None, None);
                }
                return Ok(());
            };
            b.push(code_id, t, None, None);
            match b.cfg.encoder {
                EncoderMode::Discrete => {
                    let q = vocab.id_or_unk(&quantile_token(spec.assign_bin(v)?));
                    b.push(q, t, None, None);
                }
                EncoderMode::Soft => {
                    let sv = soft_weight(spec, v)?;
                    let q = vocab.id_or_unk(&quantile_token(sv.lower_bin));
                    b.push(q, t, Some((sv.lower_bin, sv.alpha)), None);
                }
                EncoderMode::Xval => {
                    let ns = xval_normalize(spec.stats.as_ref(), v)?;
                    b.push(NUM_ID, t, None, ns.map(|n| n.z));
                }
            }
        }
    }
    Ok(())
}

/// Tokenizes one admission: prefix scaffold, time-ordered events (with
/// TIME tokens in time-token mode), then the suffix scaffold unless the
/// timeline was cut.
pub fn tokenize(
    a: &Admission,
    vocab: &Vocabulary,
    specs: &SpecSet,
    cfg: &TokenizerConfig,
) -> Result<TokenStream> {
    Ok(tokenize_counted(a, vocab, specs, cfg)?.0)
}

/// As [`tokenize`], also returning the number of inserted TIME tokens.
pub fn tokenize_counted(
    a: &Admission,
    vocab: &Vocabulary,
    specs: &SpecSet,
    cfg: &TokenizerConfig,
) -> Result<(TokenStream, usize)> {
    cfg.validate()?;
    check_vocab(vocab, cfg)?;
    let mut b = Builder {
        ts: TokenStream::new(&a.admission_id),
        cfg,
        admit: a.admit_time,
        time_tokens: 0,
    };
    for attr in PREFIX_SCAFFOLD {
        if let Some(v) = a.demographics.get(*attr) {
            b.push(vocab.id_or_unk(&scaffold_token(attr, v)), a.admit_time, None, None);
        }
    }
    let mut order: Vec<&Event> = a.events.iter().collect();
    if order.windows(2).any(|w| w[0].time > w[1].time) {
        order.sort_by_key(|e| e.time);
    }
    let mut prev: Option<i64> = None;
    for e in order {
        if cfg.temporal.mode == TemporalMode::TimeTokens {
            if let Some(p) = prev {
                if let Some(k) = cfg.temporal.spacing_bin(e.time - p) {
                    let tok = time_token(cfg.temporal.spacing_bin_edges[k]);
                    b.push(vocab.id_or_unk(&tok), e.time, None, None);
                    b.time_tokens += 1;
                }
            }
        }
        prev = Some(e.time);
        emit_event(&mut b, e, vocab, specs)?;
    }
    if !a.is_truncated() {
        for attr in SUFFIX_SCAFFOLD {
            if let Some(v) = a.demographics.get(*attr) {
                b.push(vocab.id_or_unk(&scaffold_token(attr, v)), a.discharge_time, None, None);
            }
        }
    }
    Ok((b.ts, b.time_tokens))
}

/// Tokenizes admissions in parallel, keeping input order.
pub fn tokenize_all(
    admissions: &[Admission],
    vocab: &Vocabulary,
    specs: &SpecSet,
    cfg: &TokenizerConfig,
) -> Result<Vec<TokenStream>> {
    admissions
        .par_iter()
        .map(|a| tokenize(a, vocab, specs, cfg))
        .collect()
}

/// Event recovered from a discrete token stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonEvent {
    pub code: String,
    pub bin: Option<usize>,
}

/// Maps token ids back to the event code sequence and bin indices, skipping
/// scaffold, TIME and padding tokens. Unknown codes come back as `[UNK]`.
pub fn detokenize(tokens: &[u32], vocab: &Vocabulary) -> Result<Vec<SkeletonEvent>> {
    let mut out: Vec<SkeletonEvent> = Vec::new();
    let mut open = false;
    for &id in tokens {
        let kind = vocab
            .kind(id)
            .ok_or_else(|| Error::invalid(format!("token id {id} outside vocabulary")))?;
        let text = vocab.token(id).unwrap_or_default();
        match kind {
            TokenKind::Code => {
                out.push(SkeletonEvent {
                    code: text.to_string(),
                    bin: None,
                });
                open = true;
                continue;
            }
            TokenKind::Quantile(k) => {
                let last = out
                    .last_mut()
                    .filter(|_| open)
                    .ok_or_else(|| Error::invalid("quantile token without a preceding code"))?;
                last.bin = Some(*k);
            }
            TokenKind::Fused { code_len, bin } => out.push(SkeletonEvent {
                code: text[..*code_len].to_string(),
                bin: Some(*bin),
            }),
            TokenKind::Reserved if id == UNK_ID => {
                out.push(SkeletonEvent {
                    code: UNK.to_string(),
                    bin: None,
                });
                open = false;
                continue;
            }
            TokenKind::Reserved | TokenKind::Scaffold | TokenKind::Time => {}
        }
        open = false;
    }
    Ok(out)
}

/// Consecutive non-overlapping windows; the last may be shorter.
pub fn window(ts: &TokenStream, window_len: usize) -> Result<Vec<TokenStream>> {
    if window_len == 0 {
        return Err(Error::invalid("window length must be positive"));
    }
    ts.check_aligned()?;
    if ts.len() <= window_len {
        return Ok(vec![ts.clone()]);
    }
    Ok((0..ts.len())
        .step_by(window_len)
        .map(|lo| ts.slice(lo, (lo + window_len).min(ts.len())))
        .collect())
}

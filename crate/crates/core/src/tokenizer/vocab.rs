use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::temporal::{TemporalMode, TIME_PREFIX};
use super::{EncoderMode, Fusion, TokenizerConfig};
use crate::error::{Error, Result};
use crate::event_model::{Admission, PREFIX_SCAFFOLD, SUFFIX_SCAFFOLD};
use crate::stats_fit::SpecSet;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const NUM: &str = "[NUM]";
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const NUM_ID: u32 = 2;
pub const RESERVED: [&str; 3] = [PAD, UNK, NUM];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Reserved,
    Scaffold,
    Time,
    Code,
    /// Shared quantile token `Q<k>`.
    Quantile(usize),
    /// `<code>//Q<k>`; `code_len` is the byte length of the code prefix.
    Fused { code_len: usize, bin: usize },
}

pub fn scaffold_token(attr: &str, value: &str) -> String {
    format!("{}//{}", attr.to_uppercase(), value)
}

pub fn quantile_token(k: usize) -> String {
    format!("Q{k}")
}

pub fn fused_token(code: &str, k: usize) -> String {
    format!("{code}//Q{k}")
}

fn parse_q(s: &str) -> Option<usize> {
    let digits = s.strip_prefix('Q')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

fn is_scaffold(token: &str) -> bool {
    PREFIX_SCAFFOLD
        .iter()
        .chain(SUFFIX_SCAFFOLD)
        .any(|a| token.strip_prefix(&a.to_uppercase()).is_some_and(|r| r.starts_with("//")))
}

fn classify(token: &str, id: u32, fusion: Fusion) -> TokenKind {
    if (id as usize) < RESERVED.len() {
        return TokenKind::Reserved;
    }
    if token.starts_with(TIME_PREFIX) {
        return TokenKind::Time;
    }
    if is_scaffold(token) {
        return TokenKind::Scaffold;
    }
    match fusion {
        Fusion::Unfused => match parse_q(token) {
            Some(k) => TokenKind::Quantile(k),
            None => TokenKind::Code,
        },
        Fusion::Fused => match token.rsplit_once("//").and_then(|(c, q)| Some((c, parse_q(q)?))) {
            Some((code, bin)) => TokenKind::Fused {
                code_len: code.len(),
                bin,
            },
            None => TokenKind::Code,
        },
    }
}

/// Per-category token counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabCounts {
    pub reserved: usize,
    /// Categorical event codes plus scaffold tokens.
    pub categorical: usize,
    pub scaffold: usize,
    /// Bare code tokens of numeric codes not already categorical.
    pub numeric_codes: usize,
    /// Shared `Q<k>` tokens (unfused) or fused code-bin tokens.
    pub value_tokens: usize,
    pub time_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabMeta {
    pub fusion: Fusion,
    pub temporal_mode: TemporalMode,
    pub encoder: EncoderMode,
    pub granularity: Option<usize>,
    pub size: usize,
    pub counts: VocabCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    kinds: Vec<TokenKind>,
    pub meta: VocabMeta,
}

#[derive(Serialize, Deserialize)]
struct VocabArtifact {
    tokens: BTreeMap<String, u32>,
    metadata: VocabMeta,
}

impl Vocabulary {
    fn from_sorted(tokens: Vec<String>, meta: VocabMeta) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        let mut kinds = Vec::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            let id = i as u32;
            if index.insert(t.clone(), id).is_some() {
                return Err(Error::invalid(format!("duplicate token {t:?}")));
            }
            kinds.push(classify(t, id, meta.fusion));
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(r) {
                return Err(Error::invalid(format!("reserved token {r} must have id {i}")));
            }
        }
        Ok(Vocabulary {
            tokens,
            index,
            kinds,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn kind(&self, id: u32) -> Option<&TokenKind> {
        self.kinds.get(id as usize)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_json(&self) -> Result<String> {
        let art = VocabArtifact {
            tokens: self
                .tokens
                .iter()
                .enumerate()
                .map(|(i, t)| (t.clone(), i as u32))
                .collect(),
            metadata: self.meta.clone(),
        };
        Ok(serde_json::to_string_pretty(&art)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let art: VocabArtifact = serde_json::from_str(s)?;
        let n = art.tokens.len();
        let mut tokens = vec![String::new(); n];
        for (t, id) in art.tokens {
            let slot = tokens
                .get_mut(id as usize)
                .ok_or_else(|| Error::invalid(format!("token id {id} out of range")))?;
            if !slot.is_empty() {
                return Err(Error::invalid(format!("token id {id} used twice")));
            }
            *slot = t;
        }
        if art.metadata.size != n {
            return Err(Error::invalid("vocabulary size does not match metadata"));
        }
        Vocabulary::from_sorted(tokens, art.metadata)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::from_json(&s)
    }
}

/// Scaffold tokens for every attribute value seen in `admissions`.
pub fn scaffold_tokens<'a, I>(admissions: I) -> BTreeSet<String>
where
    I: IntoIterator<Item = &'a Admission>,
{
    let mut out = BTreeSet::new();
    for a in admissions {
        for attr in PREFIX_SCAFFOLD.iter().chain(SUFFIX_SCAFFOLD) {
            if let Some(v) = a.demographics.get(*attr) {
                out.insert(scaffold_token(attr, v));
            }
        }
    }
    out
}

/// Builds the vocabulary from train admissions and train-fitted specs.
/// Ids: reserved tokens first, then all other tokens in sorted order.
pub fn build_vocab<'a, I>(train: I, specs: &SpecSet, cfg: &TokenizerConfig) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a Admission>,
{
    cfg.validate()?;
    let train: Vec<&Admission> = train.into_iter().collect();
    let scaffold = scaffold_tokens(train.iter().copied());
    let mut categorical: BTreeSet<String> = BTreeSet::new();
    let mut numeric: BTreeSet<&str> = BTreeSet::new();
    for a in &train {
        for e in &a.events {
            if e.is_numeric() && specs.contains_key(&e.code) {
                numeric.insert(&e.code);
            } else if !e.is_numeric() {
                categorical.insert(e.code.clone());
            }
        }
    }
    let mut counts = VocabCounts {
        reserved: RESERVED.len(),
        scaffold: scaffold.len(),
        categorical: categorical.len() + scaffold.len(),
        ..VocabCounts::default()
    };
    let mut all: BTreeSet<String> = categorical.clone();
    all.extend(scaffold);
    match cfg.fusion {
        Fusion::Fused => {
            for code in &numeric {
                let bins = specs[*code].realized_bins();
                all.extend((0..bins).map(|k| fused_token(code, k)));
                counts.value_tokens += bins;
            }
        }
        Fusion::Unfused => {
            for code in &numeric {
                if !categorical.contains(*code) {
                    counts.numeric_codes += 1;
                }
                all.insert(code.to_string());
            }
            if cfg.encoder != EncoderMode::Xval {
                let max_bins = numeric
                    .iter()
                    .map(|c| specs[*c].realized_bins())
                    .max()
                    .unwrap_or(0);
                all.extend((0..max_bins).map(quantile_token));
                counts.value_tokens = max_bins;
            }
        }
    }
    if cfg.temporal.mode == TemporalMode::TimeTokens {
        let tt = cfg.temporal.time_tokens();
        counts.time_tokens = tt.len();
        all.extend(tt);
    }
    for r in RESERVED {
        if all.contains(r) {
            return Err(Error::invalid(format!("event code collides with reserved token {r}")));
        }
    }
    let expected = counts.reserved
        + counts.categorical
        + counts.numeric_codes
        + counts.value_tokens
        + counts.time_tokens;
    let tokens: Vec<String> = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(all)
        .collect();
    if tokens.len() != expected {
        return Err(Error::invalid(format!(
            "token namespaces overlap: {} tokens, {} by category",
            tokens.len(),
            expected
        )));
    }
    let meta = VocabMeta {
        fusion: cfg.fusion,
        temporal_mode: cfg.temporal.mode,
        encoder: cfg.encoder,
        granularity: numeric.iter().map(|c| specs[*c].granularity).max(),
        size: tokens.len(),
        counts,
    };
    Vocabulary::from_sorted(tokens, meta)
}

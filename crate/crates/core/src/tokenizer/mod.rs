//! Vocabulary construction and per-admission token streams under the
//! fusion, temporal and value-encoder configurations; windowing, packing
//! and length summaries.

mod lengths;
mod packing;
mod stream;
mod temporal;
mod vocab;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use lengths::{length_report, length_report_from, median, HistogramBin, LengthReport, LENGTH_THRESHOLDS};
pub use packing::{pack, pack_shards, pack_with_gaps, poisson_gaps, DEFAULT_PAD_MEAN};
pub use stream::{detokenize, tokenize, tokenize_all, tokenize_counted, window, SkeletonEvent, TokenStream};
pub use temporal::{duration_label, time_token, TemporalConfig, TemporalMode, DEFAULT_SPACING_EDGES, TIME_PREFIX};
pub use vocab::{
    build_vocab, fused_token, quantile_token, scaffold_token, scaffold_tokens, TokenKind, VocabCounts,
    VocabMeta, Vocabulary, NUM, NUM_ID, PAD, PAD_ID, RESERVED, UNK, UNK_ID,
};

use crate::error::{Error, Result};
use crate::io;

pub const DEFAULT_WINDOW: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    Fused,
    Unfused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    Discrete,
    Soft,
    Xval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub fusion: Fusion,
    pub encoder: EncoderMode,
    pub temporal: TemporalConfig,
}

impl TokenizerConfig {
    pub fn new(fusion: Fusion, encoder: EncoderMode, mode: TemporalMode) -> Self {
        TokenizerConfig {
            fusion,
            encoder,
            temporal: TemporalConfig::new(mode),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.temporal.validate()?;
        if self.fusion == Fusion::Fused && self.encoder != EncoderMode::Discrete {
            return Err(Error::config(format!(
                "{:?} value encoding needs unfused tokens",
                self.encoder
            )));
        }
        Ok(())
    }
}

pub fn write_streams(path: &Path, streams: &[TokenStream]) -> Result<()> {
    io::write_jsonl(path, streams)
}

pub fn read_streams(path: &Path) -> Result<Vec<TokenStream>> {
    let streams: Vec<TokenStream> = io::read_jsonl(path)?;
    for s in &streams {
        s.check_aligned()?;
    }
    Ok(streams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::{cut_first_24h, Admission, Event};
    use crate::stats_fit::{fit_code_stats, fit_population_quantiles, SpecSet};
    use std::collections::BTreeMap;

    fn ev(t: i64, code: &str, v: Option<f64>) -> Event {
        Event {
            subject_id: "s".into(),
            admission_id: "a".into(),
            time: t,
            code: code.into(),
            numeric_value: v,
            ref_lo: None,
            ref_hi: None,
        }
    }

    fn adm(events: Vec<Event>) -> Admission {
        Admission {
            admission_id: "a".into(),
            subject_id: "s".into(),
            admit_time: 0,
            discharge_time: 100_000,
            demographics: BTreeMap::new(),
            events,
            truncated_at: None,
        }
    }

    fn spec_with_bins(code: &str, bins: usize) -> crate::stats_fit::QuantileSpec {
        let values: Vec<f64> = (0..1000).map(f64::from).collect();
        let mut s = fit_population_quantiles(code, &values, bins).unwrap();
        s.stats = Some(fit_code_stats(&values).unwrap());
        s
    }

    fn counting_fixture() -> (Admission, SpecSet) {
        let mut events: Vec<Event> = (0..5).map(|i| ev(i * 60, &format!("PROCEDURE//{i}"), None)).collect();
        events.push(ev(400, "LAB//1", Some(10.0)));
        events.push(ev(500, "LAB//2", Some(500.0)));
        let mut specs = SpecSet::new();
        specs.insert("LAB//1".into(), spec_with_bins("LAB//1", 10));
        specs.insert("LAB//2".into(), spec_with_bins("LAB//2", 10));
        (adm(events), specs)
    }

    #[test]
    fn vocab_counting_oracles() {
        let (a, specs) = counting_fixture();
        let un = build_vocab([&a], &specs, &TokenizerConfig::new(Fusion::Unfused, EncoderMode::Discrete, TemporalMode::EventOrder)).unwrap();
        assert_eq!(un.len(), 5 + 10 + 2 + 3);
        let fu = build_vocab([&a], &specs, &TokenizerConfig::new(Fusion::Fused, EncoderMode::Discrete, TemporalMode::EventOrder)).unwrap();
        assert_eq!(fu.len(), 5 + 20 + 3);
        let fu_tt = build_vocab([&a], &specs, &TokenizerConfig::new(Fusion::Fused, EncoderMode::Discrete, TemporalMode::TimeTokens)).unwrap();
        assert_eq!(fu_tt.len(), fu.len() + 13);
        let xv = build_vocab([&a], &specs, &TokenizerConfig::new(Fusion::Unfused, EncoderMode::Xval, TemporalMode::EventOrder)).unwrap();
        assert_eq!(xv.len(), 5 + 2 + 3);
        assert_eq!(un.id(PAD), Some(0));
        assert_eq!(un.id(UNK), Some(1));
        assert_eq!(un.id(NUM), Some(2));
        assert_eq!(un.id("LAB//1"), Some(3));
    }

    #[test]
    fn vocab_json_round_trip() {
        let (a, specs) = counting_fixture();
        let v = build_vocab([&a], &specs, &TokenizerConfig::new(Fusion::Fused, EncoderMode::Discrete, TemporalMode::TimeTokens)).unwrap();
        let back = Vocabulary::from_json(&v.to_json().unwrap()).unwrap();
        assert_eq!(back.tokens(), v.tokens());
        assert_eq!(back.kind(back.id("LAB//1//Q3").unwrap()), Some(&TokenKind::Fused { code_len: 6, bin: 3 }));
    }

    #[test]
    fn fused_with_soft_is_rejected() {
        let c = TokenizerConfig::new(Fusion::Fused, EncoderMode::Soft, TemporalMode::EventOrder);
        assert!(c.validate().is_err());
    }

    fn time_cfg() -> TokenizerConfig {
        TokenizerConfig::new(Fusion::Unfused, EncoderMode::Discrete, TemporalMode::TimeTokens)
    }

    #[test]
    fn three_minute_gap_has_no_time_token() {
        let a = adm(vec![ev(0, "PROCEDURE//a", None), ev(180, "PROCEDURE//b", None)]);
        let v = build_vocab([&a], &SpecSet::new(), &time_cfg()).unwrap();
        let (ts, n) = tokenize_counted(&a, &v, &SpecSet::new(), &time_cfg()).unwrap();
        assert_eq!(n, 0);
        assert_eq!(ts.len(), 2);
    }

    #[test]
    fn ninety_minute_gap_uses_one_to_two_hour_bin() {
        let a = adm(vec![ev(0, "PROCEDURE//a", None), ev(5400, "PROCEDURE//b", None)]);
        let v = build_vocab([&a], &SpecSet::new(), &time_cfg()).unwrap();
        let ts = tokenize(&a, &v, &SpecSet::new(), &time_cfg()).unwrap();
        let toks: Vec<&str> = ts.tokens.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(toks, ["PROCEDURE//a", "TIME//1h", "PROCEDURE//b"]);
    }

    #[test]
    fn scaffold_order_and_truncation() {
        let mut a = adm(vec![ev(10, "PROCEDURE//a", None)]);
        for (k, v) in [("sex", "F"), ("race", "WHITE"), ("admission_type", "URGENT"), ("discharge_type", "HOME")] {
            a.demographics.insert(k.into(), v.into());
        }
        let cfg = TokenizerConfig::new(Fusion::Fused, EncoderMode::Discrete, TemporalMode::EventOrder);
        let v = build_vocab([&a], &SpecSet::new(), &cfg).unwrap();
        let ts = tokenize(&a, &v, &SpecSet::new(), &cfg).unwrap();
        let toks: Vec<&str> = ts.tokens.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(toks, ["RACE//WHITE", "SEX//F", "ADMISSION_TYPE//URGENT", "PROCEDURE//a", "DISCHARGE_TYPE//HOME"]);
        let cut = tokenize(&cut_first_24h(&a), &v, &SpecSet::new(), &cfg).unwrap();
        assert_eq!(cut.len(), 4);
    }

    #[test]
    fn unseen_codes() {
        let (a, specs) = counting_fixture();
        let b = adm(vec![ev(0, "PROCEDURE//new", None), ev(10, "LAB//new", Some(1.0)), ev(20, "LAB//1", Some(3.0))]);
        for enc in [EncoderMode::Discrete, EncoderMode::Xval] {
            let cfg = TokenizerConfig::new(Fusion::Unfused, enc, TemporalMode::EventOrder);
            let v = build_vocab([&a], &specs, &cfg).unwrap();
            let ts = tokenize(&b, &v, &specs, &cfg).unwrap();
            match enc {
                EncoderMode::Discrete => assert_eq!(&ts.tokens[..2], &[UNK_ID, UNK_ID]),
                _ => {
                    assert_eq!(&ts.tokens[..3], &[UNK_ID, UNK_ID, NUM_ID]);
                    assert_eq!(ts.z[2], None);
                    assert!(ts.z[4].is_some());
                }
            }
        }
    }

    #[test]
    fn soft_channel_carries_weights() {
        let (a, specs) = counting_fixture();
        let cfg = TokenizerConfig::new(Fusion::Unfused, EncoderMode::Soft, TemporalMode::EventOrder);
        let v = build_vocab([&a], &specs, &cfg).unwrap();
        let ts = tokenize(&a, &v, &specs, &cfg).unwrap();
        let soft: Vec<_> = ts.soft.iter().flatten().collect();
        assert_eq!(soft.len(), 2);
        assert!(soft.iter().all(|(_, al)| (0.0..=1.0).contains(al)));
    }

    #[test]
    fn temporal_modes_share_tokens() {
        let (a, specs) = counting_fixture();
        let eo = TokenizerConfig::new(Fusion::Unfused, EncoderMode::Discrete, TemporalMode::EventOrder);
        let ar = TokenizerConfig::new(Fusion::Unfused, EncoderMode::Discrete, TemporalMode::AdmissionRelative);
        let v = build_vocab([&a], &specs, &eo).unwrap();
        let s1 = tokenize(&a, &v, &specs, &eo).unwrap();
        let s2 = tokenize(&a, &v, &specs, &ar).unwrap();
        assert_eq!(s1.tokens, s2.tokens);
        assert_eq!(s1.positions, (0..s1.len() as i64).collect::<Vec<_>>());
        assert!(s2.positions.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(s2.positions[5], 400 / 60);
    }

    #[test]
    fn detokenize_recovers_codes_and_bins() {
        let (a, specs) = counting_fixture();
        for fusion in [Fusion::Fused, Fusion::Unfused] {
            let cfg = TokenizerConfig::new(fusion, EncoderMode::Discrete, TemporalMode::TimeTokens);
            let v = build_vocab([&a], &specs, &cfg).unwrap();
            let ts = tokenize(&a, &v, &specs, &cfg).unwrap();
            let sk = detokenize(&ts.tokens, &v).unwrap();
            let oracle: Vec<SkeletonEvent> = a
                .events
                .iter()
                .map(|e| SkeletonEvent {
                    code: e.code.clone(),
                    bin: e.numeric_value.map(|x| specs[&e.code].assign_bin(x).unwrap()),
                })
                .collect();
            assert_eq!(sk, oracle);
        }
    }

    #[test]
    fn fused_and_unfused_lengths() {
        let (a, specs) = counting_fixture();
        let fc = TokenizerConfig::new(Fusion::Fused, EncoderMode::Discrete, TemporalMode::EventOrder);
        let uc = TokenizerConfig::new(Fusion::Unfused, EncoderMode::Discrete, TemporalMode::EventOrder);
        let f = tokenize(&a, &build_vocab([&a], &specs, &fc).unwrap(), &specs, &fc).unwrap();
        let u = tokenize(&a, &build_vocab([&a], &specs, &uc).unwrap(), &specs, &uc).unwrap();
        assert_eq!(u.len(), f.len() + 2);
    }

    fn stream_of(len: usize) -> TokenStream {
        TokenStream {
            admission_id: "a".into(),
            tokens: (0..len as u32).map(|i| 3 + i % 5).collect(),
            positions: (0..len as i64).collect(),
            soft: vec![None; len],
            z: (0..len).map(|i| Some(i as f64)).collect(),
            times: (0..len as i64).map(|i| i * 7).collect(),
        }
    }

    #[test]
    fn windows() {
        let s = stream_of(5000);
        let w = window(&s, DEFAULT_WINDOW).unwrap();
        assert_eq!(w.iter().map(TokenStream::len).collect::<Vec<_>>(), [4096, 904]);
        for (k, win) in w.iter().enumerate() {
            for i in 0..win.len() {
                let j = k * 4096 + i;
                assert_eq!(win.tokens[i], s.tokens[j]);
                assert_eq!(win.positions[i], s.positions[j]);
                assert_eq!(win.z[i], s.z[j]);
                assert_eq!(win.times[i], s.times[j]);
            }
        }
        let short = stream_of(100);
        assert_eq!(window(&short, 4096).unwrap(), vec![short]);
    }

    #[test]
    fn packing_cases() {
        let streams = [stream_of(10), stream_of(10)];
        let blocks = pack_with_gaps(&streams, &[7], 27).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].len(), 27);
        assert_eq!(blocks[0][10..17], [PAD_ID; 7]);
        let none = pack(&[stream_of(10), stream_of(10), stream_of(3)], 100, 0.0, 1).unwrap();
        assert_eq!(none[0].iter().take(23).filter(|&&t| t == PAD_ID).count(), 0);
        assert_eq!(pack(&streams, 27, 7.0, 5).unwrap(), pack(&streams, 27, 7.0, 5).unwrap());
    }

    #[test]
    fn poisson_gap_mean() {
        let g = poisson_gaps(100_000, 7.0, 42).unwrap();
        let mean = g.iter().sum::<usize>() as f64 / g.len() as f64;
        assert!((6.9..=7.1).contains(&mean), "{mean}");
    }

    #[test]
    fn length_reports() {
        assert_eq!(length_report("x", &[stream_of(93)]).median, 93.0);
        let r = length_report_from("x", &[10, 5000, 3000, 2000]);
        assert_eq!(r.frac_over[&4096], 0.25);
        assert_eq!(r.frac_over[&1024], 0.75);
        assert_eq!(r.histogram.iter().map(|h| h.count).sum::<usize>(), 4);
    }

    #[test]
    fn stream_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        let mut s = stream_of(4);
        s.soft[1] = Some((3, 0.1 + 0.2));
        write_streams(&p, &[s.clone()]).unwrap();
        assert_eq!(read_streams(&p).unwrap(), vec![s]);
    }
}

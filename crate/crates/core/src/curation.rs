//! Majority-vote pseudo-labels, informative-band filtering, solver rewards and
//! the line-delimited dataset format.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;
const DATASET_KIND: &str = "rzero-dataset";

/// Canonical answer string used for equality between answers.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnswerKey(String);

impl AnswerKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for AnswerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Content of the last balanced `\boxed{…}` in `text`.
pub fn last_boxed(text: &str) -> Option<&str> {
    const TAG: &str = "\\boxed{";
    let starts: Vec<usize> = text.match_indices(TAG).map(|(i, _)| i + TAG.len()).collect();
    starts.into_iter().rev().find_map(|start| {
        let mut depth = 1usize;
        for (off, ch) in text[start..].char_indices() {
            match ch {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&text[start..start + off]);
                    }
                }
                _ => {}
            }
        }
        None
    })
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Last `\boxed{…}` if present, else the last non-empty line; trimmed with
/// internal whitespace runs collapsed.
pub fn normalize_answer(raw: &str) -> AnswerKey {
    let body = match last_boxed(raw) {
        Some(b) => b,
        None => raw.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or(""),
    };
    AnswerKey(collapse_whitespace(body))
}

/// Equality hook for answers. The default is [`normalize_answer`].
pub trait AnswerNormalizer: Sync {
    fn key(&self, raw: &str) -> AnswerKey;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BoxedNormalizer;

impl AnswerNormalizer for BoxedNormalizer {
    fn key(&self, raw: &str) -> AnswerKey {
        normalize_answer(raw)
    }
}

/// Like [`BoxedNormalizer`] but canonicalizes integer answers, so `+07` and
/// `7` compare equal.
#[derive(Debug, Clone, Copy, Default)]
pub struct IntegerNormalizer;

impl AnswerNormalizer for IntegerNormalizer {
    fn key(&self, raw: &str) -> AnswerKey {
        let key = normalize_answer(raw);
        match key.0.parse::<i64>() {
            Ok(v) => AnswerKey(v.to_string()),
            Err(_) => key,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteResult {
    pub pseudo_label: AnswerKey,
    pub majority_count: usize,
    pub p_hat: f64,
    pub histogram: BTreeMap<AnswerKey, usize>,
    pub m: usize,
}

pub fn majority_vote(answers: &[String], m: usize) -> Result<VoteResult> {
    majority_vote_with(answers, m, &BoxedNormalizer)
}

/// Plurality over normalized answers; ties go to the lexicographically
/// smallest key. `p_hat = majority_count / m`.
pub fn majority_vote_with(
    answers: &[String],
    m: usize,
    normalizer: &dyn AnswerNormalizer,
) -> Result<VoteResult> {
    if answers.is_empty() || m == 0 {
        return Err(Error::invalid("majority vote over zero answers"));
    }
    if answers.len() != m {
        return Err(Error::invalid(format!("expected {m} answers, got {}", answers.len())));
    }
    let mut histogram: BTreeMap<AnswerKey, usize> = BTreeMap::new();
    for a in answers {
        *histogram.entry(normalizer.key(a)).or_insert(0) += 1;
    }
    // BTreeMap iterates keys ascending, so the first maximum wins ties
    let (label, count) = histogram
        .iter()
        .fold(None::<(&AnswerKey, usize)>, |best, (k, &c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((k, c)),
        })
        .expect("non-empty histogram");
    Ok(VoteResult {
        pseudo_label: label.clone(),
        majority_count: count,
        p_hat: count as f64 / m as f64,
        histogram,
        m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TooEasy,
    TooHard,
    None,
}

// absorbs the rounding in k/m so band edges stay inclusive
const BAND_SLACK: f64 = 1e-12;

/// Keeps `p_hat` iff `|p_hat − ½| ≤ delta`, both edges inclusive.
pub fn informative_band_filter(p_hat: f64, delta: f64) -> (bool, RejectReason) {
    if p_hat > 0.5 + delta + BAND_SLACK {
        (false, RejectReason::TooEasy)
    } else if p_hat < 0.5 - delta - BAND_SLACK {
        (false, RejectReason::TooHard)
    } else {
        (true, RejectReason::None)
    }
}

/// Binary verifiable reward: 1 iff the normalized answer equals the label.
pub fn solver_reward(answer: &str, pseudo_label: &AnswerKey) -> u8 {
    solver_reward_with(answer, pseudo_label, &BoxedNormalizer)
}

pub fn solver_reward_with(
    answer: &str,
    pseudo_label: &AnswerKey,
    normalizer: &dyn AnswerNormalizer,
) -> u8 {
    u8::from(&normalizer.key(answer) == pseudo_label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurationRecord {
    pub question_id: String,
    pub question_text: String,
    pub pseudo_label: AnswerKey,
    pub p_hat: f64,
    pub histogram: BTreeMap<AnswerKey, usize>,
    pub iteration: u32,
    pub kept: bool,
    pub reject_reason: RejectReason,
}

#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub question_id: String,
    pub question_text: String,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", deny_unknown_fields)]
pub enum BandFilter {
    Band { delta: f64 },
    /// Keep every question regardless of `p_hat`.
    PassThrough,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CurationStats {
    pub total: usize,
    pub kept: usize,
    pub too_easy: usize,
    pub too_hard: usize,
    /// Number of questions per majority count.
    pub majority_count_histogram: BTreeMap<usize, usize>,
}

impl CurationStats {
    pub fn from_records(records: &[CurationRecord]) -> Self {
        let mut s = CurationStats {
            total: records.len(),
            ..Default::default()
        };
        for r in records {
            match r.reject_reason {
                RejectReason::None => s.kept += 1,
                RejectReason::TooEasy => s.too_easy += 1,
                RejectReason::TooHard => s.too_hard += 1,
            }
            let count = r.histogram.get(&r.pseudo_label).copied().unwrap_or(0);
            *s.majority_count_histogram.entry(count).or_insert(0) += 1;
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct CuratedDataset {
    pub records: Vec<CurationRecord>,
    pub stats: CurationStats,
}

impl CuratedDataset {
    pub fn kept(&self) -> impl Iterator<Item = &CurationRecord> {
        self.records.iter().filter(|r| r.kept)
    }
}

/// Votes and filters every pool entry. Records keep pool order.
pub fn build_dataset(
    pool: &[PoolEntry],
    filter: BandFilter,
    iteration: u32,
    normalizer: &dyn AnswerNormalizer,
) -> Result<CuratedDataset> {
    let m = pool.first().map(|e| e.answers.len()).unwrap_or(0);
    if let Some(bad) = pool.iter().find(|e| e.answers.len() != m) {
        return Err(Error::invalid(format!(
            "question {} has {} answers, pool uses m = {m}",
            bad.question_id,
            bad.answers.len()
        )));
    }
    let records = pool
        .par_iter()
        .map(|e| {
            let vote = majority_vote_with(&e.answers, m, normalizer)?;
            let (kept, reject_reason) = match filter {
                BandFilter::Band { delta } => informative_band_filter(vote.p_hat, delta),
                BandFilter::PassThrough => (true, RejectReason::None),
            };
            Ok(CurationRecord {
                question_id: e.question_id.clone(),
                question_text: e.question_text.clone(),
                pseudo_label: vote.pseudo_label,
                p_hat: vote.p_hat,
                histogram: vote.histogram,
                iteration,
                kept,
                reject_reason,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let stats = CurationStats::from_records(&records);
    Ok(CuratedDataset { records, stats })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub kind: String,
    pub format_version: u32,
    pub iteration: u32,
    pub record_count: usize,
}

/// Writes the header line then one JSON record per line, via temp + rename.
pub fn write_dataset(path: &Path, iteration: u32, records: &[CurationRecord]) -> Result<()> {
    let header = DatasetHeader {
        kind: DATASET_KIND.into(),
        format_version: DATASET_FORMAT_VERSION,
        iteration,
        record_count: records.len(),
    };
    let mut buf = serde_json::to_vec(&header)?;
    buf.push(b'\n');
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    crate::io::write_atomic(path, &buf)
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<CurationRecord>)> {
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let first = lines.next().ok_or_else(|| bad("empty file".into()))??;
    let header: DatasetHeader =
        serde_json::from_str(&first).map_err(|e| bad(format!("header: {e}")))?;
    if header.kind != DATASET_KIND {
        return Err(bad(format!("not a dataset file (kind {:?})", header.kind)));
    }
    if header.format_version != DATASET_FORMAT_VERSION {
        return Err(bad(format!("unsupported format_version {}", header.format_version)));
    }
    let mut records = Vec::with_capacity(header.record_count);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| bad(format!("record {}: {e}", i + 1)))?);
    }
    if records.len() != header.record_count {
        return Err(bad(format!(
            "header announces {} records, found {}",
            header.record_count,
            records.len()
        )));
    }
    Ok((header, records))
}

/// Helper for callers writing to any sink (used by `inspect`).
pub fn write_stats<W: Write>(mut w: W, stats: &CurationStats) -> std::io::Result<()> {
    writeln!(
        w,
        "records: {}  kept: {}  too_easy: {}  too_hard: {}",
        stats.total, stats.kept, stats.too_easy, stats.too_hard
    )?;
    for (count, n) in &stats.majority_count_histogram {
        writeln!(w, "  majority_count {count:>3}: {n}")?;
    }
    Ok(())
}

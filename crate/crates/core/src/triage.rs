//! Per-sequence score aggregation, ranking, rank comparison and the
//! JSON-lines score/disposition store.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::NoveltyMap;

/// Longest accepted disposition note, in characters.
pub const MAX_NOTE_CHARS: usize = 2000;

#[derive(Debug, Error)]
pub enum TriageError {
    #[error("novelty map has no pixels")]
    EmptyMap,
    #[error("scores come from different models ({0} and {1})")]
    MixedModels(String, String),
    #[error("rankings cover different sequence sets: {0}")]
    IdSetMismatch(String),
    #[error("need at least two sequences to correlate rankings, got {0}")]
    TooShort(usize),
    #[error("note is {0} characters; the limit is {MAX_NOTE_CHARS}")]
    NoteTooLong(usize),
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Aggregate statistics of one sequence's novelty map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub sequence_id: String,
    pub model_fingerprint: String,
    pub max: f64,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    /// Nearest-rank 99th percentile.
    pub p99: f64,
    pub pixel_count: u64,
    /// `(row, col)` of the first maximum in row-major order.
    pub argmax: (usize, usize),
}

impl SequenceScore {
    pub fn value(&self, key: RankKey) -> f64 {
        match key {
            RankKey::Max => self.max,
            RankKey::Mean => self.mean,
            RankKey::Variance => self.variance,
            RankKey::P99 => self.p99,
        }
    }
}

pub fn aggregate(map: &NoveltyMap) -> Result<SequenceScore, TriageError> {
    let scores = &map.scores;
    if scores.is_empty() {
        return Err(TriageError::EmptyMap);
    }
    let count = scores.len() as f64;
    let mut max = scores[0];
    let mut argmax = 0usize;
    let mut sum = 0.0;
    for (i, &s) in scores.iter().enumerate() {
        if s > max {
            max = s;
            argmax = i;
        }
        sum += s;
    }
    let mean = sum / count;
    let mut sq = 0.0;
    for &s in scores {
        let d = s - mean;
        sq += d * d;
    }
    let variance = sq / count;
    let width = map.width.max(1);
    Ok(SequenceScore {
        sequence_id: map.sequence_id.clone(),
        model_fingerprint: map.model_fingerprint.clone(),
        max,
        mean,
        variance,
        p99: crate::stats::nearest_rank(scores, 990),
        pixel_count: scores.len() as u64,
        argmax: (argmax / width, argmax % width),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankKey {
    #[default]
    Max,
    Mean,
    Variance,
    P99,
}

impl RankKey {
    pub const ALL: [RankKey; 4] = [RankKey::Max, RankKey::Mean, RankKey::Variance, RankKey::P99];

    pub fn as_str(self) -> &'static str {
        match self {
            RankKey::Max => "max",
            RankKey::Mean => "mean",
            RankKey::Variance => "variance",
            RankKey::P99 => "p99",
        }
    }
}

impl fmt::Display for RankKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RankKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RankKey::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown sort key {s:?} (expected max, mean, variance or p99)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortOrder {
    #[default]
    Desc,
    Asc,
}

impl fmt::Display for SortOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SortOrder::Desc => "desc",
            SortOrder::Asc => "asc",
        })
    }
}

impl FromStr for SortOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desc" => Ok(SortOrder::Desc),
            "asc" => Ok(SortOrder::Asc),
            other => Err(format!("unknown order {other:?} (expected desc or asc)")),
        }
    }
}

/// Sort by `key` in `order`, ties broken by ascending sequence id.
pub fn rank(scores: &[SequenceScore], key: RankKey, order: SortOrder) -> Result<Vec<SequenceScore>, TriageError> {
    if let Some(first) = scores.first() {
        if let Some(other) = scores.iter().find(|s| s.model_fingerprint != first.model_fingerprint) {
            return Err(TriageError::MixedModels(
                first.model_fingerprint.clone(),
                other.model_fingerprint.clone(),
            ));
        }
    }
    let mut out = scores.to_vec();
    out.sort_by(|a, b| compare(a, b, key, order));
    Ok(out)
}

fn compare(a: &SequenceScore, b: &SequenceScore, key: RankKey, order: SortOrder) -> Ordering {
    let by_value = a.value(key).total_cmp(&b.value(key));
    let by_value = match order {
        SortOrder::Asc => by_value,
        SortOrder::Desc => by_value.reverse(),
    };
    by_value.then_with(|| a.sequence_id.cmp(&b.sequence_id))
}

/// Spearman's ρ between two strict orderings of the same ids.
pub fn spearman<S: AsRef<str>>(rank_a: &[S], rank_b: &[S]) -> Result<f64, TriageError> {
    let m = rank_a.len();
    if m != rank_b.len() {
        return Err(TriageError::IdSetMismatch(format!(
            "{m} ids versus {} ids",
            rank_b.len()
        )));
    }
    let pos_b: HashMap<&str, usize> = rank_b.iter().enumerate().map(|(i, s)| (s.as_ref(), i)).collect();
    if pos_b.len() != m {
        return Err(TriageError::IdSetMismatch("duplicate id in second ranking".into()));
    }
    let mut seen = HashSet::with_capacity(m);
    let mut d2: u128 = 0;
    for (i, id) in rank_a.iter().enumerate() {
        let id = id.as_ref();
        if !seen.insert(id) {
            return Err(TriageError::IdSetMismatch(format!(
                "duplicate id {id} in first ranking"
            )));
        }
        let j = *pos_b
            .get(id)
            .ok_or_else(|| TriageError::IdSetMismatch(format!("{id} missing from second ranking")))?;
        let d = i.abs_diff(j) as u128;
        d2 += d * d;
    }
    if m < 2 {
        return Err(TriageError::TooShort(m));
    }
    let m = m as u128;
    // Integer numerator and denominator keep the exact cases exact.
    let denom = m * (m * m - 1);
    Ok(1.0 - (6 * d2) as f64 / denom as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DispositionState {
    #[default]
    Unreviewed,
    Reviewed,
    Flagged,
}

impl FromStr for DispositionState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unreviewed" => Ok(DispositionState::Unreviewed),
            "reviewed" => Ok(DispositionState::Reviewed),
            "flagged" => Ok(DispositionState::Flagged),
            other => Err(format!(
                "invalid state {other:?} (expected unreviewed, reviewed or flagged)"
            )),
        }
    }
}

/// An analyst's verdict on a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disposition {
    pub sequence_id: String,
    pub state: DispositionState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub updated_at: DateTime<Utc>,
}

impl Disposition {
    pub fn new(
        sequence_id: impl Into<String>,
        state: DispositionState,
        note: Option<String>,
        updated_at: DateTime<Utc>,
    ) -> Result<Self, TriageError> {
        if let Some(n) = &note {
            let chars = n.chars().count();
            if chars > MAX_NOTE_CHARS {
                return Err(TriageError::NoteTooLong(chars));
            }
        }
        Ok(Self {
            sequence_id: sequence_id.into(),
            state,
            note,
            updated_at,
        })
    }
}

/// One line of the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DbLine {
    Score(SequenceScore),
    Disposition(Disposition),
}

/// In-memory snapshot of a score database.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreDb {
    /// Scores in file order; a later line for the same (id, model) replaces
    /// an earlier one in place.
    pub scores: Vec<SequenceScore>,
    dispositions: HashMap<String, Disposition>,
}

impl ScoreDb {
    pub fn new() -> Self {
        Self::default()
    }

    /// Load a JSON-lines store; a missing file is an empty store.
    pub fn load(path: &Path) -> Result<Self, TriageError> {
        match fs::read_to_string(path) {
            Ok(text) => Self::parse(&text, &path.display().to_string()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Self::new()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, TriageError> {
        let mut db = Self::new();
        let mut index: HashMap<(String, String), usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let line: DbLine = serde_json::from_str(raw).map_err(|e| TriageError::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            match line {
                DbLine::Score(s) => {
                    let k = (s.sequence_id.clone(), s.model_fingerprint.clone());
                    match index.get(&k) {
                        Some(&at) => db.scores[at] = s,
                        None => {
                            index.insert(k, db.scores.len());
                            db.scores.push(s);
                        }
                    }
                }
                DbLine::Disposition(d) => db.apply_disposition(d),
            }
        }
        Ok(db)
    }

    /// Last write wins by `updated_at`; equal timestamps resolve to the later call.
    fn apply_disposition(&mut self, d: Disposition) {
        match self.dispositions.get(&d.sequence_id) {
            Some(prev) if prev.updated_at > d.updated_at => {}
            _ => {
                self.dispositions.insert(d.sequence_id.clone(), d);
            }
        }
    }

    pub fn disposition(&self, sequence_id: &str) -> Option<&Disposition> {
        self.dispositions.get(sequence_id)
    }

    pub fn state_of(&self, sequence_id: &str) -> DispositionState {
        self.disposition(sequence_id).map(|d| d.state).unwrap_or_default()
    }

    /// Dispositions sorted by sequence id.
    pub fn dispositions(&self) -> Vec<&Disposition> {
        let mut v: Vec<_> = self.dispositions.values().collect();
        v.sort_by(|a, b| a.sequence_id.cmp(&b.sequence_id));
        v
    }

    /// Scores produced under one model.
    pub fn scores_for_model(&self, fingerprint: &str) -> Vec<SequenceScore> {
        self.scores
            .iter()
            .filter(|s| s.model_fingerprint == fingerprint)
            .cloned()
            .collect()
    }

    /// Replace all scores, keeping dispositions.
    pub fn set_scores(&mut self, scores: Vec<SequenceScore>) {
        self.scores = scores;
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.scores {
            out.push_str(&serde_json::to_string(&DbLine::Score(s.clone())).expect("score serializes"));
            out.push('\n');
        }
        for d in self.dispositions() {
            out.push_str(&serde_json::to_string(&DbLine::Disposition(d.clone())).expect("disposition serializes"));
            out.push('\n');
        }
        out
    }

    /// Rewrite the whole store atomically.
    pub fn persist(&self, path: &Path) -> Result<(), TriageError> {
        crate::io_util::write_atomic(path, self.to_jsonl().as_bytes())?;
        Ok(())
    }

    /// Append one disposition line to the store and apply it to this snapshot.
    pub fn upsert_disposition(&mut self, path: &Path, d: Disposition) -> Result<(), TriageError> {
        let mut line = serde_json::to_string(&DbLine::Disposition(d.clone())).expect("disposition serializes");
        line.push('\n');
        let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        self.apply_disposition(d);
        Ok(())
    }
}

/// Write a ranking as CSV with header `sequence_id,rank,key,value`.
/// `rows` pairs each score with its 1-based position in the full ranking.
pub fn write_ranking_csv<W: Write>(out: W, rows: &[(usize, &SequenceScore)], key: RankKey) -> Result<(), TriageError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sequence_id", "rank", "key", "value"])?;
    for (pos, s) in rows {
        w.write_record([
            s.sequence_id.as_str(),
            &pos.to_string(),
            key.as_str(),
            &s.value(key).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Read a ranking CSV back into ids ordered by the `rank` column.
pub fn read_ranking_csv(path: &Path) -> Result<Vec<String>, TriageError> {
    let origin = path.display().to_string();
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TriageError::Parse {
                path: origin.clone(),
                line: 1,
                message: format!("missing column {name}"),
            })
    };
    let (id_col, rank_col) = (col("sequence_id")?, col("rank")?);
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |message: String| TriageError::Parse {
            path: origin.clone(),
            line,
            message,
        };
        let id = rec.get(id_col).ok_or_else(|| bad("missing sequence_id".into()))?;
        let pos: usize = rec
            .get(rank_col)
            .ok_or_else(|| bad("missing rank".into()))?
            .parse()
            .map_err(|e| bad(format!("bad rank: {e}")))?;
        rows.push((pos, id.to_string()));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    Ok(rows.into_iter().map(|(_, id)| id).collect())
}

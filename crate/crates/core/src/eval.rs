//! Batch QA evaluation: dataset loading, EM/F1 aggregation and the
//! multi-hop / single-hop / overall report.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rewards::{best_exact_match, best_f1};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub question: String,
    pub golden_answers: Vec<String>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId {
        path: String,
        line: usize,
        id: String,
    },
    #[error("{path}:{line}: record {id:?} has no golden answers")]
    EmptyGolds {
        path: String,
        line: usize,
        id: String,
    },
    #[error("no episode for record {0:?}")]
    MissingEpisode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads a JSON-lines dataset (`id`, `question`, `golden_answers`).
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>, EvalError> {
    let display = path.display().to_string();
    let reader = BufReader::new(File::open(path)?);
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            path: display.clone(),
            line: lineno,
            message: e.to_string(),
        })?;
        if rec.golden_answers.is_empty() {
            return Err(EvalError::EmptyGolds {
                path: display,
                line: lineno,
                id: rec.id,
            });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(EvalError::DuplicateId {
                path: display,
                line: lineno,
                id: rec.id,
            });
        }
        records.push(rec);
    }
    Ok(records)
}

/// Percentages over one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub em: f64,
    pub f1: f64,
    pub n: usize,
}

impl DatasetMetrics {
    /// Mean of EM and F1, the per-dataset contribution to report averages.
    pub fn mean(&self) -> f64 {
        (self.em + self.f1) / 2.0
    }
}

/// Scores predictions against a dataset. `predict` maps a record id to its
/// predicted answer, `Ok(None)` meaning the episode produced no answer.
pub fn evaluate<F>(records: &[DatasetRecord], mut predict: F) -> Result<DatasetMetrics, EvalError>
where
    F: FnMut(&str) -> Option<Option<String>>,
{
    let mut em = 0.0;
    let mut f1 = 0.0;
    for rec in records {
        let pred = predict(&rec.id).ok_or_else(|| EvalError::MissingEpisode(rec.id.clone()))?;
        if let Some(pred) = pred {
            em += f64::from(u8::from(best_exact_match(&pred, &rec.golden_answers)));
            f1 += best_f1(&pred, &rec.golden_answers);
        }
    }
    let n = records.len();
    let pct = |x: f64| if n == 0 { 0.0 } else { 100.0 * x / n as f64 };
    Ok(DatasetMetrics {
        em: pct(em),
        f1: pct(f1),
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HopGroup {
    MultiHop,
    SingleHop,
    Other,
}

impl HopGroup {
    /// Classifies the standard benchmark names; anything else is `Other`.
    pub fn for_dataset(name: &str) -> Self {
        let key: String = name
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "hotpotqa" | "2wikimqa" | "2wikimultihopqa" | "musique" | "bamboogle" => {
                HopGroup::MultiHop
            }
            "nq" | "naturalquestions" | "triviaqa" | "popqa" => HopGroup::SingleHop,
            _ => HopGroup::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub group: HopGroup,
    #[serde(flatten)]
    pub metrics: DatasetMetrics,
}

/// Group averages are unweighted means of per-dataset `(EM + F1) / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_dataset: BTreeMap<String, DatasetEntry>,
    pub multi_hop_avg: Option<f64>,
    pub single_hop_avg: Option<f64>,
    pub overall_avg: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    pub fn new<I, S>(datasets: I) -> Self
    where
        I: IntoIterator<Item = (S, DatasetMetrics)>,
        S: Into<String>,
    {
        let per_dataset: BTreeMap<String, DatasetEntry> = datasets
            .into_iter()
            .map(|(name, metrics)| {
                let name = name.into();
                let group = HopGroup::for_dataset(&name);
                (name, DatasetEntry { group, metrics })
            })
            .collect();
        let avg = |group: Option<HopGroup>| {
            mean(
                per_dataset
                    .values()
                    .filter(|e| group.is_none_or(|g| e.group == g))
                    .map(|e| e.metrics.mean()),
            )
        };
        Self {
            multi_hop_avg: avg(Some(HopGroup::MultiHop)),
            single_hop_avg: avg(Some(HopGroup::SingleHop)),
            overall_avg: avg(None),
            per_dataset,
        }
    }

    /// Plain-text table for terminals.
    pub fn render_table(&self) -> String {
        let width = self
            .per_dataset
            .keys()
            .map(String::len)
            .max()
            .unwrap_or(7)
            .max(7);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}",
            "dataset", "n", "EM", "F1", "group"
        );
        for (name, e) in &self.per_dataset {
            let group = match e.group {
                HopGroup::MultiHop => "multi",
                HopGroup::SingleHop => "single",
                HopGroup::Other => "-",
            };
            let _ = writeln!(
                out,
                "{name:<width$}  {:>6}  {:>6.1}  {:>6.1}  {group:>6}",
                e.metrics.n, e.metrics.em, e.metrics.f1
            );
        }
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.1}"));
        let _ = writeln!(out, "multi-hop avg: {}", fmt(self.multi_hop_avg));
        let _ = writeln!(out, "single-hop avg: {}", fmt(self.single_hop_avg));
        let _ = writeln!(out, "overall avg: {}", fmt(self.overall_avg));
        out
    }
}

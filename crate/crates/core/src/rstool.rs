//! Evidence sharing: export the evidence box of a finished episode and let a
//! downstream model answer from it without redoing any search.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, GenerationBackend, GenerationRequest};
use crate::rollout::Episode;

const PROMPT_HEAD: &str = "Answer the question based on the given passages. \
Only give me the answer and do not output any other words.\n\
The following are given passages: ";
const PROMPT_QUESTION: &str = "\nQuestion: ";
const PROMPT_TAIL: &str = "\nAnswer:";

/// The evidence prompt with its two slots shown as `{evidence}` and `{query}`.
pub const EVIDENCE_TEMPLATE: &str = "Answer the question based on the given passages. \
Only give me the answer and do not output any other words.\n\
The following are given passages: {evidence}\n\
Question: {query}\n\
Answer:";

/// Instantiates the evidence prompt. The evidence reward and downstream
/// answering both go through this function.
pub fn build_evidence_prompt(question: &str, evidence: &str) -> String {
    let mut out = String::with_capacity(
        PROMPT_HEAD.len()
            + evidence.len()
            + PROMPT_QUESTION.len()
            + question.len()
            + PROMPT_TAIL.len(),
    );
    out.push_str(PROMPT_HEAD);
    out.push_str(evidence);
    out.push_str(PROMPT_QUESTION);
    out.push_str(question);
    out.push_str(PROMPT_TAIL);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub question: String,
    pub evidence: String,
    pub source_episode: String,
    pub policy_family: String,
}

#[derive(Debug, Error)]
pub enum RsToolError {
    #[error("evidence record from {0} has empty evidence")]
    EmptyEvidence(String),
    #[error("downstream backend failed: {0}")]
    Backend(#[from] BackendError),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Settings for the downstream answering call.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerConfig {
    pub temperature: f64,
    pub max_new_bytes: usize,
}

impl Default for AnswerConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            max_new_bytes: 512,
        }
    }
}

/// The episode's evidence as a portable record, when it has exactly one
/// well-formed nonempty evidence box.
pub fn export_evidence(episode: &Episode) -> Option<EvidenceRecord> {
    let evidence = episode.trajectory.evidence()?;
    if evidence.trim().is_empty() {
        return None;
    }
    Some(EvidenceRecord {
        question: episode.question.clone(),
        evidence,
        source_episode: episode.id.clone(),
        policy_family: episode.policy_family.clone(),
    })
}

/// Asks `downstream` to answer from the record's evidence. The full reply
/// is the answer.
pub fn answer_with_evidence(
    record: &EvidenceRecord,
    downstream: &dyn GenerationBackend,
    cfg: &AnswerConfig,
) -> Result<String, RsToolError> {
    if record.evidence.trim().is_empty() {
        return Err(RsToolError::EmptyEvidence(record.source_episode.clone()));
    }
    let req = GenerationRequest {
        system_prompt: String::new(),
        transcript: build_evidence_prompt(&record.question, &record.evidence),
        stop_sequences: Vec::new(),
        temperature: cfg.temperature,
        max_new_bytes: cfg.max_new_bytes,
        seed: None,
    };
    Ok(downstream.generate(&record.source_episode, &req)?.text)
}

pub fn load_evidence(path: &Path) -> Result<Vec<EvidenceRecord>, RsToolError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| RsToolError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

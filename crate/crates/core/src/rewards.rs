//! Rule-based rewards and QA metrics.
//!
//! A trajectory earns three signals that are summed into its total reward:
//!
//! ```text
//! answer   = max_gold F1(answer box, gold)
//! evidence = max_gold F1(cross-family reply to the evidence prompt, gold)
//! format   = (1 - S)(ge + ga*A) + S(ge*E + ga*A)
//! total    = answer + evidence + format
//! ```
//!
//! where `S`, `A`, `E` are the [`FormatFlags`] indicators for "retrieval was
//! triggered", "exactly one answer box" and "exactly one evidence box".

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, GenerationBackend, GenerationRequest};
use crate::protocol::{extract_answer, extract_evidence, format_flags, FormatFlags, Trajectory};
use crate::rstool::build_evidence_prompt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub gamma_e: f64,
    pub gamma_a: f64,
    /// Floor for the group standard deviation in [`group_advantage`].
    pub group_eps: f64,
    /// When false the evidence reward is fixed at 0 and the cross-family
    /// backend is never called.
    pub evidence_reward: bool,
    pub cross_family_temperature: f64,
    pub cross_family_max_bytes: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            gamma_e: 0.2,
            gamma_a: 0.2,
            group_eps: 1e-6,
            evidence_reward: true,
            cross_family_temperature: 0.1,
            cross_family_max_bytes: 512,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("invalid reward config: {0}")]
    Config(String),
    #[error("cross-family backend failed for episode {episode}: {source}")]
    Backend {
        episode: String,
        #[source]
        source: BackendError,
    },
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.gamma_e.is_finite() && self.gamma_e >= 0.0) {
            return Err(RewardError::Config(format!(
                "gamma_e must be >= 0, got {}",
                self.gamma_e
            )));
        }
        if !(self.gamma_a.is_finite() && self.gamma_a >= 0.0) {
            return Err(RewardError::Config(format!(
                "gamma_a must be >= 0, got {}",
                self.gamma_a
            )));
        }
        if !(self.group_eps.is_finite() && self.group_eps > 0.0) {
            return Err(RewardError::Config(format!(
                "group_eps must be > 0, got {}",
                self.group_eps
            )));
        }
        if !(self.cross_family_temperature.is_finite() && self.cross_family_temperature >= 0.0) {
            return Err(RewardError::Config(
                "cross_family_temperature must be finite and >= 0".into(),
            ));
        }
        if self.cross_family_max_bytes == 0 {
            return Err(RewardError::Config(
                "cross_family_max_bytes must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub answer: f64,
    pub evidence: f64,
    pub format: f64,
    pub total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_model_answer: Option<String>,
}

impl RewardBreakdown {
    pub fn new(
        answer: f64,
        evidence: f64,
        format: f64,
        cross_model_answer: Option<String>,
    ) -> Self {
        Self {
            answer,
            evidence,
            format,
            total: answer + evidence + format,
            cross_model_answer,
        }
    }
}

/// Standard open-domain QA normalization: lowercase, strip ASCII
/// punctuation, drop the articles "a", "an", "the", split on whitespace.
pub fn normalize_answer(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let stripped: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    stripped
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .map(str::to_owned)
        .collect()
}

/// Token-level F1 over normalized token multisets. Empty on either side
/// scores 0.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let pred = normalize_answer(pred);
    let gold = normalize_answer(gold);
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    2.0 * overlap as f64 / (pred.len() + gold.len()) as f64
}

/// True iff both sides normalize to the same nonempty token list.
pub fn exact_match(pred: &str, gold: &str) -> bool {
    let pred = normalize_answer(pred);
    !pred.is_empty() && pred == normalize_answer(gold)
}

pub fn best_f1<S: AsRef<str>>(pred: &str, golds: &[S]) -> f64 {
    golds
        .iter()
        .map(|g| token_f1(pred, g.as_ref()))
        .fold(0.0, f64::max)
}

pub fn best_exact_match<S: AsRef<str>>(pred: &str, golds: &[S]) -> bool {
    golds.iter().any(|g| exact_match(pred, g.as_ref()))
}

pub fn answer_reward<S: AsRef<str>>(t: &Trajectory, golds: &[S]) -> f64 {
    extract_answer(t).map_or(0.0, |a| best_f1(&a, golds))
}

/// Scores the evidence box by letting a frozen model from a different
/// family answer from it. Returns the reward and that model's reply.
///
/// Without a well-formed evidence box no call is made and the reward is 0.
pub fn evidence_reward<S: AsRef<str>>(
    episode: &str,
    question: &str,
    t: &Trajectory,
    golds: &[S],
    cross_family: &dyn GenerationBackend,
    cfg: &RewardConfig,
) -> Result<(f64, Option<String>), RewardError> {
    let Some(evidence) = extract_evidence(t) else {
        return Ok((0.0, None));
    };
    let req = GenerationRequest {
        system_prompt: String::new(),
        transcript: build_evidence_prompt(question, &evidence),
        stop_sequences: Vec::new(),
        temperature: cfg.cross_family_temperature,
        max_new_bytes: cfg.cross_family_max_bytes,
        seed: None,
    };
    let reply = cross_family
        .generate(episode, &req)
        .map_err(|source| RewardError::Backend {
            episode: episode.to_owned(),
            source,
        })?
        .text;
    Ok((best_f1(&reply, golds), Some(reply)))
}

pub fn format_reward(flags: FormatFlags, cfg: &RewardConfig) -> f64 {
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    let s = ind(flags.retrieval_triggered);
    let a = ind(flags.answer_well_formed);
    let e = ind(flags.evidence_well_formed);
    (1.0 - s) * (cfg.gamma_e + cfg.gamma_a * a) + s * (cfg.gamma_e * e + cfg.gamma_a * a)
}

pub fn total_reward<S: AsRef<str>>(
    episode: &str,
    t: &Trajectory,
    golds: &[S],
    cfg: &RewardConfig,
    cross_family: &dyn GenerationBackend,
) -> Result<RewardBreakdown, RewardError> {
    let answer = answer_reward(t, golds);
    let (evidence, cross) = if cfg.evidence_reward {
        evidence_reward(episode, &t.question, t, golds, cross_family, cfg)?
    } else {
        (0.0, None)
    };
    let format = format_reward(format_flags(t), cfg);
    Ok(RewardBreakdown::new(answer, evidence, format, cross))
}

/// Group-relative advantages: `(r - mean) / max(std, eps)` with population std.
pub fn group_advantage(rewards: &[f64], cfg: &RewardConfig) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt().max(cfg.group_eps);
    rewards.iter().map(|r| (r - mean) / denom).collect()
}

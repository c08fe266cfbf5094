//! The interleaved reasoning–search rollout loop.
//!
//! Each step sends the system prompt and the transcript so far to the
//! policy with `</search>` as a stop sequence. A completed search box is
//! answered by appending an observation block; an answer box, the end of
//! generation, or a guard ends the episode. The finished rollout is parsed
//! with the engine's own record of injected spans, scored, and masked.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, FinishReason, GenerationBackend, GenerationRequest};
use crate::eval::DatasetRecord;
use crate::masking::{compute_loss_mask, LossMask};
use crate::protocol::{
    detect_completed_search, first_answer_box, parse_with_injections, ByteRange, Origin,
    ProtocolError, SegmentKind, TagKind, Trajectory, SYSTEM_TEMPLATE,
};
use crate::retrieval::{render_observation, RetrievalError, Retriever};
use crate::rewards::{group_advantage, total_reward, RewardBreakdown, RewardConfig, RewardError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalErrorPolicy {
    Abort,
    #[default]
    EmptyObservation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendErrorPolicy {
    Abort,
    /// Keep the partial rollout as an episode with zero rewards.
    #[default]
    Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub top_k: usize,
    pub max_search_rounds: usize,
    pub max_total_bytes: usize,
    pub samples_per_prompt: usize,
    pub temperature: f64,
    pub on_retrieval_error: RetrievalErrorPolicy,
    pub on_backend_error: BackendErrorPolicy,
    pub workers: usize,
    pub seed: u64,
    pub system_template: String,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            top_k: 3,
            max_search_rounds: 8,
            max_total_bytes: 32_768,
            samples_per_prompt: 5,
            temperature: 1.0,
            on_retrieval_error: RetrievalErrorPolicy::EmptyObservation,
            on_backend_error: BackendErrorPolicy::Record,
            workers: 1,
            seed: 0,
            system_template: SYSTEM_TEMPLATE.to_owned(),
        }
    }
}

impl RolloutConfig {
    /// Settings used for evaluation runs: top-5 retrieval, one low-temperature sample.
    pub fn evaluation() -> Self {
        Self {
            top_k: 5,
            samples_per_prompt: 1,
            temperature: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RolloutError> {
        let positive = [
            ("top_k", self.top_k),
            ("max_search_rounds", self.max_search_rounds),
            ("max_total_bytes", self.max_total_bytes),
            ("samples_per_prompt", self.samples_per_prompt),
            ("workers", self.workers),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(RolloutError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(RolloutError::Config(
                "temperature must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answer,
    /// Generation ended without an answer box.
    EndOfMessage,
    RoundLimit,
    ByteLimit,
    BackendError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub search_rounds: usize,
    pub valid_searches: usize,
    pub total_bytes: usize,
    pub terminated_by: Termination,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// `{record_id}#{sample}`.
    pub id: String,
    pub record_id: String,
    pub sample: usize,
    pub question: String,
    pub golden_answers: Vec<String>,
    pub policy_family: String,
    pub trajectory: Trajectory,
    pub rewards: RewardBreakdown,
    pub mask: LossMask,
    pub stats: EpisodeStats,
    pub advantage: Option<f64>,
}

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("invalid rollout config: {0}")]
    Config(String),
    #[error("policy and cross-family backends share the family label {0:?}")]
    FamilyCollision(String),
    #[error("policy backend failed for episode {episode}: {source}")]
    Backend {
        episode: String,
        #[source]
        source: BackendError,
    },
    #[error("retrieval failed for episode {episode}: {source}")]
    Retrieval {
        episode: String,
        #[source]
        source: RetrievalError,
    },
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("episode {episode}: {source}")]
    Protocol {
        episode: String,
        #[source]
        source: ProtocolError,
    },
}

/// Family labels compare case- and whitespace-insensitively.
pub fn same_family(a: &str, b: &str) -> bool {
    a.trim().eq_ignore_ascii_case(b.trim())
}

pub fn episode_id(record_id: &str, sample: usize) -> String {
    format!("{record_id}#{sample}")
}

/// Stable per-episode sampling seed.
fn episode_seed(seed: u64, id: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Episodes for one prompt plus their group-relative advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub episodes: Vec<Episode>,
    pub advantages: Vec<f64>,
}

pub struct RolloutEngine<'a> {
    policy: &'a dyn GenerationBackend,
    retriever: &'a dyn Retriever,
    cross_family: &'a dyn GenerationBackend,
    config: RolloutConfig,
    rewards: RewardConfig,
    pool: rayon::ThreadPool,
}

impl<'a> RolloutEngine<'a> {
    pub fn new(
        policy: &'a dyn GenerationBackend,
        retriever: &'a dyn Retriever,
        cross_family: &'a dyn GenerationBackend,
        config: RolloutConfig,
        rewards: RewardConfig,
    ) -> Result<Self, RolloutError> {
        config.validate()?;
        rewards.validate()?;
        if same_family(policy.family(), cross_family.family()) {
            return Err(RolloutError::FamilyCollision(policy.family().to_owned()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| RolloutError::Config(format!("worker pool: {e}")))?;
        Ok(Self {
            policy,
            retriever,
            cross_family,
            config,
            rewards,
            pool,
        })
    }

    pub fn config(&self) -> &RolloutConfig {
        &self.config
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.rewards
    }

    /// Runs one episode to completion.
    pub fn run_episode(
        &self,
        id: &str,
        question: &str,
        golds: &[String],
    ) -> Result<Episode, RolloutError> {
        let prefix = format!("{question}\n");
        let mut raw = String::new();
        let mut injected: Vec<ByteRange> = Vec::new();
        let mut search_rounds = 0;
        let mut valid_searches = 0;
        let seed = episode_seed(self.config.seed, id);

        let terminated_by = loop {
            if raw.len() >= self.config.max_total_bytes {
                break Termination::ByteLimit;
            }
            let req = GenerationRequest {
                system_prompt: self.config.system_template.clone(),
                transcript: format!("{prefix}{raw}"),
                stop_sequences: vec![TagKind::Search.close().to_owned()],
                temperature: self.config.temperature,
                max_new_bytes: self.config.max_total_bytes - raw.len(),
                seed: Some(seed),
            };
            let generated = match self.policy.generate(id, &req) {
                Ok(g) => g,
                Err(source) => match self.config.on_backend_error {
                    BackendErrorPolicy::Abort => {
                        return Err(RolloutError::Backend {
                            episode: id.to_owned(),
                            source,
                        })
                    }
                    BackendErrorPolicy::Record => break Termination::BackendError,
                },
            };
            let chunk = generated.text;
            let search = detect_completed_search(&chunk);
            let answer = first_answer_box(&chunk);

            let answer_first = match (&search, answer) {
                (_, None) => false,
                (None, Some(_)) => true,
                (Some((query, end)), Some(ans)) => {
                    let search_start = end
                        - TagKind::Search.close().len()
                        - query.len()
                        - TagKind::Search.open().len();
                    ans.end <= search_start
                }
            };
            if answer_first {
                raw.push_str(&chunk);
                break Termination::Answer;
            }

            let Some((query, end)) = search else {
                raw.push_str(&chunk);
                break match generated.finished_by {
                    FinishReason::LengthLimit => Termination::ByteLimit,
                    FinishReason::StopSequence | FinishReason::EndOfMessage => {
                        Termination::EndOfMessage
                    }
                };
            };

            raw.push_str(&chunk[..end]);
            if search_rounds == self.config.max_search_rounds {
                break Termination::RoundLimit;
            }
            search_rounds += 1;

            let docs = if query.trim().is_empty() {
                Vec::new()
            } else {
                match self.retriever.retrieve(query.trim(), self.config.top_k) {
                    Ok(docs) => docs,
                    Err(source) => match self.config.on_retrieval_error {
                        RetrievalErrorPolicy::Abort => {
                            return Err(RolloutError::Retrieval {
                                episode: id.to_owned(),
                                source,
                            })
                        }
                        RetrievalErrorPolicy::EmptyObservation => Vec::new(),
                    },
                }
            };
            if !docs.is_empty() {
                valid_searches += 1;
            }
            let start = raw.len();
            raw.push_str(&render_observation(&docs));
            injected.push(ByteRange::new(start, raw.len()));
        };

        let trajectory = parse_with_injections(&raw, question, &injected).map_err(|source| {
            RolloutError::Protocol {
                episode: id.to_owned(),
                source,
            }
        })?;
        let rewards = if terminated_by == Termination::BackendError {
            RewardBreakdown::default()
        } else {
            total_reward(id, &trajectory, golds, &self.rewards, self.cross_family)?
        };
        let mask = compute_loss_mask(&trajectory);
        let (record_id, sample) = split_episode_id(id);
        Ok(Episode {
            id: id.to_owned(),
            record_id,
            sample,
            question: question.to_owned(),
            golden_answers: golds.to_vec(),
            policy_family: self.policy.family().to_owned(),
            stats: EpisodeStats {
                search_rounds,
                valid_searches,
                total_bytes: raw.len(),
                terminated_by,
            },
            trajectory,
            rewards,
            mask,
            advantage: None,
        })
    }

    /// Runs `samples_per_prompt` episodes for one prompt and attaches
    /// group-relative advantages over their total rewards.
    pub fn run_group(
        &self,
        record_id: &str,
        question: &str,
        golds: &[String],
    ) -> Result<Group, RolloutError> {
        let record = DatasetRecord {
            id: record_id.to_owned(),
            question: question.to_owned(),
            golden_answers: golds.to_vec(),
        };
        self.run_groups(std::slice::from_ref(&record))
            .pop()
            .expect("one group per record")
    }

    /// Runs a group per record on the worker pool. Results come back in
    /// record order regardless of scheduling.
    pub fn run_groups(&self, records: &[DatasetRecord]) -> Vec<Result<Group, RolloutError>> {
        let n = self.config.samples_per_prompt;
        let jobs: Vec<(usize, usize)> = (0..records.len())
            .flat_map(|r| (0..n).map(move |s| (r, s)))
            .collect();
        let mut results: Vec<Result<Episode, RolloutError>> = self.pool.install(|| {
            jobs.par_iter()
                .map(|&(r, s)| {
                    let rec = &records[r];
                    self.run_episode(&episode_id(&rec.id, s), &rec.question, &rec.golden_answers)
                })
                .collect()
        });

        let mut groups = Vec::with_capacity(records.len());
        for _ in records {
            let members: Vec<_> = results.drain(..n).collect();
            groups.push(self.assemble_group(members));
        }
        groups
    }

    fn assemble_group(
        &self,
        members: Vec<Result<Episode, RolloutError>>,
    ) -> Result<Group, RolloutError> {
        let mut episodes = members.into_iter().collect::<Result<Vec<_>, _>>()?;
        let advantages = attach_advantages(&mut episodes, &self.rewards);
        Ok(Group {
            episodes,
            advantages,
        })
    }
}

/// Computes group advantages over total rewards and stores them on the episodes.
pub fn attach_advantages(episodes: &mut [Episode], cfg: &RewardConfig) -> Vec<f64> {
    let totals: Vec<f64> = episodes.iter().map(|e| e.rewards.total).collect();
    let advantages = group_advantage(&totals, cfg);
    for (e, a) in episodes.iter_mut().zip(&advantages) {
        e.advantage = Some(*a);
    }
    advantages
}

fn split_episode_id(id: &str) -> (String, usize) {
    match id.rsplit_once('#') {
        Some((record, sample)) => match sample.parse() {
            Ok(s) => (record.to_owned(), s),
            Err(_) => (id.to_owned(), 0),
        },
        None => (id.to_owned(), 0),
    }
}

/// Serialized segment: kind, byte range and origin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub kind: SegmentKind,
    pub byte_range: ByteRange,
    pub origin: Origin,
}

/// One line of an episode file; the hand-off format for trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub id: String,
    pub record_id: String,
    pub sample: usize,
    pub question: String,
    pub golden_answers: Vec<String>,
    pub policy_family: String,
    pub raw: String,
    pub segments: Vec<SegmentRecord>,
    pub rewards: RewardBreakdown,
    pub mask: LossMask,
    pub stats: EpisodeStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantage: Option<f64>,
}

impl From<&Episode> for EpisodeRecord {
    fn from(e: &Episode) -> Self {
        Self {
            id: e.id.clone(),
            record_id: e.record_id.clone(),
            sample: e.sample,
            question: e.question.clone(),
            golden_answers: e.golden_answers.clone(),
            policy_family: e.policy_family.clone(),
            raw: e.trajectory.raw.clone(),
            segments: e
                .trajectory
                .segments
                .iter()
                .map(|s| SegmentRecord {
                    kind: s.kind,
                    byte_range: s.byte_range,
                    origin: s.origin,
                })
                .collect(),
            rewards: e.rewards.clone(),
            mask: e.mask.clone(),
            stats: e.stats.clone(),
            advantage: e.advantage,
        }
    }
}

impl TryFrom<EpisodeRecord> for Episode {
    type Error = String;

    /// Rebuilds the trajectory from `raw` and the recorded environment spans
    /// and checks it against the stored segments.
    fn try_from(r: EpisodeRecord) -> Result<Self, String> {
        let injected: Vec<ByteRange> = r
            .segments
            .iter()
            .filter(|s| s.origin == Origin::Environment)
            .map(|s| s.byte_range)
            .collect();
        let trajectory =
            parse_with_injections(&r.raw, &r.question, &injected).map_err(|e| e.to_string())?;
        let rebuilt: Vec<SegmentRecord> = trajectory
            .segments
            .iter()
            .map(|s| SegmentRecord {
                kind: s.kind,
                byte_range: s.byte_range,
                origin: s.origin,
            })
            .collect();
        if rebuilt != r.segments {
            return Err(format!("episode {}: segments do not match raw text", r.id));
        }
        if r.stats.total_bytes != r.raw.len() {
            return Err(format!(
                "episode {}: total_bytes does not match raw length",
                r.id
            ));
        }
        Ok(Episode {
            id: r.id,
            record_id: r.record_id,
            sample: r.sample,
            question: r.question,
            golden_answers: r.golden_answers,
            policy_family: r.policy_family,
            trajectory,
            rewards: r.rewards,
            mask: r.mask,
            stats: r.stats,
            advantage: r.advantage,
        })
    }
}

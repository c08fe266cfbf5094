//! Operator commands and the engine config file.
//!
//! The config is TOML. Relative paths resolve against the config file's
//! directory. Every section except the ones a command needs is optional:
//!
//! ```toml
//! [policy]                    # rollout
//! kind = "scripted"           # or "chat"
//! family = "qwen2.5"
//! script = "policy.jsonl"     # scripted only
//! # base_url = "http://localhost:8000", model = "...", timeout_secs, max_retries
//!
//! [cross_family]              # rollout, score (when the evidence reward is on)
//! kind = "scripted"
//! family = "llama3.2"
//! script = "cross.jsonl"
//!
//! [downstream]                # answer
//! kind = "chat"
//! family = "glm"
//! base_url = "https://..."
//! model = "glm-4-plus"
//!
//! [retriever]                 # rollout; exactly one source
//! corpus = "corpus.jsonl"     # or index = "index.json", or endpoint = "http://..."
//!
//! [rollout]
//! top_k = 3
//! max_search_rounds = 8
//! max_total_bytes = 32768
//! samples_per_prompt = 5
//! temperature = 1.0
//! on_retrieval_error = "empty_observation"   # or "abort"
//! on_backend_error = "record"                # or "abort"
//! workers = 4
//! seed = 0
//! template = "default"                       # or "no_evidence"
//! # system_template = "my_template.txt"      # overrides `template`
//!
//! [reward]
//! gamma_e = 0.2
//! gamma_a = 0.2
//! group_eps = 1e-6
//! evidence_reward = true
//!
//! [trainer]                   # recorded for trainers, not used here
//! kl_beta = 0.001
//!
//! [output]                    # defaults for --out / --report
//! episodes = "episodes.jsonl"
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::backends::{
    BackendError, ChatCompletionsBackend, ChatConfig, GenerationBackend, GenerationRequest,
    GenerationResult, ScriptedBackend,
};
use crate::eval::{evaluate, load_dataset, EvalReport};
use crate::masking::compute_loss_mask;
use crate::protocol::{NO_EVIDENCE_SYSTEM_TEMPLATE, SYSTEM_TEMPLATE};
use crate::retrieval::{load_corpus, Bm25Index, RemoteRetriever, Retriever};
use crate::rewards::{total_reward, RewardConfig};
use crate::rollout::{
    attach_advantages, same_family, BackendErrorPolicy, Episode, EpisodeRecord,
    RetrievalErrorPolicy, RolloutConfig, RolloutEngine, Termination,
};
use crate::rstool::{answer_with_evidence, export_evidence, load_evidence, AnswerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendKind,
    pub family: String,
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Sampling temperature for downstream answering.
    #[serde(default = "default_answer_temperature")]
    pub temperature: f64,
    #[serde(default = "default_answer_bytes")]
    pub max_new_bytes: usize,
}

fn default_timeout_secs() -> u64 {
    60
}
fn default_max_retries() -> u32 {
    3
}
fn default_answer_temperature() -> f64 {
    0.1
}
fn default_answer_bytes() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieverSpec {
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateChoice {
    #[default]
    Default,
    NoEvidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutSection {
    pub top_k: usize,
    pub max_search_rounds: usize,
    pub max_total_bytes: usize,
    pub samples_per_prompt: usize,
    pub temperature: f64,
    pub on_retrieval_error: RetrievalErrorPolicy,
    pub on_backend_error: BackendErrorPolicy,
    pub workers: usize,
    pub seed: u64,
    pub template: TemplateChoice,
    pub system_template: Option<PathBuf>,
}

impl Default for RolloutSection {
    fn default() -> Self {
        let d = RolloutConfig::default();
        Self {
            top_k: d.top_k,
            max_search_rounds: d.max_search_rounds,
            max_total_bytes: d.max_total_bytes,
            samples_per_prompt: d.samples_per_prompt,
            temperature: d.temperature,
            on_retrieval_error: d.on_retrieval_error,
            on_backend_error: d.on_backend_error,
            workers: d.workers,
            seed: d.seed,
            template: TemplateChoice::Default,
            system_template: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub kl_beta: f64,
}

impl Default for TrainerSection {
    fn default() -> Self {
        Self { kl_beta: 0.001 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub episodes: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub evidence: Option<PathBuf>,
    pub answers: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub policy: Option<BackendSpec>,
    pub cross_family: Option<BackendSpec>,
    pub downstream: Option<BackendSpec>,
    pub retriever: RetrieverSpec,
    pub rollout: RolloutSection,
    pub reward: RewardConfig,
    pub trainer: TrainerSection,
    pub output: OutputSection,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().context("config is not valid TOML")?;
        let cfg: EngineConfig = serde_path_to_error::deserialize(toml::Value::Table(table))
            .map_err(|e| anyhow!("config field `{}`: {}", e.path(), e.inner()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for spec in [&mut cfg.policy, &mut cfg.cross_family, &mut cfg.downstream]
            .into_iter()
            .flatten()
        {
            resolve(base, &mut spec.script);
        }
        resolve(base, &mut cfg.retriever.corpus);
        resolve(base, &mut cfg.retriever.index);
        resolve(base, &mut cfg.rollout.system_template);
        resolve(base, &mut cfg.output.episodes);
        resolve(base, &mut cfg.output.report);
        resolve(base, &mut cfg.output.evidence);
        resolve(base, &mut cfg.output.answers);
        Ok(cfg)
    }

    /// Structural checks that need no I/O. Runs before any backend is built.
    pub fn validate(&self) -> Result<()> {
        for (name, spec) in [
            ("policy", &self.policy),
            ("cross_family", &self.cross_family),
            ("downstream", &self.downstream),
        ] {
            let Some(spec) = spec else { continue };
            if spec.family.trim().is_empty() {
                bail!("config field `{name}.family`: must not be empty");
            }
            match spec.kind {
                BackendKind::Scripted if spec.script.is_none() => {
                    bail!("config field `{name}.script`: required when kind = \"scripted\"")
                }
                BackendKind::Chat if spec.base_url.is_none() => {
                    bail!("config field `{name}.base_url`: required when kind = \"chat\"")
                }
                BackendKind::Chat if spec.model.is_none() => {
                    bail!("config field `{name}.model`: required when kind = \"chat\"")
                }
                _ => {}
            }
        }
        if let (Some(p), Some(c)) = (&self.policy, &self.cross_family) {
            if same_family(&p.family, &c.family) {
                bail!(
                    "config field `cross_family.family`: must differ from the policy family ({:?})",
                    p.family
                );
            }
        }
        let r = &self.retriever;
        let sources = [r.corpus.is_some(), r.index.is_some(), r.endpoint.is_some()]
            .into_iter()
            .filter(|x| *x)
            .count();
        if sources > 1 {
            bail!("config field `retriever`: set exactly one of corpus, index, endpoint");
        }
        self.reward
            .validate()
            .map_err(|e| anyhow!("config field `reward`: {e}"))?;
        self.rollout_config_unchecked()
            .validate()
            .map_err(|e| anyhow!("config field `rollout`: {e}"))?;
        Ok(())
    }

    fn rollout_config_unchecked(&self) -> RolloutConfig {
        let r = &self.rollout;
        RolloutConfig {
            top_k: r.top_k,
            max_search_rounds: r.max_search_rounds,
            max_total_bytes: r.max_total_bytes,
            samples_per_prompt: r.samples_per_prompt,
            temperature: r.temperature,
            on_retrieval_error: r.on_retrieval_error,
            on_backend_error: r.on_backend_error,
            workers: r.workers,
            seed: r.seed,
            system_template: match r.template {
                TemplateChoice::Default => SYSTEM_TEMPLATE.to_owned(),
                TemplateChoice::NoEvidence => NO_EVIDENCE_SYSTEM_TEMPLATE.to_owned(),
            },
        }
    }

    /// Rollout settings with the system template loaded from disk if one is configured.
    pub fn rollout_config(&self) -> Result<RolloutConfig> {
        let mut cfg = self.rollout_config_unchecked();
        if let Some(path) = &self.rollout.system_template {
            cfg.system_template = fs::read_to_string(path)
                .with_context(|| format!("reading system template {}", path.display()))?;
        }
        Ok(cfg)
    }
}

pub fn build_backend(spec: &BackendSpec) -> Result<Box<dyn GenerationBackend>> {
    Ok(match spec.kind {
        BackendKind::Scripted => {
            let path = spec
                .script
                .as_ref()
                .ok_or_else(|| anyhow!("scripted backend needs `script`"))?;
            Box::new(ScriptedBackend::load(spec.family.clone(), path)?)
        }
        BackendKind::Chat => {
            let mut cfg = ChatConfig::new(
                spec.base_url.clone().unwrap_or_default(),
                spec.model.clone().unwrap_or_default(),
                spec.family.clone(),
            );
            cfg.timeout = Duration::from_secs(spec.timeout_secs);
            cfg.max_retries = spec.max_retries;
            Box::new(ChatCompletionsBackend::new(cfg))
        }
    })
}

pub fn build_retriever(spec: &RetrieverSpec) -> Result<Box<dyn Retriever>> {
    if let Some(corpus) = &spec.corpus {
        let records =
            load_corpus(corpus).with_context(|| format!("loading corpus {}", corpus.display()))?;
        return Ok(Box::new(Bm25Index::build(records)?));
    }
    if let Some(index) = &spec.index {
        return Ok(Box::new(
            Bm25Index::load(index).with_context(|| format!("loading index {}", index.display()))?,
        ));
    }
    if let Some(endpoint) = &spec.endpoint {
        let timeout = Duration::from_secs(spec.timeout_secs.unwrap_or(30));
        return Ok(Box::new(RemoteRetriever::new(endpoint.clone(), timeout)));
    }
    bail!("config field `retriever`: no retriever source configured")
}

fn required<'c>(spec: &'c Option<BackendSpec>, name: &str) -> Result<&'c BackendSpec> {
    spec.as_ref()
        .ok_or_else(|| anyhow!("config field `{name}`: required for this command"))
}

fn pick_path(flag: Option<PathBuf>, fallback: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.cloned())
        .ok_or_else(|| anyhow!("no {what} path given (flag or [output] config)"))
}

/// Stands in for the cross-family model when the evidence reward is off.
/// The reward code never calls it in that configuration.
struct NoCrossFamily;

impl GenerationBackend for NoCrossFamily {
    fn family(&self) -> &str {
        "none"
    }

    fn generate(
        &self,
        _episode: &str,
        _req: &GenerationRequest,
    ) -> Result<GenerationResult, BackendError> {
        Err(BackendError::Protocol("evidence reward is disabled".into()))
    }
}

fn cross_family_backend(cfg: &EngineConfig) -> Result<Box<dyn GenerationBackend>> {
    match (&cfg.cross_family, cfg.reward.evidence_reward) {
        (Some(spec), _) => build_backend(spec),
        (None, false) => Ok(Box::new(NoCrossFamily)),
        (None, true) => {
            bail!("config field `cross_family`: required when reward.evidence_reward = true")
        }
    }
}

/// Reads an episode file, reporting the line of the first bad record.
pub fn read_episodes(path: &Path) -> Result<Vec<Episode>> {
    let reader =
        BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EpisodeRecord = serde_json::from_str(&line)
            .map_err(|e| anyhow!("{}:{}: {e}", path.display(), i + 1))?;
        let episode =
            Episode::try_from(record).map_err(|e| anyhow!("{}:{}: {e}", path.display(), i + 1))?;
        out.push(episode);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(w: &mut impl Write, item: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, item)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn write_episodes(path: &Path, episodes: &[Episode]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(
            File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?,
        );
        for e in episodes {
            write_jsonl(&mut w, &EpisodeRecord::from(e))?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Builds and saves an index; returns the document count.
pub fn cmd_index(corpus: &Path, out: &Path) -> Result<usize> {
    let records =
        load_corpus(corpus).with_context(|| format!("loading corpus {}", corpus.display()))?;
    let index = Bm25Index::build(records)?;
    index.save(out)?;
    Ok(index.len())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RolloutSummary {
    pub episodes: usize,
    pub mean_reward: f64,
    pub mean_valid_searches: f64,
}

/// Runs a group per dataset record and streams episodes to `out`. Groups
/// are written in dataset order as each batch completes, so an abort keeps
/// everything finished before it.
pub fn cmd_rollout(cfg: &EngineConfig, dataset: &Path, out: &Path) -> Result<RolloutSummary> {
    let policy_spec = required(&cfg.policy, "policy")?;
    let rollout_cfg = cfg.rollout_config()?;
    let records = load_dataset(dataset)?;

    let policy = build_backend(policy_spec)?;
    let cross = cross_family_backend(cfg)?;
    let retriever = build_retriever(&cfg.retriever)?;
    let batch = rollout_cfg.workers.max(1);
    let engine = RolloutEngine::new(
        policy.as_ref(),
        retriever.as_ref(),
        cross.as_ref(),
        rollout_cfg,
        cfg.reward.clone(),
    )?;

    let mut w =
        BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    let (mut n, mut reward_sum, mut valid_sum) = (0usize, 0.0, 0usize);
    for chunk in records.chunks(batch) {
        for group in engine.run_groups(chunk) {
            let group = match group {
                Ok(g) => g,
                Err(e) => {
                    w.flush()?;
                    return Err(e.into());
                }
            };
            for e in &group.episodes {
                write_jsonl(&mut w, &EpisodeRecord::from(e))?;
                n += 1;
                reward_sum += e.rewards.total;
                valid_sum += e.stats.valid_searches;
            }
        }
        w.flush()?;
    }
    let mean = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    Ok(RolloutSummary {
        episodes: n,
        mean_reward: mean(reward_sum),
        mean_valid_searches: mean(valid_sum as f64),
    })
}

/// Recomputes rewards, masks and advantages for stored episodes; returns
/// the episode count.
pub fn cmd_score(cfg: &EngineConfig, episodes_path: &Path, out: &Path) -> Result<usize> {
    let mut episodes = read_episodes(episodes_path)?;
    let cross = cross_family_backend(cfg)?;
    let cross = cross.as_ref();
    for e in episodes.iter_mut() {
        if e.stats.terminated_by != Termination::BackendError {
            e.rewards = total_reward(&e.id, &e.trajectory, &e.golden_answers, &cfg.reward, cross)?;
        }
        e.mask = compute_loss_mask(&e.trajectory);
    }

    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, e) in episodes.iter().enumerate() {
        groups.entry(e.record_id.clone()).or_default().push(i);
    }
    for members in groups.values() {
        let mut group: Vec<Episode> = members.iter().map(|&i| episodes[i].clone()).collect();
        attach_advantages(&mut group, &cfg.reward);
        for (&i, e) in members.iter().zip(group) {
            episodes[i] = e;
        }
    }
    write_episodes(out, &episodes)?;
    Ok(episodes.len())
}

/// `NAME=PATH` or a bare path whose file stem becomes the name.
pub fn parse_dataset_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_owned(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(arg);
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| arg.to_owned());
            (name, path)
        }
    }
}

/// Scores the first sample of each record against every dataset.
pub fn cmd_evaluate(
    episodes_path: &Path,
    datasets: &[(String, PathBuf)],
    report: Option<&Path>,
) -> Result<EvalReport> {
    let episodes = read_episodes(episodes_path)?;
    let mut predictions: BTreeMap<&str, (usize, Option<String>)> = BTreeMap::new();
    for e in &episodes {
        let entry = (e.sample, e.trajectory.answer());
        predictions
            .entry(e.record_id.as_str())
            .and_modify(|cur| {
                if e.sample < cur.0 {
                    *cur = entry.clone();
                }
            })
            .or_insert(entry);
    }
    let mut metrics = Vec::with_capacity(datasets.len());
    for (name, path) in datasets {
        let records = load_dataset(path)?;
        let m = evaluate(&records, |id| predictions.get(id).map(|(_, a)| a.clone()))
            .with_context(|| format!("dataset {name}"))?;
        metrics.push((name.clone(), m));
    }
    let report_data = EvalReport::new(metrics);
    if let Some(path) = report {
        fs::write(path, serde_json::to_string_pretty(&report_data)? + "\n")?;
    }
    Ok(report_data)
}

pub fn cmd_export_evidence(episodes_path: &Path, out: &Path) -> Result<usize> {
    let episodes = read_episodes(episodes_path)?;
    let mut w =
        BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    let mut n = 0;
    for record in episodes.iter().filter_map(export_evidence) {
        write_jsonl(&mut w, &record)?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub source_episode: String,
    pub question: String,
    pub answer: String,
}

pub fn cmd_answer(cfg: &EngineConfig, evidence_path: &Path, out: &Path) -> Result<usize> {
    let spec = required(&cfg.downstream, "downstream")?;
    let records = load_evidence(evidence_path)?;
    let downstream = build_backend(spec)?;
    let answer_cfg = AnswerConfig {
        temperature: spec.temperature,
        max_new_bytes: spec.max_new_bytes,
    };
    let mut w =
        BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    for r in &records {
        let answer = answer_with_evidence(r, downstream.as_ref(), &answer_cfg)
            .with_context(|| format!("answering {}", r.source_episode))?;
        write_jsonl(
            &mut w,
            &AnswerRecord {
                source_episode: r.source_episode.clone(),
                question: r.question.clone(),
                answer,
            },
        )?;
    }
    w.flush()?;
    Ok(records.len())
}

#[derive(Debug, Parser)]
#[command(name = "rsearch", version, about = "Reasoning-search rollout engine")]
pub struct Cli {
    /// Engine config file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Concurrent episodes; overrides `rollout.workers`.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Sampling seed; overrides `rollout.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a BM25 index from a JSON-lines corpus.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run rollouts for every record of a dataset.
    Rollout {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute rewards and masks of stored episodes.
    Score {
        #[arg(long)]
        episodes: PathBuf,
        /// Defaults to rewriting the input file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// EM/F1 report; `--dataset` takes `NAME=PATH` or `PATH` and may repeat.
    Evaluate {
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long = "dataset", required = true)]
        datasets: Vec<String>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Export evidence boxes as shareable records.
    ExportEvidence {
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer exported evidence records with the downstream model.
    Answer {
        #[arg(long)]
        evidence: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Cli {
    fn load_config(&self) -> Result<EngineConfig> {
        let mut cfg = match &self.config {
            Some(path) => EngineConfig::load(path)?,
            None => EngineConfig::default(),
        };
        if let Some(w) = self.workers {
            cfg.rollout.workers = w;
        }
        if let Some(s) = self.seed {
            cfg.rollout.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn require_config(&self) -> Result<EngineConfig> {
        if self.config.is_none() {
            bail!("this command needs --config");
        }
        self.load_config()
    }

    pub fn execute(self) -> Result<()> {
        match &self.command {
            Command::Index { corpus, out } => {
                let n = cmd_index(corpus, out)?;
                println!("indexed {n} documents into {}", out.display());
            }
            Command::Rollout { dataset, out } => {
                let cfg = self.require_config()?;
                let out = pick_path(out.clone(), cfg.output.episodes.as_ref(), "episode output")?;
                let s = cmd_rollout(&cfg, dataset, &out)?;
                println!(
                    "episodes: {}  mean reward: {:.4}  mean valid searches: {:.3}",
                    s.episodes, s.mean_reward, s.mean_valid_searches
                );
            }
            Command::Score { episodes, out } => {
                let cfg = self.require_config()?;
                let out = out.clone().unwrap_or_else(|| episodes.clone());
                let n = cmd_score(&cfg, episodes, &out)?;
                println!("scored {n} episodes into {}", out.display());
            }
            Command::Evaluate {
                episodes,
                datasets,
                report,
            } => {
                let cfg = self.load_config()?;
                let datasets: Vec<_> = datasets.iter().map(|d| parse_dataset_arg(d)).collect();
                let report = report.clone().or(cfg.output.report.clone());
                print!(
                    "{}",
                    cmd_evaluate(episodes, &datasets, report.as_deref())?.render_table()
                );
            }
            Command::ExportEvidence { episodes, out } => {
                let cfg = self.load_config()?;
                let out = pick_path(out.clone(), cfg.output.evidence.as_ref(), "evidence output")?;
                let n = cmd_export_evidence(episodes, &out)?;
                println!("exported {n} evidence records into {}", out.display());
            }
            Command::Answer { evidence, out } => {
                let cfg = self.require_config()?;
                let out = pick_path(out.clone(), cfg.output.answers.as_ref(), "answer output")?;
                let n = cmd_answer(&cfg, evidence, &out)?;
                println!("answered {n} questions into {}", out.display());
            }
        }
        Ok(())
    }
}

/// Runs a parsed command line and returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    match cli.execute() {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

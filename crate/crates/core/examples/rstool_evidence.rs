// Uses a finished rollout as a search tool: export its evidence and let a
// different model answer from it.
//
// cargo run -p rsearch --example rstool_evidence

use std::path::Path;

use rsearch::eval::load_dataset;
use rsearch::retrieval::load_corpus;
use rsearch::rewards::exact_match;
use rsearch::rstool::{answer_with_evidence, build_evidence_prompt, export_evidence, AnswerConfig};
use rsearch::{Bm25Index, RewardConfig, RolloutConfig, RolloutEngine, ScriptedBackend};

pub fn run() -> anyhow::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let policy = ScriptedBackend::load("qwen2.5", &fixtures.join("policy_script.jsonl"))?;
    let cross = ScriptedBackend::load("llama3.2", &fixtures.join("cross_script.jsonl"))?;
    let index = Bm25Index::build(load_corpus(&fixtures.join("case_corpus.jsonl"))?)?;
    let record = load_dataset(&fixtures.join("case_dataset.jsonl"))?
        .into_iter()
        .find(|r| r.id == "2wiki-4hop")
        .expect("fixture record");

    let config = RolloutConfig {
        top_k: 5,
        ..RolloutConfig::default()
    };
    let engine = RolloutEngine::new(&policy, &index, &cross, config, RewardConfig::default())?;
    let episode = engine.run_episode("2wiki-4hop#0", &record.question, &record.golden_answers)?;

    let evidence = export_evidence(&episode).expect("episode has evidence");
    println!(
        "{}\n",
        build_evidence_prompt(&evidence.question, &evidence.evidence)
    );

    let downstream = ScriptedBackend::load("glm", &fixtures.join("downstream_script.jsonl"))?;
    let answer = answer_with_evidence(&evidence, &downstream, &AnswerConfig::default())?;
    println!("downstream answer: {answer}");
    println!(
        "exact match: {}",
        exact_match(&answer, &record.golden_answers[0])
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}

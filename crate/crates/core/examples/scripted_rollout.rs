// Runs rollout groups with a replayed policy, a local index and a scripted
// cross-family model.
//
// cargo run -p rsearch --example scripted_rollout

use std::path::Path;

use rsearch::eval::load_dataset;
use rsearch::retrieval::load_corpus;
use rsearch::rollout::EpisodeRecord;
use rsearch::{Bm25Index, RewardConfig, RolloutConfig, RolloutEngine, ScriptedBackend};

pub fn run() -> anyhow::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let policy = ScriptedBackend::load("qwen2.5", &fixtures.join("policy_script.jsonl"))?;
    let cross = ScriptedBackend::load("llama3.2", &fixtures.join("cross_script.jsonl"))?;
    let index = Bm25Index::build(load_corpus(&fixtures.join("case_corpus.jsonl"))?)?;
    let records = load_dataset(&fixtures.join("case_dataset.jsonl"))?;

    let config = RolloutConfig {
        top_k: 5,
        samples_per_prompt: 2,
        workers: 2,
        ..RolloutConfig::default()
    };
    let engine = RolloutEngine::new(&policy, &index, &cross, config, RewardConfig::default())?;
    for group in engine.run_groups(&records) {
        let group = group?;
        for e in &group.episodes {
            println!(
                "{}: {} searches ({} valid), {:?}, answer {:?}, reward {:.2}, advantage {:?}",
                e.id,
                e.stats.search_rounds,
                e.stats.valid_searches,
                e.stats.terminated_by,
                e.trajectory.answer(),
                e.rewards.total,
                e.advantage
            );
        }
        let line = serde_json::to_string(&EpisodeRecord::from(&group.episodes[0]))?;
        println!("episode record: {} bytes of JSON", line.len());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}

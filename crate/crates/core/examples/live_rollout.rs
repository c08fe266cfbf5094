// One rollout against a live chat-completions server and retrieval service.
//
// RSEARCH_BASE_URL=http://localhost:8000 RSEARCH_MODEL=Qwen2.5-7B-Instruct \
// RSEARCH_RETRIEVER=http://localhost:8001 RSEARCH_CROSS_MODEL=Llama-3.2-3B-Instruct \
// cargo run -p rsearch --example live_rollout -- "Who directed A Tale of Winter?"
//
// `RSEARCH_API_KEY` is sent as a bearer token when set. Without the other
// variables the example only prints this usage.

use std::env;
use std::time::Duration;

use rsearch::backends::{ChatCompletionsBackend, ChatConfig};
use rsearch::retrieval::RemoteRetriever;
use rsearch::{RewardConfig, RolloutConfig, RolloutEngine};

fn main() -> anyhow::Result<()> {
    let (Ok(base), Ok(model), Ok(retriever), Ok(cross_model)) = (
        env::var("RSEARCH_BASE_URL"),
        env::var("RSEARCH_MODEL"),
        env::var("RSEARCH_RETRIEVER"),
        env::var("RSEARCH_CROSS_MODEL"),
    ) else {
        println!(
            "set RSEARCH_BASE_URL, RSEARCH_MODEL, RSEARCH_RETRIEVER and RSEARCH_CROSS_MODEL to run"
        );
        return Ok(());
    };
    let question = env::args()
        .nth(1)
        .unwrap_or_else(|| "Who directed A Tale of Winter?".into());

    let policy = ChatCompletionsBackend::new(ChatConfig::new(&base, model, "qwen2.5"));
    let cross = ChatCompletionsBackend::new(ChatConfig::new(&base, cross_model, "llama3.2"));
    let retriever = RemoteRetriever::new(retriever, Duration::from_secs(30));
    let engine = RolloutEngine::new(
        &policy,
        &retriever,
        &cross,
        RolloutConfig::evaluation(),
        RewardConfig::default(),
    )?;

    let e = engine.run_episode("live#0", &question, &[])?;
    println!("{}\n{}", question, e.trajectory.raw);
    println!("{:?}, answer {:?}", e.stats, e.trajectory.answer());
    Ok(())
}

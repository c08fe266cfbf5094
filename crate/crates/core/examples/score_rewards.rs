// Scores a rollout: answer F1, evidence F1 through a cross-family model,
// and the format reward.
//
// cargo run -p rsearch --example score_rewards

use rsearch::protocol::parse_rollout;
use rsearch::rewards::{total_reward, RewardConfig};
use rsearch::ScriptedBackend;

pub fn run() -> anyhow::Result<()> {
    let raw = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/fixtures/two_hop_transcript.txt"
    ))?;
    let question = "When was countrywide bought by the company that bought FleetBoston Financial?";
    let t = parse_rollout(&raw, question);
    let golds = ["July 1, 2008"];

    // The cross-family model answers from the evidence box alone.
    let cross = ScriptedBackend::new("llama3.2", vec!["July 1, 2008".into()])?;
    let r = total_reward("demo#0", &t, &golds, &RewardConfig::default(), &cross)?;
    println!(
        "answer {:.3}  evidence {:.3}  format {:.3}  total {:.3}",
        r.answer, r.evidence, r.format, r.total
    );

    let vague = ScriptedBackend::new("llama3.2", vec!["sometime in 2008".into()])?;
    let r = total_reward("demo#1", &t, &golds, &RewardConfig::default(), &vague)?;
    println!(
        "with a vaguer cross-family reply: evidence {:.3}  total {:.3}",
        r.evidence, r.total
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}

// Shows which bytes of a rollout a trainer should optimize.
//
// cargo run -p rsearch --example loss_mask

use rsearch::masking::{compute_loss_mask, MaskFlag};
use rsearch::protocol::parse_rollout;

pub fn run() -> anyhow::Result<()> {
    let raw = "Need the capital.\n<search>capital of France</search>\
               <observation>(Title: \"Paris\") Paris is the capital of France.\n</observation>\
               <original_evidence>Paris is the capital.</original_evidence><answer>Paris</answer>";
    let t = parse_rollout(raw, "What is the capital of France?");
    let mask = compute_loss_mask(&t);
    for span in &mask.spans {
        println!(
            "{:?} {:?}: {:?}",
            span.flag,
            span.byte_range,
            &raw[span.byte_range.range()]
        );
    }
    println!(
        "optimize {} bytes, exclude {} bytes",
        mask.count(MaskFlag::Optimize),
        mask.count(MaskFlag::Exclude)
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}

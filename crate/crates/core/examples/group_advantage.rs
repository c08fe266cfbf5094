// Group-relative advantages for one prompt's samples.
//
// cargo run -p rsearch --example group_advantage

use rsearch::rewards::{group_advantage, RewardConfig};

pub fn run() -> anyhow::Result<()> {
    let cfg = RewardConfig::default();
    for rewards in [vec![2.4, 1.2, 0.2, 2.4, 0.4], vec![1.0; 5]] {
        let adv = group_advantage(&rewards, &cfg);
        let shown: Vec<String> = adv.iter().map(|a| format!("{a:+.3}")).collect();
        println!("{rewards:?} -> [{}]", shown.join(", "));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}

// Parses a finished rollout into typed segments and format indicators.
//
// cargo run -p rsearch --example parse_trajectory [path/to/rollout.txt]

use std::path::PathBuf;

use rsearch::protocol::parse_rollout;

pub fn run(path: PathBuf) -> anyhow::Result<()> {
    let raw = std::fs::read_to_string(&path)?;
    let t = parse_rollout(
        &raw,
        "When was countrywide bought by the company that bought FleetBoston Financial?",
    );
    for s in &t.segments {
        let preview: String = s.text.chars().take(60).collect();
        println!(
            "{:>5}..{:<5} {:?} {:?}: {:?}",
            s.byte_range.start, s.byte_range.end, s.kind, s.origin, preview
        );
    }
    println!("queries: {:?}", t.queries());
    println!("answer: {:?}", t.answer());
    println!("flags: {:?}", t.format_flags());
    assert_eq!(t.reassemble(), raw);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/two_hop_transcript.txt")
        });
    run(path)
}

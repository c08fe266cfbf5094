// The operator pipeline driven from code: rollout, score, evaluate, export.
//
// cargo run -p rsearch --example cli_pipeline

use std::path::Path;

use rsearch::cli::{cmd_evaluate, cmd_export_evidence, cmd_rollout, cmd_score, EngineConfig};

pub fn run() -> anyhow::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let out = tempfile_dir()?;
    let config = EngineConfig::load(&fixtures.join("scripted.toml"))?;
    let dataset = fixtures.join("case_dataset.jsonl");

    let episodes = out.join("episodes.jsonl");
    let summary = cmd_rollout(&config, &dataset, &episodes)?;
    println!("rollout: {summary:?}");
    cmd_score(&config, &episodes, &episodes)?;
    let report = cmd_evaluate(&episodes, &[("2wikimqa".into(), dataset)], None)?;
    print!("{}", report.render_table());
    let n = cmd_export_evidence(&episodes, &out.join("evidence.jsonl"))?;
    println!("evidence records: {n}");
    std::fs::remove_dir_all(out)?;
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("rsearch-pipeline-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}

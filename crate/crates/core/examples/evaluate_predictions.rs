// EM/F1 over a dataset and the grouped report.
//
// cargo run -p rsearch --example evaluate_predictions

use std::collections::HashMap;

use rsearch::eval::{evaluate, load_dataset, DatasetMetrics, EvalReport};

pub fn run() -> anyhow::Result<()> {
    let records =
        load_dataset(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/case_dataset.jsonl").as_ref())?;
    let predictions = HashMap::from([
        ("musique-2hop", Some("July 1, 2008".to_owned())),
        ("2wiki-4hop", Some("A Tale of Winter".to_owned())),
    ]);
    let metrics = evaluate(&records, |id| predictions.get(id).cloned())?;
    println!("case studies: EM {:.1}  F1 {:.1}", metrics.em, metrics.f1);

    let report = EvalReport::new([
        ("2wikimqa", metrics),
        (
            "nq",
            DatasetMetrics {
                em: 40.0,
                f1: 50.0,
                n: 500,
            },
        ),
    ]);
    print!("{}", report.render_table());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}

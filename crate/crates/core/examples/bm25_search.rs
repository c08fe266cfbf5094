// Builds a BM25 index over a JSON-lines corpus and runs a query.
//
// cargo run -p rsearch --example bm25_search -- "who discovered the first antibiotic"

use rsearch::retrieval::{load_corpus, render_observation, Bm25Index};

pub fn run(query: &str) -> anyhow::Result<()> {
    let corpus = load_corpus(
        concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/fixtures/retrieval_corpus.jsonl"
        )
        .as_ref(),
    )?;
    let index = Bm25Index::build(corpus)?;
    println!(
        "{} documents, avg length {:.2} tokens",
        index.len(),
        index.avg_doc_len()
    );
    let hits = index.search(query, 3);
    for d in &hits {
        println!("{:.4}  {}  {}", d.score, d.id, d.title);
    }
    println!("{}", render_observation(&hits));
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    let query = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "highest mountain in Africa".into());
    run(&query)
}

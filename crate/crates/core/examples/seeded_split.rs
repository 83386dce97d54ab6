//! Seeded train/val/test split: the same seed always yields the same partition.
//!
//! cargo run --example seeded_split

use std::path::Path;

use mlpipe::corpus::{ingest_classification, split, SplitSpec};

fn main() -> mlpipe::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let docs = ingest_classification(&root.join("fixtures/classification_40.jsonl"), None)?;
    for seed in [0, 0, 7] {
        let s = split(&docs, &SplitSpec::new(seed, [0.8, 0.1, 0.1])?)?;
        let ids: Vec<&str> = s.test.iter().map(|d| d.doc.id.as_str()).collect();
        println!(
            "seed {seed}: train {} val {} test {:?}",
            s.train.len(),
            s.val.len(),
            ids
        );
    }
    Ok(())
}

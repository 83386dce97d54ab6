//! Sanitize a QA corpus, run extractive QA and list records where the model disagrees with gold.
//!
//! cargo run --example qa_annotation_audit

use std::path::Path;

use mlpipe::corpus::{ingest_qa, sanitize_qa};
use mlpipe::eval::report::{render_disagreements, render_qa};
use mlpipe::pipeline::{self, Metrics, PipelineConfig};

fn main() -> mlpipe::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let sanitized = sanitize_qa(&ingest_qa(&root.join("fixtures/qa_small.jsonl"))?);
    for f in &sanitized.flagged {
        println!("flagged {}: {:?}", f.record.id, f.reason);
    }

    let mut cfg = PipelineConfig::load(&root.join("configs/qa.toml"))?;
    cfg.paths.output_dir = std::env::temp_dir().join("mlpipe-examples/qa");
    if let Some(Metrics::Qa { metrics, disagreements }) = pipeline::run(&cfg)?.metrics {
        print!("{}", render_qa(&metrics));
        print!("{}", render_disagreements(&disagreements));
    }
    Ok(())
}

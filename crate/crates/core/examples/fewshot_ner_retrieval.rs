//! Few-shot NER with random and kNN example retrieval against the mock oracle.
//!
//! cargo run --example fewshot_ner_retrieval

use std::path::Path;

use mlpipe::eval::report::render_ner;
use mlpipe::pipeline::{self, Metrics, PipelineConfig};

fn main() -> mlpipe::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    for name in ["ner_few_shot", "ner_knn"] {
        let mut cfg = PipelineConfig::load(&root.join(format!("configs/{name}.toml")))?;
        cfg.paths.output_dir = std::env::temp_dir().join("mlpipe-examples").join(name);
        let out = pipeline::run(&cfg)?;
        println!(
            "== {name} ({:?} retrieval, {} shots)",
            cfg.retrieval.strategy, cfg.retrieval.shots
        );
        if let Some(p) = out.prompts.first() {
            println!("first prompt ({} tokens):\n{}\n", p.tokens, p.prompt);
        }
        if let Some(Metrics::Ner(m)) = &out.metrics {
            print!("{}", render_ner(&m.exact));
        }
        println!(
            "completion calls: {}, embedding calls: {}\n",
            out.manifest.counts.completion_calls, out.manifest.counts.embedding_calls
        );
    }
    Ok(())
}

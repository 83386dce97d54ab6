//! Zero-shot classification of the 6-document fixture under each built-in label scheme.
//!
//! cargo run --example zero_shot_label_schemes

use std::path::Path;

use mlpipe::embed::SchemeName;
use mlpipe::pipeline::{self, Metrics, PipelineConfig};

fn main() -> mlpipe::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    println!("{:<12} {:>8} {:>9} {:>6}", "scheme", "accuracy", "precision", "recall");
    for scheme in SchemeName::BUILTIN {
        let mut cfg = PipelineConfig::load(&root.join("configs/classify_zero_shot.toml"))?;
        cfg.classification.scheme = scheme.as_str().into();
        cfg.paths.output_dir = std::env::temp_dir()
            .join("mlpipe-examples/zero_shot")
            .join(scheme.as_str());
        if let Some(Metrics::Classification { metrics: m, .. }) = pipeline::run(&cfg)?.metrics {
            println!(
                "{:<12} {:>8.3} {:>9.3} {:>6.3}",
                scheme.as_str(),
                m.accuracy,
                m.precision,
                m.recall
            );
        }
    }
    Ok(())
}

//! Zero-shot label-scheme sweep against a live OpenAI-compatible embeddings endpoint.
//!
//! Not run in CI. Needs network access, an API key in `OPENAI_API_KEY` and a
//! classification corpus (JSONL with `id`, `text`, `label` in battery / non-battery):
//!
//! OPENAI_API_KEY=... cargo run --example live_label_sweep -- papers.jsonl [output_dir]
//!
//! Each scheme writes the same run directory as `mlpipe classify`.

use std::path::PathBuf;

use mlpipe::embed::SchemeName;
use mlpipe::pipeline::{self, BackendKind, Metrics, PipelineConfig};

fn main() -> mlpipe::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(corpus) = args.next() else {
        eprintln!("usage: live_label_sweep <corpus.jsonl> [output_dir]");
        std::process::exit(1);
    };
    let out_root = args.next().map_or_else(|| PathBuf::from("label-sweep"), PathBuf::from);

    let mut base = PipelineConfig::from_toml(
        r#"
        task = "classification"
        [paths]
        corpus = "unused"
        output_dir = "unused"
        [split]
        ratios = [0.0, 0.0, 1.0]
        eval_on = "all"
        [classification]
        mode = "zero-shot"
        "#,
    )?;
    base.paths.corpus = PathBuf::from(corpus);
    base.backend.kind = BackendKind::Live;

    for scheme in SchemeName::BUILTIN {
        let mut cfg = base.clone();
        cfg.classification.scheme = scheme.as_str().into();
        cfg.paths.output_dir = out_root.join(scheme.as_str());
        let out = match pipeline::run(&cfg) {
            Ok(o) => o,
            Err(e) => {
                eprintln!("{}: {e}", scheme.as_str());
                std::process::exit(e.exit_code());
            }
        };
        if let Some(Metrics::Classification { metrics: m, .. }) = out.metrics {
            println!(
                "{:<11} ACC: {:.1}, PRE: {:.1}, REC: {:.1}",
                scheme.as_str(),
                100.0 * m.accuracy,
                100.0 * m.precision,
                100.0 * m.recall
            );
        }
    }
    Ok(())
}

//! Compile fixture corpora into fine-tune JSONL and print the recommended hyperparameters.
//!
//! cargo run --example finetune_dataset

use std::path::Path;

use mlpipe::eval::Task;
use mlpipe::pipeline::export_finetune;
use mlpipe::prompt::{ApproxTokenCounter, PromptTemplate};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let out_dir = std::env::temp_dir().join("mlpipe-examples/finetune");
    std::fs::create_dir_all(&out_dir)?;
    let template = PromptTemplate::default();
    let jobs = [
        (Task::Classification, "classification_40.jsonl", None),
        (Task::Ner, "ner_solid_state.jsonl", Some("MAT")),
        (Task::Qa, "qa_427.jsonl", None),
    ];
    for (task, file, category) in jobs {
        let out = out_dir.join(file);
        let res = export_finetune(
            task,
            &root.join("fixtures").join(file),
            &out,
            &template,
            &ApproxTokenCounter,
            category,
            "davinci",
        )?;
        println!(
            "{file}: {} pairs, max {} tokens, batch_size {}, lr x{}, prompt_loss_weight {}",
            res.report.pairs,
            res.report.max_total_tokens,
            res.recommended.batch_size,
            res.recommended.learning_rate_multiplier,
            res.recommended.prompt_loss_weight
        );
        if let Some(line) = std::fs::read_to_string(&out)?.lines().next() {
            println!("  {line}");
        }
    }
    Ok(())
}

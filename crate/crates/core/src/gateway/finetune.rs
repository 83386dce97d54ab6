use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, write_jsonl};
use crate::error::{Error, Result};
use crate::prompt::{enforce_budget, Budgeted, PromptCompletionPair, PromptTemplate, TokenCounter};

pub const DEFAULT_EPOCHS: u32 = 4;
const MAX_BATCH: usize = 256;

/// Hyperparameters submitted with a fine-tune job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub base_model: String,
    pub batch_size: usize,
    pub n_epochs: u32,
    pub learning_rate_multiplier: f64,
    pub prompt_loss_weight: f64,
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_BATCH).contains(&self.batch_size) {
            return Err(Error::Config(format!(
                "batch_size {} outside [1, {MAX_BATCH}]",
                self.batch_size
            )));
        }
        if !self.learning_rate_multiplier.is_finite() || self.learning_rate_multiplier <= 0.0 {
            return Err(Error::Config("learning_rate_multiplier must be positive".into()));
        }
        Ok(())
    }
}

/// Batch size of 1% of the training set (clamped to `[1, 256]`), learning-rate
/// multiplier 0.01 and prompt loss weight 0.01.
pub fn recommended_finetune_config(train_size: usize, base_model: &str) -> Result<FineTuneConfig> {
    if train_size == 0 {
        return Err(Error::Validation("training set is empty".into()));
    }
    let batch_size = ((train_size as f64 * 0.01).round() as usize).clamp(1, MAX_BATCH);
    Ok(FineTuneConfig {
        base_model: base_model.to_string(),
        batch_size,
        n_epochs: DEFAULT_EPOCHS,
        learning_rate_multiplier: 0.01,
        prompt_loss_weight: 0.01,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExportReport {
    pub pairs: usize,
    /// Largest prompt + completion token count in the file.
    pub max_total_tokens: usize,
    pub counter: String,
}

/// Writes one `{"prompt", "completion"}` object per line.
///
/// Every pair is checked first (suffix, leading space, stop, token budget);
/// nothing is written if any pair fails, and the error names its index.
pub fn export_finetune_jsonl(
    pairs: &[PromptCompletionPair],
    path: &Path,
    template: &PromptTemplate,
    counter: &dyn TokenCounter,
) -> Result<ExportReport> {
    template.validate()?;
    let mut max_total = 0;
    for (i, pair) in pairs.iter().enumerate() {
        pair.check(template)
            .map_err(|m| Error::Validation(format!("pair {i}: {m}")))?;
        let total = enforce_budget(Budgeted::Pair(pair), counter, template)
            .map_err(|e| Error::Validation(format!("pair {i}: {e}")))?;
        max_total = max_total.max(total);
    }
    write_jsonl(path, pairs)?;
    Ok(ExportReport {
        pairs: pairs.len(),
        max_total_tokens: max_total,
        counter: counter.name().to_string(),
    })
}

pub fn read_finetune_jsonl(path: &Path) -> Result<Vec<PromptCompletionPair>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, p)| p).collect())
}

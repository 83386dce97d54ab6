//! Expected calibration error and per-bin table for a small set of predictions.
//!
//! cargo run --example calibration_report

use mlpipe::eval::report::render_calibration;
use mlpipe::eval::{ece, PredictionRecord, Task};

fn main() -> mlpipe::Result<()> {
    let preds: Vec<PredictionRecord> = [
        ("a", "battery", 0.9),
        ("b", "battery", 0.9),
        ("c", "non-battery", 0.9),
        ("d", "battery", 0.6),
    ]
    .into_iter()
    .map(|(id, pred, c)| PredictionRecord::text(Task::Classification, id, pred, "battery").with_confidence(c))
    .collect();
    for bins in [1, 5, 10] {
        println!("M = {bins}");
        print!("{}", render_calibration(&ece(&preds, bins)?));
    }
    Ok(())
}

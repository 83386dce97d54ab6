//! Expected calibration error over equal-width confidence bins.
//!
//! Bin `m` (0-based, of `M`) is the half-open interval `(m/M, (m+1)/M]`, with
//! the edges computed as `k as f64 / M as f64`; a confidence of exactly 0 goes
//! to the first bin. Then
//!
//! ```text
//! ECE = Σ_m (|B_m| / n) · |acc(B_m) − conf(B_m)|
//! ```
//!
//! where `acc` and `conf` are the fraction correct and mean confidence inside
//! the bin. Empty bins contribute nothing.

use serde::{Deserialize, Serialize};

use super::PredictionRecord;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub accuracy: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub m_bins: usize,
    pub n: usize,
    pub bins: Vec<BinStat>,
}

fn edge(k: usize, m: usize) -> f64 {
    k as f64 / m as f64
}

/// Bin holding confidence `c` (assumed in `[0, 1]`).
pub fn bin_index(c: f64, m: usize) -> usize {
    if c <= 0.0 {
        return 0;
    }
    let mut i = ((c * m as f64).ceil() as usize).clamp(1, m) - 1;
    // c * m can round across an edge; settle against the f64 edges themselves
    while i > 0 && c <= edge(i, m) {
        i -= 1;
    }
    while i + 1 < m && c > edge(i + 1, m) {
        i += 1;
    }
    i
}

/// ECE from `(confidence, correct)` pairs.
pub fn ece_from_samples(samples: &[(f64, bool)], m_bins: usize) -> Result<CalibrationReport> {
    if m_bins == 0 {
        return Err(Error::Validation("at least one calibration bin is required".into()));
    }
    if let Some((c, _)) = samples.iter().find(|(c, _)| !(0.0..=1.0).contains(c)) {
        return Err(Error::Validation(format!("confidence {c} outside [0, 1]")));
    }
    let mut count = vec![0usize; m_bins];
    let mut correct = vec![0usize; m_bins];
    let mut conf_sum = vec![0.0f64; m_bins];
    for &(c, ok) in samples {
        let b = bin_index(c, m_bins);
        count[b] += 1;
        correct[b] += usize::from(ok);
        conf_sum[b] += c;
    }
    let n = samples.len();
    let mut ece = 0.0;
    let bins = (0..m_bins)
        .map(|b| {
            let (accuracy, confidence) = if count[b] == 0 {
                (0.0, 0.0)
            } else {
                (correct[b] as f64 / count[b] as f64, conf_sum[b] / count[b] as f64)
            };
            if count[b] > 0 {
                ece += count[b] as f64 / n as f64 * (accuracy - confidence).abs();
            }
            BinStat {
                lo: edge(b, m_bins),
                hi: edge(b + 1, m_bins),
                count: count[b],
                accuracy,
                confidence,
            }
        })
        .collect();
    Ok(CalibrationReport { ece, m_bins, n, bins })
}

/// ECE over prediction records; every record must carry a confidence.
pub fn ece(preds: &[PredictionRecord], m_bins: usize) -> Result<CalibrationReport> {
    let samples = preds
        .iter()
        .map(|p| {
            p.confidence
                .map(|c| (c, p.is_correct()))
                .ok_or_else(|| Error::Validation(format!("record {:?} has no confidence", p.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    ece_from_samples(&samples, m_bins)
}

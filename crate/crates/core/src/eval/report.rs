//! Plain-text tables for terminal output.

use std::fmt::Write;

use super::{CalibrationReport, Disagreement, MetricsReport, NerReport, QaReport};

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

fn f(x: f64) -> String {
    format!("{x:.4}")
}

pub fn render_classification(m: &MetricsReport) -> String {
    let c = &m.counts;
    let mut s = table(
        &["metric", "value"],
        &[
            vec!["accuracy".into(), f(m.accuracy)],
            vec!["precision".into(), f(m.precision)],
            vec!["recall".into(), f(m.recall)],
            vec!["f1".into(), f(m.f1)],
        ],
    );
    let _ = writeln!(s, "tp={} fp={} fn={} tn={}", c.tp, c.fp, c.fn_, c.tn);
    if !m.degenerate.is_empty() {
        let _ = writeln!(s, "degenerate: {}", m.degenerate.join(", "));
    }
    if !m.unmatched_predictions.is_empty() {
        let _ = writeln!(s, "unmatched predictions: {}", m.unmatched_predictions.len());
    }
    s
}

pub fn render_calibration(c: &CalibrationReport) -> String {
    let rows: Vec<Vec<String>> = c
        .bins
        .iter()
        .map(|b| {
            vec![
                format!("({:.2}, {:.2}]", b.lo, b.hi),
                b.count.to_string(),
                f(b.accuracy),
                f(b.confidence),
            ]
        })
        .collect();
    let mut s = table(&["bin", "n", "accuracy", "confidence"], &rows);
    let _ = writeln!(s, "ECE={} (M={}, n={})", f(c.ece), c.m_bins, c.n);
    s
}

pub fn render_ner(r: &NerReport) -> String {
    let mut rows: Vec<Vec<String>> = r
        .per_category
        .iter()
        .map(|(k, p)| {
            vec![
                k.clone(),
                p.counts.tp.to_string(),
                p.counts.fp.to_string(),
                p.counts.fn_.to_string(),
                f(p.precision),
                f(p.recall),
                f(p.f1),
            ]
        })
        .collect();
    for (name, p) in [("micro", &r.micro), ("macro", &r.macro_avg)] {
        rows.push(vec![
            name.into(),
            p.counts.tp.to_string(),
            p.counts.fp.to_string(),
            p.counts.fn_.to_string(),
            f(p.precision),
            f(p.recall),
            f(p.f1),
        ]);
    }
    table(&["category", "tp", "fp", "fn", "precision", "recall", "f1"], &rows)
}

pub fn render_qa(r: &QaReport) -> String {
    table(
        &["metric", "value"],
        &[
            vec!["n".into(), r.n.to_string()],
            vec!["precision".into(), f(r.precision)],
            vec!["recall".into(), f(r.recall)],
            vec!["f1".into(), f(r.f1)],
            vec!["mean record f1".into(), f(r.mean_record_f1)],
        ],
    )
}

pub fn render_disagreements(d: &[Disagreement]) -> String {
    let rows: Vec<Vec<String>> = d
        .iter()
        .map(|x| {
            let reason = serde_json::to_value(x.reason)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default();
            vec![x.id.clone(), f(x.f1), reason, x.gold.clone(), x.predicted.clone()]
        })
        .collect();
    table(&["id", "f1", "reason", "gold", "predicted"], &rows)
}

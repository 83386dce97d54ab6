//! Marker-annotated completions: `@@entity##` inline markup.
//!
//! One category per completion. Encoding wraps every gold span of the category
//! with the scheme's open/close strings. Decoding walks an (untrusted) model
//! completion, pulls out the marked fragments and aligns them back onto the
//! original text, left to right, to recover character offsets.

use serde::{Deserialize, Serialize};

use crate::corpus::EntitySpan;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerScheme {
    pub open: String,
    pub close: String,
}

impl Default for MarkerScheme {
    fn default() -> Self {
        MarkerScheme {
            open: "@@".into(),
            close: "##".into(),
        }
    }
}

impl MarkerScheme {
    pub fn new(open: impl Into<String>, close: impl Into<String>) -> Result<Self> {
        let scheme = MarkerScheme {
            open: open.into(),
            close: close.into(),
        };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn validate(&self) -> Result<()> {
        if self.open.is_empty() || self.close.is_empty() {
            return Err(Error::Encode("marker strings must be non-empty".into()));
        }
        if self.open == self.close {
            return Err(Error::Encode("open and close markers must differ".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyKind {
    UnmatchedOpen,
    UnmatchedClose,
    UnalignedFragment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anomaly {
    pub kind: AnomalyKind,
    pub fragment: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeOutcome {
    pub spans: Vec<EntitySpan>,
    pub anomalies: Vec<Anomaly>,
}

/// Inserts markers around every `category` span of `text`.
pub fn encode_markers(text: &str, spans: &[EntitySpan], category: &str, scheme: &MarkerScheme) -> Result<String> {
    scheme.validate()?;
    for marker in [&scheme.open, &scheme.close] {
        if text.contains(marker.as_str()) {
            return Err(Error::Encode(format!("marker {marker:?} occurs in the source text")));
        }
    }
    let mut picked: Vec<&EntitySpan> = spans.iter().filter(|s| s.category == category).collect();
    picked.sort_by_key(|s| (s.start, s.end));

    let len = text.chars().count();
    for (i, s) in picked.iter().enumerate() {
        if s.start >= s.end || s.end > len {
            return Err(Error::Encode(format!("span ({}, {}) out of range", s.start, s.end)));
        }
        if i > 0 && picked[i - 1].end > s.start {
            return Err(Error::Encode(format!(
                "spans ({}, {}) and ({}, {}) overlap",
                picked[i - 1].start,
                picked[i - 1].end,
                s.start,
                s.end
            )));
        }
    }

    let mut out = String::with_capacity(text.len() + picked.len() * (scheme.open.len() + scheme.close.len()));
    let mut next = picked.iter().peekable();
    let mut open_end: Option<usize> = None;
    for (idx, ch) in text.chars().enumerate() {
        if open_end == Some(idx) {
            out.push_str(&scheme.close);
            open_end = None;
        }
        if let Some(s) = next.peek() {
            if s.start == idx {
                out.push_str(&scheme.open);
                open_end = Some(s.end);
                next.next();
            }
        }
        out.push(ch);
    }
    if open_end.is_some() {
        out.push_str(&scheme.close);
    }
    Ok(out)
}

/// Removes every open and close marker, scanning left to right.
pub fn strip_markers(marked: &str, scheme: &MarkerScheme) -> String {
    let mut out = String::with_capacity(marked.len());
    let mut rest = marked;
    while let Some(ch) = rest.chars().next() {
        if let Some(r) = rest.strip_prefix(scheme.open.as_str()) {
            rest = r;
        } else if let Some(r) = rest.strip_prefix(scheme.close.as_str()) {
            rest = r;
        } else {
            out.push(ch);
            rest = &rest[ch.len_utf8()..];
        }
    }
    out
}

enum Piece {
    Plain(String),
    Marked(String),
    Anomaly(Anomaly),
}

/// Splits marked text into plain runs, marked fragments and marker anomalies.
///
/// An open marker that is followed by another open, or by nothing, is unmatched:
/// the text it consumed is reported and then treated as plain text. A close
/// with no open before it is reported and dropped.
fn tokenize(marked: &str, scheme: &MarkerScheme) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut buf = String::new();
    let mut inside = false;
    let mut rest = marked;

    let flush_plain = |buf: &mut String, pieces: &mut Vec<Piece>| {
        if !buf.is_empty() {
            pieces.push(Piece::Plain(std::mem::take(buf)));
        }
    };

    while let Some(ch) = rest.chars().next() {
        // prefer the longer marker when one is a prefix of the other
        let (first, second) = if scheme.open.len() >= scheme.close.len() {
            ((&scheme.open, true), (&scheme.close, false))
        } else {
            ((&scheme.close, false), (&scheme.open, true))
        };
        let hit = [first, second].into_iter().find(|(m, _)| rest.starts_with(m.as_str()));
        match hit {
            Some((m, true)) => {
                rest = &rest[m.len()..];
                if inside {
                    pieces.push(Piece::Anomaly(Anomaly {
                        kind: AnomalyKind::UnmatchedOpen,
                        fragment: buf.clone(),
                    }));
                    flush_plain(&mut buf, &mut pieces);
                } else {
                    flush_plain(&mut buf, &mut pieces);
                }
                inside = true;
            }
            Some((m, false)) => {
                rest = &rest[m.len()..];
                if inside {
                    pieces.push(Piece::Marked(std::mem::take(&mut buf)));
                    inside = false;
                } else {
                    pieces.push(Piece::Anomaly(Anomaly {
                        kind: AnomalyKind::UnmatchedClose,
                        fragment: buf.clone(),
                    }));
                }
            }
            None => {
                buf.push(ch);
                rest = &rest[ch.len_utf8()..];
            }
        }
    }
    if inside {
        pieces.push(Piece::Anomaly(Anomaly {
            kind: AnomalyKind::UnmatchedOpen,
            fragment: buf.clone(),
        }));
    }
    flush_plain(&mut buf, &mut pieces);
    pieces
}

fn collapse_ws(s: &str) -> Vec<char> {
    let mut out = Vec::with_capacity(s.len());
    let mut in_ws = false;
    for ch in s.chars() {
        if ch.is_whitespace() {
            if !in_ws {
                out.push(' ');
            }
            in_ws = true;
        } else {
            out.push(ch);
            in_ws = false;
        }
    }
    out
}

fn find_from(hay: &[char], needle: &[char], from: usize) -> Option<usize> {
    if needle.is_empty() || from > hay.len() || needle.len() > hay.len() - from {
        return None;
    }
    (from..=hay.len() - needle.len()).find(|&i| hay[i..i + needle.len()] == *needle)
}

/// Cursor over the original text with a whitespace-collapsed shadow copy.
struct Aligner {
    orig: Vec<char>,
    norm: Vec<char>,
    // original [start, end) covered by each normalized char
    norm_range: Vec<(usize, usize)>,
    // normalized index holding each original char; last entry is norm.len()
    orig_to_norm: Vec<usize>,
    cursor: usize,
}

impl Aligner {
    fn new(original: &str) -> Self {
        let orig: Vec<char> = original.chars().collect();
        let mut norm = Vec::with_capacity(orig.len());
        let mut norm_range: Vec<(usize, usize)> = Vec::with_capacity(orig.len());
        let mut orig_to_norm = Vec::with_capacity(orig.len() + 1);
        for (i, &ch) in orig.iter().enumerate() {
            let extends_run = ch.is_whitespace() && i > 0 && orig[i - 1].is_whitespace();
            if extends_run {
                norm_range.last_mut().expect("run has a head").1 = i + 1;
            } else {
                norm.push(if ch.is_whitespace() { ' ' } else { ch });
                norm_range.push((i, i + 1));
            }
            orig_to_norm.push(norm.len() - 1);
        }
        orig_to_norm.push(norm.len());
        Aligner {
            orig,
            norm,
            norm_range,
            orig_to_norm,
            cursor: 0,
        }
    }

    fn skip_plain(&mut self, plain: &str) {
        let raw: Vec<char> = plain.chars().collect();
        if self.orig[self.cursor..].starts_with(&raw) {
            self.cursor += raw.len();
            return;
        }
        let normed = collapse_ws(plain);
        let nc = self.orig_to_norm[self.cursor];
        if !normed.is_empty() && self.norm[nc..].starts_with(&normed) {
            self.cursor = self.norm_range[nc + normed.len() - 1].1;
        }
    }

    fn place(&mut self, fragment: &str) -> Option<(usize, usize)> {
        let raw: Vec<char> = fragment.chars().collect();
        if let Some(p) = find_from(&self.orig, &raw, self.cursor) {
            self.cursor = p + raw.len();
            return Some((p, p + raw.len()));
        }
        let normed = collapse_ws(fragment.trim());
        let nc = self.orig_to_norm[self.cursor];
        let q = find_from(&self.norm, &normed, nc)?;
        let start = self.norm_range[q].0;
        let end = self.norm_range[q + normed.len() - 1].1;
        self.cursor = end;
        Some((start, end))
    }
}

/// Recovers `category` spans from a model completion.
///
/// Never fails: fragments that cannot be placed on `original` become
/// `unaligned-fragment` anomalies rather than spans, and marker imbalance is
/// reported the same way, so batch evaluation can continue.
pub fn decode_markers(marked: &str, original: &str, category: &str, scheme: &MarkerScheme) -> DecodeOutcome {
    let mut aligner = Aligner::new(original);
    let mut out = DecodeOutcome::default();
    for piece in tokenize(marked, scheme) {
        match piece {
            Piece::Plain(p) => aligner.skip_plain(&p),
            Piece::Anomaly(a) => out.anomalies.push(a),
            Piece::Marked(frag) => match aligner.place(&frag) {
                Some((start, end)) => out.spans.push(EntitySpan {
                    start,
                    end,
                    category: category.to_string(),
                    surface: aligner.orig[start..end].iter().collect(),
                }),
                None => out.anomalies.push(Anomaly {
                    kind: AnomalyKind::UnalignedFragment,
                    fragment: frag,
                }),
            },
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(text: &str, start: usize, end: usize, cat: &str) -> EntitySpan {
        EntitySpan::from_text(text, start, end, cat).unwrap()
    }

    fn find_span(text: &str, needle: &str, cat: &str) -> EntitySpan {
        let b = text.find(needle).unwrap();
        let start = text[..b].chars().count();
        span(text, start, start + needle.chars().count(), cat)
    }

    #[test]
    fn encodes_mat_spans() {
        let text = "LiCoO₂ and LiFePO₄ are used as cathodes of secondary batteries";
        let spans = vec![find_span(text, "LiCoO₂", "MAT"), find_span(text, "LiFePO₄", "MAT")];
        let out = encode_markers(text, &spans, "MAT", &MarkerScheme::default()).unwrap();
        assert_eq!(
            out,
            "@@LiCoO₂## and @@LiFePO₄## are used as cathodes of secondary batteries"
        );
    }

    #[test]
    fn other_categories_leave_text_unchanged() {
        let text = "LiCoO₂ and LiFePO₄";
        let spans = vec![find_span(text, "LiCoO₂", "MAT")];
        assert_eq!(
            encode_markers(text, &spans, "APL", &MarkerScheme::default()).unwrap(),
            text
        );
    }

    #[test]
    fn encode_rejects_marker_collision_and_overlap() {
        let scheme = MarkerScheme::default();
        assert!(encode_markers("issue ## 4", &[], "MAT", &scheme).is_err());
        let text = "BaTiO₃ film on Si";
        let spans = vec![span(text, 0, 6, "MAT"), span(text, 3, 9, "MAT")];
        assert!(encode_markers(text, &spans, "MAT", &scheme).is_err());
    }

    #[test]
    fn span_at_end_of_text_is_closed() {
        let text = "doped with Fe";
        let out = encode_markers(
            text,
            &[span(text, 11, 13, "DOPANT")],
            "DOPANT",
            &MarkerScheme::default(),
        )
        .unwrap();
        assert_eq!(out, "doped with @@Fe##");
    }

    #[test]
    fn decode_inverts_mat_example() {
        let text = "LiCoO₂ and LiFePO₄ are used as cathodes of secondary batteries";
        let marked = "@@LiCoO₂## and @@LiFePO₄## are used as cathodes of secondary batteries";
        let out = decode_markers(marked, text, "MAT", &MarkerScheme::default());
        assert_eq!(
            out.spans,
            vec![find_span(text, "LiCoO₂", "MAT"), find_span(text, "LiFePO₄", "MAT")]
        );
        assert!(out.anomalies.is_empty());
    }

    #[test]
    fn no_markers_no_spans() {
        let text = "a plain sentence";
        let out = decode_markers(text, text, "MAT", &MarkerScheme::default());
        assert_eq!(out, DecodeOutcome::default());
    }

    #[test]
    fn hallucinated_fragment_is_an_anomaly() {
        let original = "Carbon nanotubes were grown on copper foil.";
        assert!(!original.contains("graphene"));
        let out = decode_markers(
            "@@graphene## were grown on copper foil.",
            original,
            "MAT",
            &MarkerScheme::default(),
        );
        assert!(out.spans.is_empty());
        assert_eq!(
            out.anomalies,
            vec![Anomaly {
                kind: AnomalyKind::UnalignedFragment,
                fragment: "graphene".into()
            }]
        );
    }

    #[test]
    fn reflowed_whitespace_still_aligns() {
        let original = "thin  films of\nBaTiO₃ on Si";
        let out = decode_markers(
            "thin films of @@BaTiO₃ on## Si",
            original,
            "MAT",
            &MarkerScheme::default(),
        );
        assert_eq!(out.spans.len(), 1);
        assert_eq!(out.spans[0].surface, "BaTiO₃ on");
        let out = decode_markers("@@thin films## of BaTiO₃", original, "DSC", &MarkerScheme::default());
        assert_eq!(out.spans[0].surface, "thin  films");
        assert_eq!((out.spans[0].start, out.spans[0].end), (0, 11));
    }

    #[test]
    fn unbalanced_markers_are_reported() {
        let scheme = MarkerScheme::default();
        let original = "Fe and Co alloys";
        let out = decode_markers("@@Fe and @@Co## alloys", original, "MAT", &scheme);
        assert_eq!(out.spans.len(), 1);
        assert_eq!(out.spans[0].surface, "Co");
        assert_eq!(out.anomalies[0].kind, AnomalyKind::UnmatchedOpen);
        assert_eq!(out.anomalies[0].fragment, "Fe and ");

        let out = decode_markers("Fe## and Co", original, "MAT", &scheme);
        assert!(out.spans.is_empty());
        assert_eq!(out.anomalies[0].kind, AnomalyKind::UnmatchedClose);

        let out = decode_markers("Fe and @@Co alloys", original, "MAT", &scheme);
        assert!(out.spans.is_empty());
        assert_eq!(
            out.anomalies,
            vec![Anomaly {
                kind: AnomalyKind::UnmatchedOpen,
                fragment: "Co alloys".into()
            }]
        );
    }

    #[test]
    fn repeated_surface_aligns_in_order() {
        let text = "Fe or Fe";
        let out = decode_markers("Fe or @@Fe##", text, "MAT", &MarkerScheme::default());
        assert_eq!((out.spans[0].start, out.spans[0].end), (6, 8));
    }

    #[test]
    fn strip_examples() {
        let scheme = MarkerScheme::default();
        assert_eq!(strip_markers("@@Fe## alloy", &scheme), "Fe alloy");
        assert_eq!(strip_markers("no markers", &scheme), "no markers");
        let s = "@@a##@@b##";
        assert_eq!(strip_markers(s, &scheme), s.replace("@@", "").replace("##", ""));
        assert_eq!(strip_markers(s, &scheme), "ab");
    }

    #[test]
    fn scheme_validation() {
        assert!(MarkerScheme::new("@@", "@@").is_err());
        assert!(MarkerScheme::new("", "##").is_err());
        assert!(MarkerScheme::new("<e>", "</e>").is_ok());
    }
}

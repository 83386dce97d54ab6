//! Unicode scalar-value offsets over UTF-8 strings.
//!
//! All span offsets in the crate count `char`s, not bytes.

pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Byte position of the `idx`-th char, or `text.len()` when `idx` is one past the end.
pub fn byte_at(text: &str, idx: usize) -> Option<usize> {
    if idx == 0 {
        return Some(0);
    }
    let mut seen = 0;
    for (b, _) in text.char_indices() {
        if seen == idx {
            return Some(b);
        }
        seen += 1;
    }
    (seen == idx).then_some(text.len())
}

/// `text[start..end]` in char offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let b0 = byte_at(text, start)?;
    let b1 = byte_at(text, end)?;
    Some(&text[b0..b1])
}

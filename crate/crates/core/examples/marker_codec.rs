//! Encode entity spans as `@@…##` markers and decode a model completion back into spans.
//!
//! cargo run --example marker_codec

use mlpipe::corpus::EntitySpan;
use mlpipe::marker::{decode_markers, encode_markers, MarkerScheme};

fn main() -> mlpipe::Result<()> {
    let scheme = MarkerScheme::default();
    let text = "LiCoO₂ and LiFePO₄ are used as cathodes of secondary batteries.";
    let spans: Vec<EntitySpan> = [(0, 6), (11, 18)]
        .into_iter()
        .filter_map(|(s, e)| EntitySpan::from_text(text, s, e, "MAT"))
        .collect();
    let marked = encode_markers(text, &spans, "MAT", &scheme)?;
    println!("encoded: {marked}");

    // a completion with an extra, invented entity
    let completion = "@@LiCoO₂## and @@LiFePO₄## are used as cathodes of @@graphene## batteries.";
    let out = decode_markers(completion, text, "MAT", &scheme);
    for s in &out.spans {
        println!("span [{}, {}) {:?}", s.start, s.end, s.surface);
    }
    for a in &out.anomalies {
        println!("anomaly {:?}: {:?}", a.kind, a.fragment);
    }
    Ok(())
}

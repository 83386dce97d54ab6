//! Zero-shot classification by label-text embeddings.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::gateway::Gateway;

/// Softmax temperature used to turn two cosine similarities into a confidence.
pub const DEFAULT_TAU: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Validation("embedding has no components".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("embedding component {i} is not finite")));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        EmbeddingVector::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.0.iter().zip(&b.0) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Original,
    Crude,
    Designated,
    Verbose,
    Custom,
}

impl SchemeName {
    pub const BUILTIN: [SchemeName; 4] = [
        SchemeName::Original,
        SchemeName::Crude,
        SchemeName::Designated,
        SchemeName::Verbose,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeName::Original => "original",
            SchemeName::Crude => "crude",
            SchemeName::Designated => "designated",
            SchemeName::Verbose => "verbose",
            SchemeName::Custom => "custom",
        }
    }
}

impl FromStr for SchemeName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "original" => SchemeName::Original,
            "crude" => SchemeName::Crude,
            "designated" => SchemeName::Designated,
            "verbose" => SchemeName::Verbose,
            "custom" => SchemeName::Custom,
            other => return Err(Error::Config(format!("unknown label scheme {other:?}"))),
        })
    }
}

/// The pair of label texts embedded for the positive and negative class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelScheme {
    pub name: SchemeName,
    pub positive_text: String,
    pub negative_text: String,
}

impl LabelScheme {
    pub fn custom(positive: impl Into<String>, negative: impl Into<String>) -> Result<Self> {
        let scheme = LabelScheme {
            name: SchemeName::Custom,
            positive_text: positive.into(),
            negative_text: negative.into(),
        };
        if scheme.positive_text.is_empty() || scheme.negative_text.is_empty() {
            return Err(Error::Config("label texts must be non-empty".into()));
        }
        if scheme.positive_text == scheme.negative_text {
            return Err(Error::Config("positive and negative label texts must differ".into()));
        }
        Ok(scheme)
    }
}

/// Label pairs for the battery-literature screening task, from least to most explicit.
pub fn builtin_scheme(name: &str) -> Result<LabelScheme> {
    let name: SchemeName = name.parse()?;
    let (pos, neg) = match name {
        SchemeName::Original => ("battery", "non-battery"),
        SchemeName::Crude => ("battery materials", "diverse domains"),
        SchemeName::Designated => ("battery materials", "medical and psychological research"),
        SchemeName::Verbose => (
            "papers related to battery energy materials",
            "medical and psychological research",
        ),
        SchemeName::Custom => return Err(Error::Config("custom scheme needs explicit label texts".into())),
    };
    Ok(LabelScheme {
        name,
        positive_text: pos.into(),
        negative_text: neg.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotPrediction {
    /// Label text of the winning side.
    pub label: String,
    pub positive: bool,
    pub similarity_positive: f64,
    pub similarity_negative: f64,
    pub margin: f64,
    /// Softmax probability of the chosen side.
    pub confidence: f64,
}

impl ZeroShotPrediction {
    /// Softmax probability of the positive side, whichever side won.
    pub fn positive_probability(&self) -> f64 {
        if self.positive {
            self.confidence
        } else {
            1.0 - self.confidence
        }
    }
}

/// Two-way softmax over `(margin / tau, 0)`, i.e. the logistic of `margin / tau`.
/// Uses `libm` so results match bit for bit across platforms.
pub fn two_way_softmax(margin: f64, tau: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-margin / tau))
}

pub fn zero_shot_classify(
    doc: &EmbeddingVector,
    pos: &EmbeddingVector,
    neg: &EmbeddingVector,
    scheme: &LabelScheme,
) -> Result<ZeroShotPrediction> {
    zero_shot_classify_with_tau(doc, pos, neg, scheme, DEFAULT_TAU)
}

/// Picks the label whose embedding is closer; ties go to the positive label.
pub fn zero_shot_classify_with_tau(
    doc: &EmbeddingVector,
    pos: &EmbeddingVector,
    neg: &EmbeddingVector,
    scheme: &LabelScheme,
    tau: f64,
) -> Result<ZeroShotPrediction> {
    let sp = cosine_similarity(doc, pos)?;
    let sn = cosine_similarity(doc, neg)?;
    let margin = sp - sn;
    let positive = sp >= sn;
    let confidence = if positive {
        two_way_softmax(margin, tau)
    } else {
        two_way_softmax(-margin, tau)
    };
    Ok(ZeroShotPrediction {
        label: if positive {
            scheme.positive_text.clone()
        } else {
            scheme.negative_text.clone()
        },
        positive,
        similarity_positive: sp,
        similarity_negative: sn,
        margin,
        confidence,
    })
}

#[derive(Debug, Clone)]
pub struct DocPrediction {
    pub doc: Document,
    pub outcome: std::result::Result<ZeroShotPrediction, String>,
}

/// Classifies every document against `scheme`.
///
/// The two label texts are embedded once each, up front; a failure there is
/// fatal. Document embeddings are fetched one request per document through
/// the gateway's bounded worker pool, and a failed document is recorded in its
/// slot instead of aborting the batch. Output order follows input order.
pub fn classify_corpus(
    docs: &[Document],
    scheme: &LabelScheme,
    gateway: &Gateway,
    model: &str,
    tau: f64,
) -> Result<Vec<DocPrediction>> {
    if docs.is_empty() {
        return Ok(Vec::new());
    }
    let pos = gateway.embed_one(&scheme.positive_text, model)?;
    let neg = gateway.embed_one(&scheme.negative_text, model)?;
    let results = gateway.map_bounded(docs, |doc| {
        let emb = gateway.embed_one(&doc.text, model).map_err(|e| e.to_string())?;
        zero_shot_classify_with_tau(&emb, &pos, &neg, scheme, tau).map_err(|e| e.to_string())
    });
    Ok(docs
        .iter()
        .cloned()
        .zip(results)
        .map(|(doc, outcome)| DocPrediction { doc, outcome })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let u = v(&[0.6, 0.8]);
        assert!((cosine_similarity(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])).unwrap();
        assert!((c - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(Error::DimensionMismatch(1, 2))
        ));
        assert!(matches!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(Error::ZeroVector)
        ));
        assert!(EmbeddingVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn builtin_schemes() {
        let o = builtin_scheme("original").unwrap();
        assert_eq!(
            (o.positive_text.as_str(), o.negative_text.as_str()),
            ("battery", "non-battery")
        );
        let c = builtin_scheme("crude").unwrap();
        assert_eq!(
            (c.positive_text.as_str(), c.negative_text.as_str()),
            ("battery materials", "diverse domains")
        );
        let d = builtin_scheme("designated").unwrap();
        assert_eq!(
            (d.positive_text.as_str(), d.negative_text.as_str()),
            ("battery materials", "medical and psychological research")
        );
        let vb = builtin_scheme("verbose").unwrap();
        assert_eq!(
            (vb.positive_text.as_str(), vb.negative_text.as_str()),
            (
                "papers related to battery energy materials",
                "medical and psychological research"
            )
        );
        assert!(builtin_scheme("solar").is_err());
        assert!(builtin_scheme("custom").is_err());
        assert!(LabelScheme::custom("a", "a").is_err());
    }

    #[test]
    fn classify_examples() {
        let s = builtin_scheme("original").unwrap();
        let p = zero_shot_classify(&v(&[1.0, 0.0]), &v(&[1.0, 0.0]), &v(&[0.0, 1.0]), &s).unwrap();
        assert!(p.positive);
        assert_eq!(p.label, "battery");
        assert_eq!(p.margin, 1.0);

        let p = zero_shot_classify(&v(&[0.6, 0.8]), &v(&[1.0, 0.0]), &v(&[0.0, 1.0]), &s).unwrap();
        assert!(!p.positive);
        assert_eq!(p.label, "non-battery");
        assert!((p.similarity_positive - 0.6).abs() < 1e-15);
        assert!((p.similarity_negative - 0.8).abs() < 1e-15);
        assert!((p.margin + 0.2).abs() < 1e-15);

        let p = zero_shot_classify(&v(&[1.0, 1.0]), &v(&[1.0, 0.0]), &v(&[0.0, 1.0]), &s).unwrap();
        assert_eq!(p.margin, 0.0);
        assert!(p.positive);
        assert_eq!(p.confidence, 0.5);
    }

    #[test]
    fn confidence_rises_with_margin() {
        let mut last = 0.0;
        for i in -20..=20 {
            let p = two_way_softmax(i as f64 * 0.01, DEFAULT_TAU);
            assert!(p > last);
            assert!((0.0..=1.0).contains(&p));
            last = p;
        }
    }
}

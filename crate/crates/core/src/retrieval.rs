//! Few-shot example selection: seeded uniform sampling or exact kNN.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::embed::{cosine_similarity, EmbeddingVector};
use crate::error::{Error, Result};
use crate::shuffle::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleItem {
    pub id: String,
    pub input: String,
    pub target: String,
    /// Class label, used for per-label sampling.
    pub label: Option<String>,
    pub embedding: Option<EmbeddingVector>,
}

impl ExampleItem {
    pub fn new(id: impl Into<String>, input: impl Into<String>, target: impl Into<String>) -> Self {
        ExampleItem {
            id: id.into(),
            input: input.into(),
            target: target.into(),
            label: None,
            embedding: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_embedding(mut self, embedding: EmbeddingVector) -> Self {
        self.embedding = Some(embedding);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExampleStore {
    items: Vec<ExampleItem>,
}

impl ExampleStore {
    pub fn new(items: Vec<ExampleItem>) -> Result<Self> {
        let mut seen = HashSet::new();
        for item in &items {
            if !seen.insert(item.id.as_str()) {
                return Err(Error::Validation(format!("duplicate example id {:?}", item.id)));
            }
        }
        Ok(ExampleStore { items })
    }

    pub fn items(&self) -> &[ExampleItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Attaches embeddings in item order.
    pub fn set_embeddings(&mut self, embeddings: Vec<EmbeddingVector>) -> Result<()> {
        if embeddings.len() != self.items.len() {
            return Err(Error::Validation(format!(
                "{} embeddings for {} examples",
                embeddings.len(),
                self.items.len()
            )));
        }
        for (item, e) in self.items.iter_mut().zip(embeddings) {
            item.embedding = Some(e);
        }
        Ok(())
    }
}

/// Where the closest example sits in the assembled prompt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnnOrder {
    MostSimilarFirst,
    /// Closest example right before the query.
    #[default]
    MostSimilarLast,
}

impl KnnOrder {
    /// Reorders a `knn_retrieve` result (most similar first) for prompt assembly.
    pub fn arrange<T>(self, mut ranked: Vec<T>) -> Vec<T> {
        if self == KnnOrder::MostSimilarLast {
            ranked.reverse();
        }
        ranked
    }
}

/// Uniform sample without replacement.
///
/// With `per_label`, exactly `count` items are drawn from each label (labels
/// visited in sorted order) and the combined draw is shuffled, so a 2-way
/// 1-shot request returns one example of each class in random order. `k` must
/// then equal the sum of the counts.
pub fn random_retrieve<'a>(
    store: &'a ExampleStore,
    k: usize,
    seed: u64,
    per_label: Option<&BTreeMap<String, usize>>,
) -> Result<Vec<&'a ExampleItem>> {
    let mut rng = SeededRng::new(seed);
    let Some(counts) = per_label else {
        if k > store.len() {
            return Err(Error::Validation(format!(
                "cannot draw {k} examples from a store of {}",
                store.len()
            )));
        }
        return Ok(rng
            .sample_indices(store.len(), k)
            .into_iter()
            .map(|i| &store.items[i])
            .collect());
    };

    let total: usize = counts.values().sum();
    if total != k {
        return Err(Error::Validation(format!(
            "per-label counts sum to {total}, expected {k}"
        )));
    }
    let mut picked = Vec::with_capacity(k);
    for (label, &want) in counts {
        let pool: Vec<&ExampleItem> = store
            .items
            .iter()
            .filter(|it| it.label.as_deref() == Some(label.as_str()))
            .collect();
        if want > pool.len() {
            return Err(Error::Validation(format!(
                "label {label:?} has {} examples, {want} requested",
                pool.len()
            )));
        }
        picked.extend(rng.sample_indices(pool.len(), want).into_iter().map(|i| pool[i]));
    }
    rng.shuffle(&mut picked);
    Ok(picked)
}

/// The `k` most cosine-similar items, ordered by descending similarity and then
/// ascending id. Exact full scan.
pub fn knn_retrieve<'a>(
    query: &EmbeddingVector,
    store: &'a ExampleStore,
    k: usize,
) -> Result<Vec<(&'a ExampleItem, f64)>> {
    if k > store.len() {
        return Err(Error::Validation(format!(
            "cannot retrieve {k} neighbours from a store of {}",
            store.len()
        )));
    }
    let mut scored = Vec::with_capacity(store.len());
    for item in &store.items {
        let emb = item
            .embedding
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("example {:?} has no embedding", item.id)))?;
        scored.push((item, cosine_similarity(query, emb)?));
    }
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("cosine is finite")
            .then_with(|| a.0.id.cmp(&b.0.id))
    });
    scored.truncate(k);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(n: usize) -> ExampleStore {
        ExampleStore::new(
            (0..n)
                .map(|i| {
                    ExampleItem::new(format!("e{i:02}"), format!("in{i}"), format!("out{i}"))
                        .with_label(if i % 2 == 0 { "battery" } else { "non-battery" })
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rejects_duplicate_ids() {
        let items = vec![ExampleItem::new("a", "x", "y"), ExampleItem::new("a", "z", "w")];
        assert!(ExampleStore::new(items).is_err());
    }

    #[test]
    fn random_all_items_without_repeats() {
        let s = store(9);
        let got = random_retrieve(&s, 9, 5, None).unwrap();
        let mut ids: Vec<&str> = got.iter().map(|i| i.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 9);
    }

    #[test]
    fn random_is_deterministic() {
        let s = store(30);
        let a: Vec<&str> = random_retrieve(&s, 5, 11, None)
            .unwrap()
            .iter()
            .map(|i| i.id.as_str())
            .collect();
        let b: Vec<&str> = random_retrieve(&s, 5, 11, None)
            .unwrap()
            .iter()
            .map(|i| i.id.as_str())
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn random_too_many() {
        assert!(random_retrieve(&store(3), 4, 0, None).is_err());
    }

    #[test]
    fn two_way_one_shot() {
        let s = store(10);
        let counts = BTreeMap::from([("battery".to_string(), 1), ("non-battery".to_string(), 1)]);
        for seed in 0..20 {
            let got = random_retrieve(&s, 2, seed, Some(&counts)).unwrap();
            let mut labels: Vec<&str> = got.iter().map(|i| i.label.as_deref().unwrap()).collect();
            labels.sort_unstable();
            assert_eq!(labels, vec!["battery", "non-battery"]);
        }
        let five = BTreeMap::from([("battery".to_string(), 5), ("non-battery".to_string(), 5)]);
        assert_eq!(random_retrieve(&s, 10, 1, Some(&five)).unwrap().len(), 10);
        let six = BTreeMap::from([("battery".to_string(), 6)]);
        assert!(random_retrieve(&s, 6, 1, Some(&six)).is_err());
    }

    fn with_vecs(vecs: &[&[f64]]) -> ExampleStore {
        ExampleStore::new(
            vecs.iter()
                .enumerate()
                .map(|(i, v)| {
                    ExampleItem::new(format!("e{i}"), "x", "y")
                        .with_embedding(EmbeddingVector::new(v.to_vec()).unwrap())
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn knn_exact_match_first() {
        let s = with_vecs(&[&[1.0, 0.0], &[0.3, 0.7], &[0.0, 1.0]]);
        let q = EmbeddingVector::new(vec![0.3, 0.7]).unwrap();
        let got = knn_retrieve(&q, &s, 3).unwrap();
        assert_eq!(got[0].0.id, "e1");
        assert!((got[0].1 - 1.0).abs() < 1e-15);
        assert_eq!(got.len(), 3);
        assert!(got.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn knn_ties_by_id() {
        let s = with_vecs(&[&[2.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let q = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let ids: Vec<&str> = knn_retrieve(&q, &s, 2)
            .unwrap()
            .iter()
            .map(|(i, _)| i.id.as_str())
            .collect();
        assert_eq!(ids, vec!["e0", "e1"]);
    }

    #[test]
    fn knn_errors() {
        let s = with_vecs(&[&[1.0, 0.0]]);
        let q = EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(knn_retrieve(&q, &s, 1).is_err());
        let q = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        assert!(knn_retrieve(&q, &s, 2).is_err());
        assert!(knn_retrieve(&q, &store(2), 1).is_err());
    }

    #[test]
    fn arrange_order() {
        assert_eq!(KnnOrder::MostSimilarLast.arrange(vec![1, 2, 3]), vec![3, 2, 1]);
        assert_eq!(KnnOrder::MostSimilarFirst.arrange(vec![1, 2, 3]), vec![1, 2, 3]);
    }
}

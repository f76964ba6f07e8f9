//! Embedding-centroid topic diversity.

use serde::Serialize;

use crate::error::{CwtmError, Result};
use crate::topics::Topic;

/// Words per topic that enter the centroid.
pub const CENTROID_WORDS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diversity {
    pub value: f64,
    /// Mean pairwise centroid cosine.
    pub similarity: f64,
    /// `(topic_a, topic_b, cosine)` for every pair.
    pub pairs: Vec<(usize, usize, f64)>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// `1 −` the mean pairwise cosine of topic centroids, where a centroid is
/// the mean embedding of the topic's top words. `lookup(topic, word)`
/// supplies the embedding of a word as used in that topic.
pub fn diversity<'a, F>(topics: &[Topic], lookup: F) -> Result<Diversity>
where
    F: Fn(usize, &str) -> Option<&'a [f64]>,
{
    if topics.len() < 2 {
        return Err(CwtmError::Eval(format!("diversity needs at least 2 topics, got {}", topics.len())));
    }
    let mut centroids = Vec::with_capacity(topics.len());
    for t in topics {
        let words = &t.top_words[..t.top_words.len().min(CENTROID_WORDS)];
        if words.is_empty() {
            return Err(CwtmError::Eval(format!("topic {} has no words", t.index)));
        }
        let mut c: Option<Vec<f64>> = None;
        for (w, _) in words {
            let e = lookup(t.index, w).ok_or_else(|| CwtmError::MissingEmbedding(w.clone()))?;
            match &mut c {
                None => c = Some(e.to_vec()),
                Some(acc) => {
                    if acc.len() != e.len() {
                        return Err(CwtmError::Shape(format!("embedding for '{w}' has width {}", e.len())));
                    }
                    acc.iter_mut().zip(e).for_each(|(a, x)| *a += x);
                }
            }
        }
        let mut c = c.expect("non-empty");
        c.iter_mut().for_each(|v| *v /= words.len() as f64);
        centroids.push(c);
    }
    let mut pairs = Vec::new();
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            pairs.push((topics[i].index, topics[j].index, cosine(&centroids[i], &centroids[j])));
        }
    }
    let similarity = pairs.iter().map(|p| p.2).sum::<f64>() / pairs.len() as f64;
    Ok(Diversity {
        value: 1.0 - similarity,
        similarity,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn topic(index: usize, words: &[&str]) -> Topic {
        Topic {
            index,
            top_words: words.iter().map(|w| (w.to_string(), 1.0)).collect(),
            short: false,
        }
    }

    #[test]
    fn examples() {
        let emb: HashMap<&str, Vec<f64>> = [("a", vec![1.0, 0.0, 0.0]), ("b", vec![0.0, 1.0, 0.0]), ("c", vec![0.0, 0.0, 1.0])].into();
        let look = |_: usize, w: &str| emb.get(w).map(Vec::as_slice);

        let same = [topic(0, &["a", "b"]), topic(1, &["a", "b"])];
        assert!(diversity(&same, look).unwrap().value.abs() < 1e-12);

        let ortho = [topic(0, &["a"]), topic(1, &["b"])];
        assert!((diversity(&ortho, look).unwrap().value - 1.0).abs() < 1e-12);

        // Pairwise cosines (0, 0, 1).
        let three = [topic(0, &["a"]), topic(1, &["b"]), topic(2, &["a"])];
        assert!((diversity(&three, look).unwrap().value - (1.0 - 1.0 / 3.0)).abs() < 1e-12);

        let missing = [topic(0, &["a"]), topic(1, &["zzz"])];
        assert!(matches!(diversity(&missing, look), Err(CwtmError::MissingEmbedding(w)) if w == "zzz"));
        assert!(diversity(&same[..1], look).is_err());
    }

    proptest! {
        #[test]
        fn bounds(vals in proptest::collection::vec(-1.0f64..1.0, 12), nonneg in any::<bool>()) {
            let vals: Vec<f64> = if nonneg { vals.iter().map(|v| v.abs()).collect() } else { vals };
            let emb: Vec<Vec<f64>> = vals.chunks(3).map(<[f64]>::to_vec).collect();
            let names = ["p", "q", "r", "s"];
            let topics = [topic(0, &names[..2]), topic(1, &names[2..]), topic(2, &names[1..3])];
            let look = |_: usize, w: &str| names.iter().position(|n| *n == w).map(|i| emb[i].as_slice());
            let d = diversity(&topics, look).unwrap().value;
            prop_assert!((-1e-12..=2.0 + 1e-12).contains(&d));
            if nonneg {
                prop_assert!(d <= 1.0 + 1e-12);
            }
        }
    }
}

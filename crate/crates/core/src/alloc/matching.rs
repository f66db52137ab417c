//! Mapping sampled embeddings back to dataset allocations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Highest cosine similarity.
    #[default]
    Cosine,
    /// Smallest squared Euclidean distance.
    Squared,
}

/// Precomputed dataset embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingIndex {
    pub metric: Metric,
    embeddings: Vec<Vec<f64>>,
    /// Unit-norm copies; zero vectors stay zero and score cosine 0.
    unit: Vec<Vec<f64>>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl EmbeddingIndex {
    pub fn new(embeddings: Vec<Vec<f64>>, metric: Metric) -> Result<Self> {
        if embeddings.is_empty() {
            return Err(Error::EmptySamples);
        }
        let k = embeddings[0].len();
        if embeddings.iter().any(|e| e.len() != k) {
            return Err(Error::Config("embeddings differ in length".into()));
        }
        let unit = embeddings
            .iter()
            .map(|e| {
                let n = norm(e);
                if n > 0.0 {
                    e.iter().map(|x| x / n).collect()
                } else {
                    vec![0.0; k]
                }
            })
            .collect();
        Ok(Self {
            metric,
            embeddings,
            unit,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i]
    }

    /// Index of the best match; ties go to the lowest index.
    pub fn nearest(&self, query: &[f64]) -> Result<usize> {
        let k = self.embeddings[0].len();
        if query.len() != k {
            return Err(Error::ShapeMismatch {
                expected: k,
                got: query.len(),
            });
        }
        match self.metric {
            Metric::Cosine => {
                let qn = norm(query);
                if !(qn > 0.0) {
                    return Err(Error::ZeroNormQuery);
                }
                let mut best = 0;
                let mut best_s = f64::NEG_INFINITY;
                for (i, u) in self.unit.iter().enumerate() {
                    let s: f64 = u.iter().zip(query).map(|(a, b)| a * b).sum::<f64>() / qn;
                    if s > best_s {
                        best_s = s;
                        best = i;
                    }
                }
                Ok(best)
            }
            Metric::Squared => {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (i, e) in self.embeddings.iter().enumerate() {
                    let d: f64 = e.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                Ok(best)
            }
        }
    }
}

//! Exact top-k cosine retrieval over the source-function embedding corpus,
//! plus the ranking metrics used to judge it.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ScaDatabase;
use crate::embed::{l2_norm, Embedding, EmbeddingTable};
use crate::error::{Error, Result};

const UNIT_TOLERANCE: f64 = 1e-6;

/// Row-per-function unit vectors, stored in ascending id order so that
/// results never depend on insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorCorpus {
    ids: Vec<String>,
    data: Vec<f64>,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub func_id: String,
    pub similarity: f64,
}

impl VectorCorpus {
    /// Builds the corpus. Sentinel (empty-function) embeddings are skipped.
    pub fn build<I>(embeddings: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Embedding)>,
    {
        let mut rows: Vec<(String, Embedding)> = embeddings
            .into_iter()
            .filter(|(_, e)| e.is_retrievable())
            .collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        let dim = rows.first().map_or(0, |(_, e)| e.dim());
        let mut corpus = VectorCorpus {
            ids: Vec::with_capacity(rows.len()),
            data: Vec::with_capacity(rows.len() * dim),
            dim,
        };
        for (id, e) in rows {
            if corpus.ids.last() == Some(&id) {
                return Err(Error::DuplicateId(id));
            }
            if e.dim() != dim {
                return Err(Error::DimensionMismatch {
                    id,
                    expected: dim,
                    found: e.dim(),
                });
            }
            if (l2_norm(e.as_slice()) - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::invalid(format!("embedding `{id}` is not unit length")));
            }
            corpus.data.extend_from_slice(e.as_slice());
            corpus.ids.push(id);
        }
        Ok(corpus)
    }

    pub fn from_table(table: &EmbeddingTable) -> Result<Self> {
        Self::build(table.vectors.iter().map(|(k, v)| (k.clone(), v.clone())))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// The `min(k, len)` most similar functions, similarity descending,
    /// ties broken by ascending id. The sentinel query retrieves nothing.
    pub fn query_topk(&self, query: &Embedding, k: usize) -> Result<Vec<Hit>> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.is_empty() || !query.is_retrievable() {
            return Ok(Vec::new());
        }
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                id: "query".into(),
                expected: self.dim,
                found: query.dim(),
            });
        }
        let q = query.as_slice();
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .map(|i| {
                let s: f64 = self.row(i).iter().zip(q).map(|(a, b)| a * b).sum();
                // +0.0 folds -0.0 into 0.0 so ties compare equal
                (s.clamp(-1.0, 1.0) + 0.0, i)
            })
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(scored
            .into_iter()
            .map(|(similarity, i)| Hit {
                func_id: self.ids[i].clone(),
                similarity,
            })
            .collect())
    }

    /// Runs independent queries in parallel; output order follows input.
    pub fn query_batch(&self, queries: &[Embedding], k: usize) -> Result<Vec<Vec<Hit>>> {
        queries.par_iter().map(|q| self.query_topk(q, k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub func_id: String,
    pub similarity: f64,
    pub file_ids: BTreeSet<String>,
}

/// Top-k source functions retrieved for one binary function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub bin_rva: u64,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn from_hits(bin_rva: u64, hits: Vec<Hit>, db: &ScaDatabase) -> Self {
        let candidates = hits
            .into_iter()
            .map(|h| Candidate {
                file_ids: db.files_of(&h.func_id).clone(),
                func_id: h.func_id,
                similarity: h.similarity,
            })
            .collect();
        CandidateSet { bin_rva, candidates }
    }

    pub fn top1(&self) -> Option<&Candidate> {
        self.candidates.first()
    }

    pub fn similarity_of(&self, func_id: &str) -> Option<f64> {
        self.candidates
            .iter()
            .find(|c| c.func_id == func_id)
            .map(|c| c.similarity)
    }

    pub fn ranked_ids(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.func_id.clone()).collect()
    }
}

/// Retrieves candidates for every `(bin_rva, embedding)` query.
pub fn retrieve_candidates(
    corpus: &VectorCorpus,
    db: &ScaDatabase,
    queries: &[(u64, Embedding)],
    k: usize,
) -> Result<Vec<CandidateSet>> {
    let embeddings: Vec<Embedding> = queries.iter().map(|(_, e)| e.clone()).collect();
    let hits = corpus.query_batch(&embeddings, k)?;
    Ok(queries
        .iter()
        .zip(hits)
        .map(|((rva, _), h)| CandidateSet::from_hits(*rva, h, db))
        .collect())
}

fn check_queries<T>(ranked: &[Vec<T>], truth: &[T]) -> Result<()> {
    if ranked.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    if ranked.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} ranked lists but {} ground-truth ids",
            ranked.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Mean reciprocal rank; a truth missing from its list contributes 0.
pub fn compute_mrr<T: PartialEq>(ranked: &[Vec<T>], truth: &[T]) -> Result<f64> {
    check_queries(ranked, truth)?;
    let total: f64 = ranked
        .iter()
        .zip(truth)
        .map(|(list, t)| {
            list.iter()
                .position(|x| x == t)
                .map_or(0.0, |p| 1.0 / (p + 1) as f64)
        })
        .sum();
    Ok(total / ranked.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallAtK {
    pub count: usize,
    pub recall: f64,
}

pub fn compute_recall_at_k<T: PartialEq>(ranked: &[Vec<T>], truth: &[T], k: usize) -> Result<RecallAtK> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    check_queries(ranked, truth)?;
    let count = ranked
        .iter()
        .zip(truth)
        .filter(|(list, t)| list.iter().take(k).any(|x| x == *t))
        .count();
    Ok(RecallAtK {
        count,
        recall: count as f64 / ranked.len() as f64,
    })
}

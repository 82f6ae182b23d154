//! Function embeddings.
//!
//! The default embedder hashes token unigrams and bigrams into a fixed
//! number of signed buckets and L2-normalizes the result. Vectors produced
//! by an external model can be imported instead; they share the same
//! [`Embedding`] type and file format.

mod contrastive;
mod tokenize;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub use contrastive::{
    clip_symmetric_loss, train_toy_projection, ClipLoss, LossBatch, Projection, ToyTraining, TrainConfig,
};
pub use tokenize::tokenize;

pub const DEFAULT_DIM: usize = 256;
pub const MIN_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    vec: Vec<f64>,
    retrievable: bool,
}

impl Embedding {
    /// Normalizes `vec` to unit length. A zero vector becomes the
    /// non-retrievable sentinel.
    pub fn from_vec(mut vec: Vec<f64>) -> Self {
        let norm = l2_norm(&vec);
        if norm == 0.0 || !norm.is_finite() {
            vec.iter_mut().for_each(|x| *x = 0.0);
            return Embedding { vec, retrievable: false };
        }
        vec.iter_mut().for_each(|x| *x /= norm);
        Embedding { vec, retrievable: true }
    }

    pub fn sentinel(dim: usize) -> Self {
        Embedding {
            vec: vec![0.0; dim],
            retrievable: false,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vec
    }

    pub fn dim(&self) -> usize {
        self.vec.len()
    }

    /// False only for the zero sentinel (empty function, or a vector that
    /// hashed to all zeros).
    pub fn is_retrievable(&self) -> bool {
        self.retrievable
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        cosine(&self.vec, &other.vec)
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; 0 when either side is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = l2_norm(a) * l2_norm(b);
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

// FNV-1a followed by the splitmix64 finalizer so the low bits are usable
// as a bucket index.
fn feature_hash(kind: u8, parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    eat(kind);
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            eat(0);
        }
        part.bytes().for_each(&mut eat);
    }
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Signed counts of hashed unigrams and bigrams, before normalization.
pub(crate) fn hashed_features(tokens: &[String], dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let mut add = |h: u64| {
        let bucket = (h % dim as u64) as usize;
        v[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    };
    for t in tokens {
        add(feature_hash(b'u', &[t]));
    }
    for w in tokens.windows(2) {
        add(feature_hash(b'b', &[&w[0], &w[1]]));
    }
    v
}

/// Deterministic feature-hashing embedding of a token stream.
pub fn embed_tokens(tokens: &[String], dim: usize) -> Result<Embedding> {
    if dim < MIN_DIM {
        return Err(Error::invalid(format!("embedding dimension must be at least {MIN_DIM}, got {dim}")));
    }
    if tokens.is_empty() {
        return Ok(Embedding::sentinel(dim));
    }
    Ok(Embedding::from_vec(hashed_features(tokens, dim)))
}

/// On-disk shape of one vector (`{"id": ..., "vec": [...]}` per line).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vec: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: BTreeMap<String, Embedding>,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Writes retrievable vectors sorted by id.
    pub fn write(&self, path: &Path) -> Result<()> {
        let records: Vec<EmbeddingRecord> = self
            .vectors
            .iter()
            .filter(|(_, e)| e.is_retrievable())
            .map(|(id, e)| EmbeddingRecord {
                id: id.clone(),
                vec: e.as_slice().to_vec(),
            })
            .collect();
        io::write_jsonl(path, &records)
    }
}

/// Loads externally computed vectors, re-normalizing each to unit length.
pub fn import_external_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let shown = path.display();
    let mut table = EmbeddingTable::default();
    for (n, line) in io::read_records(path)? {
        let record: EmbeddingRecord = io::parse_record(path, n, &line)?;
        if table.vectors.is_empty() {
            table.dim = record.vec.len();
            if table.dim == 0 {
                return Err(Error::format(&shown, n, format!("vector `{}` is empty", record.id)));
            }
        } else if record.vec.len() != table.dim {
            return Err(Error::DimensionMismatch {
                id: record.id,
                expected: table.dim,
                found: record.vec.len(),
            });
        }
        if record.vec.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { id: record.id });
        }
        let emb = Embedding::from_vec(record.vec);
        if !emb.is_retrievable() {
            return Err(Error::format(&shown, n, format!("vector `{}` has zero length", record.id)));
        }
        if table.vectors.insert(record.id.clone(), emb).is_some() {
            return Err(Error::DuplicateId(record.id));
        }
    }
    Ok(table)
}

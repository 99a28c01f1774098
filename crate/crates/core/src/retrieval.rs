//! Chunk embeddings and exact top-k cosine retrieval.
//!
//! The index is scanned exhaustively; ranking is by descending cosine score
//! with ties broken by ascending chunk id, so results are reproducible and
//! can be checked against a plain sort.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::docstore::DocStore;
use crate::http::{HttpError, JsonClient};
use crate::par::{self, ExecMode};

/// Most queries a single SemSearch call may carry.
pub const MAX_SEMSEARCH_QUERIES: usize = 3;
pub const DEFAULT_TOP_K: usize = 5;
pub const HASH_EMBED_DIM: usize = 256;
const EMBED_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("nothing to embed")]
    EmptyInput,
    #[error("embedding provider failed: {0}")]
    Provider(#[from] HttpError),
    #[error("embedding provider returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("embedding dimension changed from {expected} to {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index was built by `{found}` but `{expected}` is configured")]
    ProviderMismatch { expected: String, found: String },
    #[error("invalid index: {0}")]
    InvalidIndex(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed index file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    /// Scales to unit length; the zero vector is returned unchanged.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

/// Cosine similarity, 0 when either vector is zero.
///
/// # Panics
/// If the dimensions differ.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    assert_eq!(a.dim(), b.dim(), "cosine of vectors with different dimensions");
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

pub trait Embedder: Send + Sync {
    /// Identifies the embedding space; recorded in persisted indexes.
    fn tag(&self) -> String;

    /// One L2-normalized vector per input text, in input order. Empty texts
    /// map to the zero vector.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError>;
}

/// Deterministic bag-of-words embedder: lowercase word tokens hashed into
/// fixed buckets, counted, then L2-normalized. Needs no network.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: HASH_EMBED_DIM }
    }
}

impl HashingEmbedder {
    pub fn with_dim(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut counts = vec![0.0; self.dim];
        for token in word_tokens(text) {
            counts[self.bucket(&token)] += 1.0;
        }
        EmbeddingVector::normalized(counts)
    }
}

impl Embedder for HashingEmbedder {
    fn tag(&self) -> String {
        format!("feature-hash-{}", self.dim)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        if texts.is_empty() {
            return Err(RetrievalError::EmptyInput);
        }
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Lowercased runs of alphanumerics and underscores.
pub fn word_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_')).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Remote embedder speaking the common embeddings wire shape: request
/// `{"model", "input": [texts]}`, reply `{"data": [{"embedding": [..]}]}`
/// (a bare array of arrays is also accepted).
pub struct HttpEmbedder {
    client: JsonClient,
    url: String,
    model: String,
    dim: OnceLock<usize>,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, model: impl Into<String>, api_key: Option<String>, max_retries: u32) -> Self {
        Self {
            client: JsonClient::new(api_key, Duration::from_secs(60), max_retries),
            url: url.into(),
            model: model.into(),
            dim: OnceLock::new(),
        }
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        let reply = self.client.post(&self.url, &json!({ "model": self.model, "input": texts }))?;
        let rows = parse_embedding_reply(&reply)
            .ok_or_else(|| HttpError::Malformed("expected `data[].embedding` or an array of arrays".into()))?;
        if rows.len() != texts.len() {
            return Err(RetrievalError::CountMismatch { expected: texts.len(), got: rows.len() });
        }
        let mut out = Vec::with_capacity(rows.len());
        for (text, row) in texts.iter().zip(rows) {
            let expected = *self.dim.get_or_init(|| row.len());
            if row.len() != expected {
                return Err(RetrievalError::DimensionMismatch { expected, got: row.len() });
            }
            out.push(if text.trim().is_empty() {
                EmbeddingVector::new(vec![0.0; expected])
            } else {
                EmbeddingVector::normalized(row)
            });
        }
        Ok(out)
    }
}

fn parse_embedding_reply(reply: &Value) -> Option<Vec<Vec<f64>>> {
    let rows: Vec<&Value> = match reply {
        Value::Array(items) => items.iter().collect(),
        Value::Object(map) => {
            let data = map.get("data").or_else(|| map.get("embeddings"))?.as_array()?;
            let mut indexed: Vec<(u64, &Value)> = data
                .iter()
                .enumerate()
                .map(|(i, item)| {
                    let idx = item.get("index").and_then(Value::as_u64).unwrap_or(i as u64);
                    (idx, item.get("embedding").unwrap_or(item))
                })
                .collect();
            indexed.sort_by_key(|(i, _)| *i);
            indexed.into_iter().map(|(_, v)| v).collect()
        }
        _ => return None,
    };
    rows.into_iter().map(|row| row.as_array()?.iter().map(Value::as_f64).collect()).collect()
}

impl Embedder for HttpEmbedder {
    fn tag(&self) -> String {
        format!("http:{}", self.model)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        if texts.is_empty() {
            return Err(RetrievalError::EmptyInput);
        }
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(EMBED_BATCH) {
            out.extend(self.embed_batch(batch)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub chunk_id: String,
    pub score: f64,
}

/// Ranking order: higher score first, then ascending chunk id.
pub fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.chunk_id.cmp(&b.chunk_id))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexEntry {
    pub chunk_id: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VectorIndex {
    pub provider_tag: String,
    pub dim: usize,
    pub entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryHits {
    pub query: String,
    pub hits: Vec<Hit>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchResults {
    pub per_query: Vec<QueryHits>,
    /// Deduplicated hits in first-seen order across queries.
    pub union: Vec<Hit>,
    pub note: Option<String>,
}

/// A SemSearch call that was refused before searching.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct SearchRejected(pub String);

impl VectorIndex {
    /// Embeds every chunk of `store`.
    pub fn build(store: &DocStore, embedder: &dyn Embedder, mode: ExecMode) -> Result<Self, RetrievalError> {
        let chunks = store.chunks();
        if chunks.is_empty() {
            return Err(RetrievalError::EmptyInput);
        }
        let batches: Vec<Vec<String>> =
            chunks.chunks(EMBED_BATCH).map(|b| b.iter().map(|c| c.text.clone()).collect()).collect();
        let embedded = par::map(mode, &batches, |batch| embedder.embed(batch));
        let mut vectors = Vec::with_capacity(chunks.len());
        for batch in embedded {
            vectors.extend(batch?);
        }
        if vectors.len() != chunks.len() {
            return Err(RetrievalError::CountMismatch { expected: chunks.len(), got: vectors.len() });
        }
        let dim = vectors[0].dim();
        if let Some(bad) = vectors.iter().find(|v| v.dim() != dim) {
            return Err(RetrievalError::DimensionMismatch { expected: dim, got: bad.dim() });
        }
        let entries =
            chunks.iter().zip(vectors).map(|(c, vector)| IndexEntry { chunk_id: c.chunk_id.clone(), vector }).collect();
        Ok(Self { provider_tag: embedder.tag(), dim, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact top-`k` by cosine over all entries.
    pub fn search(&self, query: &EmbeddingVector, k: usize, mode: ExecMode) -> Vec<Hit> {
        let mut hits: Vec<Hit> =
            par::map(mode, &self.entries, |e| Hit { chunk_id: e.chunk_id.clone(), score: cosine(query, &e.vector) });
        let k = k.min(hits.len());
        if k == 0 {
            return Vec::new();
        }
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, rank_order);
            hits.truncate(k);
        }
        hits.sort_by(rank_order);
        hits
    }

    /// Embeds and searches each query, collecting the deduplicated union.
    pub fn search_many(
        &self,
        embedder: &dyn Embedder,
        queries: &[String],
        k: usize,
        mode: ExecMode,
    ) -> Result<SearchResults, RetrievalError> {
        if self.is_empty() {
            return Ok(SearchResults { note: Some("the documentation index is empty".into()), ..Default::default() });
        }
        if queries.is_empty() {
            return Ok(SearchResults::default());
        }
        let vectors = embedder.embed(queries)?;
        let mut results = SearchResults::default();
        let mut seen = HashSet::new();
        for (query, vector) in queries.iter().zip(&vectors) {
            if vector.dim() != self.dim {
                return Err(RetrievalError::DimensionMismatch { expected: self.dim, got: vector.dim() });
            }
            let hits = self.search(vector, k, mode);
            for hit in &hits {
                if seen.insert(hit.chunk_id.clone()) {
                    results.union.push(hit.clone());
                }
            }
            results.per_query.push(QueryHits { query: query.clone(), hits });
        }
        Ok(results)
    }

    /// Checks that every entry refers to a chunk of `store`.
    pub fn check_against(&self, store: &DocStore) -> Result<(), RetrievalError> {
        let mut seen = HashSet::new();
        for entry in &self.entries {
            if !seen.insert(entry.chunk_id.as_str()) {
                return Err(RetrievalError::InvalidIndex(format!("duplicate chunk id `{}`", entry.chunk_id)));
            }
            if store.chunk(&entry.chunk_id).is_none() {
                return Err(RetrievalError::InvalidIndex(format!("unknown chunk id `{}`", entry.chunk_id)));
            }
            if entry.vector.dim() != self.dim {
                return Err(RetrievalError::DimensionMismatch { expected: self.dim, got: entry.vector.dim() });
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let json = serde_json::to_string(self)?;
        fs::write(path, json).map_err(|source| RetrievalError::Io { path: path.display().to_string(), source })
    }

    /// Loads an index and refuses it when it was built by another embedder.
    pub fn load(path: &Path, expected_tag: &str) -> Result<Self, RetrievalError> {
        let json = fs::read_to_string(path)
            .map_err(|source| RetrievalError::Io { path: path.display().to_string(), source })?;
        let index: Self = serde_json::from_str(&json)?;
        if index.provider_tag != expected_tag {
            return Err(RetrievalError::ProviderMismatch {
                expected: expected_tag.to_string(),
                found: index.provider_tag,
            });
        }
        Ok(index)
    }
}

/// The SemSearch primitive: 1 to 3 queries, top-`k` per query.
pub fn sem_search(
    index: &VectorIndex,
    embedder: &dyn Embedder,
    queries: &[String],
    k: usize,
    mode: ExecMode,
) -> Result<Result<SearchResults, SearchRejected>, RetrievalError> {
    if queries.is_empty() || queries.len() > MAX_SEMSEARCH_QUERIES {
        return Ok(Err(SearchRejected(format!(
            "SemSearch accepts 1 to {MAX_SEMSEARCH_QUERIES} queries per call, got {}",
            queries.len()
        ))));
    }
    if k == 0 {
        return Ok(Err(SearchRejected("k must be at least 1".into())));
    }
    index.search_many(embedder, queries, k, mode).map(Ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec())
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&e(&[1.0, 2.0, 3.0]), &e(&[1.0, 2.0, 3.0])) - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])), 0.0);
        assert_eq!(cosine(&e(&[0.0, 0.0]), &e(&[0.0, 1.0])), 0.0);
    }

    #[test]
    #[should_panic(expected = "different dimensions")]
    fn cosine_dimension_mismatch_panics() {
        cosine(&e(&[1.0]), &e(&[1.0, 0.0]));
    }

    #[test]
    fn hashing_is_scale_invariant() {
        let h = HashingEmbedder::default();
        let v = h.embed(&["x x".to_string(), "x".to_string()]).unwrap();
        assert_eq!(v[0], v[1]);
        assert!((v[0].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_vocabularies_are_orthogonal() {
        let h = HashingEmbedder::default();
        // Picked so that no bucket is shared between the two texts.
        let a = ["alpha", "beta"];
        let b = ["gamma", "delta"];
        let buckets_a: HashSet<_> = a.iter().map(|t| h.bucket(t)).collect();
        assert!(b.iter().all(|t| !buckets_a.contains(&h.bucket(t))));
        let va = h.embed_one(&a.join(" "));
        let vb = h.embed_one(&b.join(" "));
        assert_eq!(cosine(&va, &vb), 0.0);
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let h = HashingEmbedder::default();
        let v = h.embed(&["  ".to_string()]).unwrap();
        assert!(v[0].is_zero());
        assert!(matches!(h.embed(&[]), Err(RetrievalError::EmptyInput)));
    }

    #[test]
    fn parses_both_reply_shapes() {
        let a = parse_embedding_reply(
            &json!({"data": [{"index": 1, "embedding": [0.0, 1.0]}, {"index": 0, "embedding": [1.0, 0.0]}]}),
        );
        assert_eq!(a.unwrap(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = parse_embedding_reply(&json!([[1.0, 2.0]]));
        assert_eq!(b.unwrap(), vec![vec![1.0, 2.0]]);
        assert!(parse_embedding_reply(&json!({"nope": 1})).is_none());
    }

    fn tiny_index() -> (DocStore, VectorIndex) {
        let store = DocStore::from_sources(&[(
            "d".into(),
            "# One\napples and pears\n# Two\nsplit a string\n# Three\nparse an integer from text\n".into(),
        )]);
        let index = VectorIndex::build(&store, &HashingEmbedder::default(), ExecMode::Sequential).unwrap();
        (store, index)
    }

    #[test]
    fn exact_text_ranks_first_with_unit_score() {
        let (store, index) = tiny_index();
        let h = HashingEmbedder::default();
        let q = vec!["split a string".to_string()];
        let res = sem_search(&index, &h, &q, 5, ExecMode::Sequential).unwrap().unwrap();
        let top = &res.per_query[0].hits[0];
        assert_eq!(store.chunk(&top.chunk_id).unwrap().section_id, "two");
        assert_eq!(format!("{:.4}", top.score), "1.0000");
        // k larger than the index returns everything, sorted.
        assert_eq!(res.per_query[0].hits.len(), 3);
        assert!(res.per_query[0].hits.windows(2).all(|w| rank_order(&w[0], &w[1]) != Ordering::Greater));
    }

    #[test]
    fn query_cap_is_enforced() {
        let (_, index) = tiny_index();
        let h = HashingEmbedder::default();
        let q: Vec<String> = (0..4).map(|i| format!("q{i}")).collect();
        let rejected = sem_search(&index, &h, &q, 5, ExecMode::Sequential).unwrap().unwrap_err();
        assert!(rejected.0.contains("got 4"));
    }

    #[test]
    fn union_is_deduplicated_in_first_seen_order() {
        let (_, index) = tiny_index();
        let h = HashingEmbedder::default();
        let q = vec!["string".to_string(), "split string".to_string()];
        let res = index.search_many(&h, &q, 2, ExecMode::Sequential).unwrap();
        let ids: Vec<_> = res.union.iter().map(|h| h.chunk_id.as_str()).collect();
        let mut unique = ids.clone();
        unique.dedup();
        assert_eq!(ids, unique);
        assert_eq!(res.union[0], res.per_query[0].hits[0]);
    }

    #[test]
    fn provider_tag_is_checked_on_load() {
        let (store, index) = tiny_index();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        index.save(&path).unwrap();
        let loaded = VectorIndex::load(&path, "feature-hash-256").unwrap();
        loaded.check_against(&store).unwrap();
        assert!(matches!(VectorIndex::load(&path, "http:other"), Err(RetrievalError::ProviderMismatch { .. })));
    }
}

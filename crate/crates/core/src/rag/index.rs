use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embed::{EmbeddingVector, Embedder};
use super::RagError;
use crate::pairs::{CompletionPair, PairKind};

const MAGIC: &[u8; 4] = b"SFIX";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub pair_id: String,
    pub key: Vec<f32>,
    /// Label code with the end-of-text token stripped.
    pub value: String,
}

/// Flat in-memory index searched by exhaustive cosine scan.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dimension: usize,
    embedder_id: String,
    entries: Vec<IndexEntry>,
    norms: Vec<f64>,
    by_pair_id: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub pair_id: String,
    pub similarity: f64,
}

/// Neighbors by descending similarity, ties by ascending pair_id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnnResult {
    pub neighbors: Vec<Neighbor>,
}

impl KnnResult {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn pair_ids(&self) -> Vec<&str> {
        self.neighbors.iter().map(|n| n.pair_id.as_str()).collect()
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Cosine similarity; 0.0 if either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

impl VectorIndex {
    pub fn new(dimension: usize, embedder_id: impl Into<String>) -> Self {
        Self {
            dimension,
            embedder_id: embedder_id.into(),
            entries: Vec::new(),
            norms: Vec::new(),
            by_pair_id: HashMap::new(),
        }
    }

    pub fn insert(&mut self, pair_id: String, key: EmbeddingVector, value: String) -> Result<(), RagError> {
        if key.dim() != self.dimension {
            return Err(RagError::DimensionMismatch {
                expected: self.dimension,
                actual: key.dim(),
            });
        }
        if key.values.iter().any(|v| !v.is_finite()) {
            return Err(RagError::NonFiniteKey(pair_id));
        }
        if self.by_pair_id.contains_key(&pair_id) {
            return Err(RagError::DuplicatePairId(pair_id));
        }
        self.by_pair_id.insert(pair_id.clone(), self.entries.len());
        self.norms.push(norm(&key.values));
        self.entries.push(IndexEntry {
            pair_id,
            key: key.values,
            value,
        });
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn value(&self, pair_id: &str) -> Option<&str> {
        self.by_pair_id.get(pair_id).map(|&i| self.entries[i].value.as_str())
    }

    /// Exact top-`n` by cosine similarity over every entry.
    pub fn knn_search(&self, query: &EmbeddingVector, n: usize) -> Result<KnnResult, RagError> {
        if query.dim() != self.dimension {
            return Err(RagError::DimensionMismatch {
                expected: self.dimension,
                actual: query.dim(),
            });
        }
        if n == 0 {
            return Err(RagError::InvalidTopN);
        }
        let qn = norm(&query.values);
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .zip(&self.norms)
            .enumerate()
            .map(|(i, (e, &en))| {
                let sim = if qn == 0.0 || en == 0.0 {
                    0.0
                } else {
                    (dot(&query.values, &e.key) / (qn * en)).clamp(-1.0, 1.0)
                };
                (sim, i)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            b.0.total_cmp(&a.0)
                .then_with(|| self.entries[a.1].pair_id.cmp(&self.entries[b.1].pair_id))
        };
        let k = n.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(KnnResult {
            neighbors: scored
                .into_iter()
                .map(|(similarity, i)| Neighbor {
                    pair_id: self.entries[i].pair_id.clone(),
                    similarity,
                })
                .collect(),
        })
    }

    /// Binary layout (little endian): magic `SFIX`, u32 version, u32 D,
    /// u64 count, u32-length-prefixed embedder id, count×D f32 keys
    /// (row-major), then count length-prefixed pair ids and count
    /// length-prefixed values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.entries.len() * (self.dimension * 4 + 64));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        put_str(&mut out, &self.embedder_id);
        for e in &self.entries {
            for v in &e.key {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for e in &self.entries {
            put_str(&mut out, &e.pair_id);
        }
        for e in &self.entries {
            put_str(&mut out, &e.value);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RagError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(RagError::CorruptIndex("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(RagError::CorruptIndex(format!("unsupported version {version}")));
        }
        let dimension = r.u32()? as usize;
        let count = usize::try_from(r.u64()?).map_err(|_| RagError::CorruptIndex("count overflow".into()))?;
        let embedder_id = r.string()?;
        let key_bytes = count
            .checked_mul(dimension)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| RagError::CorruptIndex("size overflow".into()))?;
        let raw = r.take(key_bytes)?;
        let mut keys: Vec<Vec<f32>> = raw
            .chunks_exact(dimension.max(1) * 4)
            .map(|row| {
                row.chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect()
            })
            .collect();
        if dimension == 0 {
            keys = vec![Vec::new(); count];
        }
        let pair_ids = (0..count).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
        let values = (0..count).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
        if r.pos != bytes.len() {
            return Err(RagError::CorruptIndex("trailing bytes".into()));
        }
        let mut index = VectorIndex::new(dimension, embedder_id);
        for ((pair_id, key), value) in pair_ids.into_iter().zip(keys).zip(values) {
            index.insert(
                pair_id,
                EmbeddingVector {
                    values: key,
                    normalized: false,
                },
                value,
            )?;
        }
        Ok(index)
    }

    pub fn write(&self, path: &Path) -> Result<(), RagError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, RagError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RagError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| RagError::CorruptIndex("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, RagError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, RagError> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    fn string(&mut self) -> Result<String, RagError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| RagError::CorruptIndex("invalid UTF-8".into()))
    }
}

/// Embeds every primary pair's query as the key; the value is the label
/// without its end-of-text token.
pub async fn index_build(pairs: &[CompletionPair], embedder: &Embedder) -> Result<VectorIndex, RagError> {
    let mut seen = HashSet::new();
    for p in pairs {
        if p.kind != PairKind::Primary {
            return Err(RagError::NotPrimary(p.pair_id.clone()));
        }
        if p.query.is_empty() {
            return Err(RagError::EmptyQuery(p.pair_id.clone()));
        }
        if !seen.insert(p.pair_id.as_str()) {
            return Err(RagError::DuplicatePairId(p.pair_id.clone()));
        }
    }
    let mut index = VectorIndex::new(embedder.dim(), embedder.id());
    const CHUNK: usize = 256;
    for chunk in pairs.chunks(CHUNK) {
        let queries: Vec<String> = chunk.iter().map(|p| p.query.clone()).collect();
        let keys = embedder.embed_many(&queries).await.map_err(|e| RagError::EmbeddingFailed {
            pair_id: chunk[0].pair_id.clone(),
            source: Box::new(e),
        })?;
        for (p, key) in chunk.iter().zip(keys) {
            index.insert(p.pair_id.clone(), key, p.label_without_eot().to_string())?;
        }
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f32]) -> EmbeddingVector {
        EmbeddingVector {
            values: values.to_vec(),
            normalized: false,
        }
    }

    #[test]
    fn orthogonal_keys() {
        let mut ix = VectorIndex::new(2, "test");
        ix.insert("a".into(), v(&[1.0, 0.0]), "A".into()).unwrap();
        ix.insert("b".into(), v(&[0.0, 1.0]), "B".into()).unwrap();
        let r = ix.knn_search(&v(&[1.0, 0.0]), 1).unwrap();
        assert_eq!(r.pair_ids(), ["a"]);
        assert_eq!(r.neighbors[0].similarity, 1.0);
        let r = ix.knn_search(&v(&[1.0, 0.0]), 5).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r.neighbors[1].similarity, 0.0);
    }

    #[test]
    fn ties_break_by_pair_id() {
        let mut ix = VectorIndex::new(2, "test");
        for id in ["c", "a", "b"] {
            ix.insert(id.into(), v(&[1.0, 1.0]), id.into()).unwrap();
        }
        let r = ix.knn_search(&v(&[2.0, 2.0]), 2).unwrap();
        assert_eq!(r.pair_ids(), ["a", "b"]);
    }

    #[test]
    fn zero_vectors_score_zero() {
        let mut ix = VectorIndex::new(2, "test");
        ix.insert("z".into(), v(&[0.0, 0.0]), String::new()).unwrap();
        ix.insert("n".into(), v(&[-1.0, 0.0]), String::new()).unwrap();
        let r = ix.knn_search(&v(&[1.0, 0.0]), 2).unwrap();
        assert_eq!(r.pair_ids(), ["z", "n"]);
        assert_eq!(r.neighbors[1].similarity, -1.0);
        let r = ix.knn_search(&v(&[0.0, 0.0]), 2).unwrap();
        assert!(r.neighbors.iter().all(|n| n.similarity == 0.0));
    }

    #[test]
    fn errors() {
        let mut ix = VectorIndex::new(2, "test");
        assert!(matches!(
            ix.insert("a".into(), v(&[1.0]), String::new()),
            Err(RagError::DimensionMismatch { expected: 2, actual: 1 })
        ));
        ix.insert("a".into(), v(&[1.0, 0.0]), String::new()).unwrap();
        assert!(matches!(
            ix.insert("a".into(), v(&[1.0, 0.0]), String::new()),
            Err(RagError::DuplicatePairId(_))
        ));
        assert!(matches!(ix.knn_search(&v(&[1.0, 0.0, 0.0]), 1), Err(RagError::DimensionMismatch { .. })));
        assert!(matches!(ix.knn_search(&v(&[1.0, 0.0]), 0), Err(RagError::InvalidTopN)));
        assert!(matches!(
            ix.insert("nan".into(), v(&[f32::NAN, 0.0]), String::new()),
            Err(RagError::NonFiniteKey(_))
        ));
    }

    #[test]
    fn serialization_round_trip_and_corruption() {
        let mut ix = VectorIndex::new(3, "builtin:test");
        ix.insert("p1".into(), v(&[0.5, -0.25, 1.0]), "a();".into()).unwrap();
        ix.insert("p2".into(), v(&[0.0, 1.0, 0.0]), "é {}".into()).unwrap();
        let bytes = ix.to_bytes();
        let back = VectorIndex::from_bytes(&bytes).unwrap();
        assert_eq!(back.entries(), ix.entries());
        assert_eq!(back.embedder_id(), "builtin:test");
        assert_eq!(back.to_bytes(), bytes);
        assert!(VectorIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(VectorIndex::from_bytes(&bad).is_err());
        let empty = VectorIndex::new(384, "e");
        assert!(VectorIndex::from_bytes(&empty.to_bytes()).unwrap().is_empty());
    }
}

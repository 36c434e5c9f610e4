use std::time::Duration;

use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};

use super::RagError;

pub const DEFAULT_DIM: usize = 384;
pub const BUILTIN_ID_PREFIX: &str = "builtin:ngram-hash:v1:d";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub normalized: bool,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f32) -> Self {
        Self {
            values: self.values.iter().map(|v| v * c).collect(),
            normalized: false,
        }
    }
}

/// Feature-hashing embedder over character 2-, 3- and 4-grams with signed
/// buckets, L2-normalized. A pure function of its input text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashingEmbedder {
    dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn id(&self) -> String {
        format!("{BUILTIN_ID_PREFIX}{}", self.dim)
    }

    /// Empty text maps to the zero vector.
    pub fn embed(&self, text: &str) -> EmbeddingVector {
        let mut acc = vec![0f64; self.dim];
        let chars: Vec<char> = text.chars().collect();
        let mut buf = [0u8; 16];
        for n in 2..=4usize {
            if chars.len() < n {
                continue;
            }
            for window in chars.windows(n) {
                let mut len = 0;
                for ch in window {
                    len += ch.encode_utf8(&mut buf[len..]).len();
                }
                let h = fnv1a(&buf[..len]) ^ (n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                let h = fnv1a(&h.to_le_bytes());
                let bucket = (h % self.dim as u64) as usize;
                let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                acc[bucket] += sign;
            }
        }
        if chars.len() == 1 {
            let h = fnv1a(text.as_bytes());
            acc[(h % self.dim as u64) as usize] += 1.0;
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            if !text.is_empty() {
                tracing::debug!("hashing embedder produced a zero vector");
            } else {
                tracing::warn!("empty text embedded as the zero vector");
            }
            return EmbeddingVector {
                values: vec![0.0; self.dim],
                normalized: true,
            };
        }
        EmbeddingVector {
            values: acc.iter().map(|v| (v / norm) as f32).collect(),
            normalized: true,
        }
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
    dim: usize,
}

/// Client for an embedding service: `POST {base}/embed` with
/// `{"texts": [...]}` returning `{"vectors": [[...]], "dim": D}`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    client: reqwest::Client,
    base_url: String,
    dim: usize,
    pub batch_size: usize,
    pub max_in_flight: usize,
}

impl RemoteEmbedder {
    pub fn new(base_url: &str, dim: usize) -> Result<Self, RagError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| RagError::EmbeddingServiceUnavailable(e.to_string()))?;
        Ok(Self {
            client,
            base_url: base_url.trim_end_matches('/').to_string(),
            dim,
            batch_size: 64,
            max_in_flight: 8,
        })
    }

    pub fn id(&self) -> String {
        format!("remote:{}", self.base_url)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RagError> {
        let url = format!("{}/embed", self.base_url);
        let resp = self
            .client
            .post(&url)
            .json(&EmbedRequest { texts })
            .send()
            .await
            .map_err(|e| RagError::EmbeddingServiceUnavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(RagError::EmbeddingServiceUnavailable(format!(
                "{url} returned {}",
                resp.status()
            )));
        }
        let body: EmbedResponse = resp
            .json()
            .await
            .map_err(|e| RagError::EmbeddingServiceUnavailable(format!("malformed response: {e}")))?;
        if body.dim != self.dim {
            return Err(RagError::DimensionMismatch {
                expected: self.dim,
                actual: body.dim,
            });
        }
        if body.vectors.len() != texts.len() {
            return Err(RagError::EmbeddingServiceUnavailable(format!(
                "expected {} vectors, got {}",
                texts.len(),
                body.vectors.len()
            )));
        }
        body.vectors
            .into_iter()
            .map(|values| {
                if values.len() != self.dim {
                    return Err(RagError::DimensionMismatch {
                        expected: self.dim,
                        actual: values.len(),
                    });
                }
                Ok(EmbeddingVector {
                    values,
                    normalized: false,
                })
            })
            .collect()
    }

    pub async fn embed_many(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RagError> {
        let batches: Vec<Vec<EmbeddingVector>> = stream::iter(texts.chunks(self.batch_size.max(1)))
            .map(|chunk| self.embed_batch(chunk))
            .buffered(self.max_in_flight.max(1))
            .try_collect()
            .await?;
        Ok(batches.into_iter().flatten().collect())
    }
}

#[derive(Debug, Clone)]
pub enum Embedder {
    Builtin(HashingEmbedder),
    Remote(RemoteEmbedder),
}

impl Embedder {
    /// `builtin` or `remote:<base url>`.
    pub fn from_spec(spec: &str, dim: usize) -> Result<Self, RagError> {
        let spec = spec.trim();
        if spec == "builtin" {
            return Ok(Embedder::Builtin(HashingEmbedder::new(dim)));
        }
        if let Some(d) = spec.strip_prefix(BUILTIN_ID_PREFIX) {
            let dim = d.parse().map_err(|_| RagError::InvalidEmbedderSpec(spec.to_string()))?;
            return Ok(Embedder::Builtin(HashingEmbedder::new(dim)));
        }
        if let Some(url) = spec.strip_prefix("remote:") {
            if url.is_empty() {
                return Err(RagError::InvalidEmbedderSpec(spec.to_string()));
            }
            return Ok(Embedder::Remote(RemoteEmbedder::new(url, dim)?));
        }
        Err(RagError::InvalidEmbedderSpec(spec.to_string()))
    }

    pub fn id(&self) -> String {
        match self {
            Embedder::Builtin(e) => e.id(),
            Embedder::Remote(e) => e.id(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Embedder::Builtin(e) => e.dim(),
            Embedder::Remote(e) => e.dim(),
        }
    }

    pub async fn embed_many(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RagError> {
        match self {
            Embedder::Builtin(e) => Ok(texts.iter().map(|t| e.embed(t)).collect()),
            Embedder::Remote(e) => e.embed_many(texts).await,
        }
    }
}

pub async fn embed(text: &str, embedder: &Embedder) -> Result<EmbeddingVector, RagError> {
    let mut v = embedder.embed_many(&[text.to_string()]).await?;
    Ok(v.pop().expect("one vector per text"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_is_deterministic_and_normalized() {
        let e = HashingEmbedder::default();
        let a = e.embed("int foo(a,b)");
        assert_eq!(a, e.embed("int foo(a,b)"));
        assert_eq!(a.dim(), 384);
        assert!((a.norm() - 1.0).abs() <= 1e-5);
        for t in ["x", "ab", "for (int i = 0; i < n; ++i) { sum += v[i]; }", "é"] {
            assert!((e.embed(t).norm() - 1.0).abs() <= 1e-5, "{t}");
        }
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let v = HashingEmbedder::default().embed("");
        assert!(v.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn similar_code_is_closer_than_unrelated_code() {
        let e = HashingEmbedder::default();
        let cos = |a: &EmbeddingVector, b: &EmbeddingVector| {
            a.values.iter().zip(&b.values).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum::<f64>()
        };
        let a = e.embed("if (rc != 0) { pdLog(PD_DEV, \"failed\"); }");
        let b = e.embed("if (rc != 0) { pdLog(PD_STACK, \"error\"); }");
        let c = e.embed("public static void main(String[] args)");
        assert!(cos(&a, &b) > cos(&a, &c));
    }

    #[test]
    fn spec_parsing() {
        assert!(matches!(Embedder::from_spec("builtin", 384), Ok(Embedder::Builtin(_))));
        let e = Embedder::from_spec("remote:http://localhost:9/", 384).unwrap();
        assert_eq!(e.id(), "remote:http://localhost:9");
        let b = Embedder::from_spec("builtin", 128).unwrap();
        let again = Embedder::from_spec(&b.id(), 384).unwrap();
        assert_eq!(again.dim(), 128);
        assert!(Embedder::from_spec("openai", 384).is_err());
    }
}

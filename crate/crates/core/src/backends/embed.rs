//! Deterministic text embeddings.
//!
//! The built-in embedder hashes character trigrams of the lowercased text
//! into a fixed number of buckets (FNV-1a) and L2-normalizes the counts.
//! No model weights, fully reproducible.

/// Embeds text into a fixed-dimension vector. Implementations must be pure
/// and usable from multiple threads.
pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, text: &str) -> Vec<f64>;
    fn dim(&self) -> usize;
}

/// Hashed bag-of-character-trigrams embedder with L2 normalization.
#[derive(Debug, Clone)]
pub struct TrigramHashEmbedder {
    dim: usize,
}

impl Default for TrigramHashEmbedder {
    fn default() -> Self {
        TrigramHashEmbedder { dim: 256 }
    }
}

impl TrigramHashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        TrigramHashEmbedder { dim }
    }
}

/// FNV-1a over a byte slice. Shared with tests that reimplement the
/// bucketing independently.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Character trigrams of the lowercased text. Texts shorter than three
/// characters contribute a single gram covering the whole text.
pub fn trigrams(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    if chars.is_empty() {
        return Vec::new();
    }
    if chars.len() < 3 {
        return vec![chars.iter().collect()];
    }
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

impl EmbeddingBackend for TrigramHashEmbedder {
    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0f64; self.dim];
        for gram in trigrams(text) {
            let bucket = (fnv1a64(gram.as_bytes()) % self.dim as u64) as usize;
            v[bucket] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// Cosine of two equal-length vectors; 0 when either has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

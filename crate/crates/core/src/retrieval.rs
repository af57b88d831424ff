//! Edit-statement memory with deterministic hashed term-frequency
//! embeddings and brute-force top-1 cosine retrieval. The embedder is
//! swappable; an external embedding service can replace the default.

use serde::Serialize;

use crate::edits::Edit;
use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::templates::{self, RenderedText};

/// Default embedding dimensionality.
pub const DEFAULT_DIM: usize = 256;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100_0000_01b3);
    }
    hash
}

/// Lowercased alphanumeric token runs; everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Text-to-vector interface. Implementations must be deterministic for a
/// fixed configuration.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>>;
}

/// Deterministic hashed term-frequency embedder: each token hashes to one
/// of `dim` buckets, counts accumulate, and the vector is L2-normalized.
/// Empty text embeds to the all-zeros vector.
#[derive(Clone, Debug)]
pub struct HashedTfEmbedder {
    dim: usize,
}

impl HashedTfEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashedTfEmbedder { dim }
    }
}

impl Default for HashedTfEmbedder {
    fn default() -> Self {
        HashedTfEmbedder::new(DEFAULT_DIM)
    }
}

impl Embedder for HashedTfEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let mut v = vec![0.0f32; self.dim];
        for token in tokenize(text) {
            let bucket = (fnv1a64(token.as_bytes()) % self.dim as u64) as usize;
            v[bucket] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        Ok(v)
    }
}

/// Cosine similarity; zero whenever either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// One memorized edit: its statement text, the structured edit, the new
/// object's display label, and the statement embedding.
#[derive(Clone, Debug, Serialize)]
pub struct MemoryEntry {
    /// Position in insertion order; doubles as the retrieval tie-breaker.
    pub id: usize,
    pub statement: RenderedText,
    pub edit: Edit,
    pub subject_label: String,
    pub new_object_label: String,
    vector: Vec<f32>,
}

/// Immutable store of edit statements supporting top-1 retrieval by cosine
/// similarity (brute-force scan — the reference semantics) and exact
/// (subject, relation) lookup.
pub struct EditMemory {
    embedder: Box<dyn Embedder>,
    entries: Vec<MemoryEntry>,
}

impl EditMemory {
    /// Build a memory with the default hashed-TF embedder.
    pub fn build(g: &KnowledgeGraph, edits: &[Edit]) -> Result<Self> {
        Self::build_with(g, edits, Box::<HashedTfEmbedder>::default())
    }

    /// Build a memory, embedding each edit's rendered statement. Entry order
    /// is input order.
    pub fn build_with(
        g: &KnowledgeGraph,
        edits: &[Edit],
        embedder: Box<dyn Embedder>,
    ) -> Result<Self> {
        let mut entries = Vec::with_capacity(edits.len());
        for (id, edit) in edits.iter().enumerate() {
            let statement = templates::render_edit_statement(g, edit)?;
            let vector = embedder.embed(statement.as_str())?;
            entries.push(MemoryEntry {
                id,
                vector,
                subject_label: g.label(&edit.subject).to_string(),
                new_object_label: g.label(&edit.new).to_string(),
                edit: edit.clone(),
                statement,
            });
        }
        Ok(EditMemory { embedder, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    /// The stored statement closest to the query by cosine similarity;
    /// `None` on an empty memory. Ties break toward the lowest entry id.
    pub fn retrieve_top1(&self, query: &str) -> Result<Option<(&MemoryEntry, f32)>> {
        let qv = self.embedder.embed(query)?;
        let mut best: Option<(&MemoryEntry, f32)> = None;
        for entry in &self.entries {
            let score = cosine(&qv, &entry.vector);
            match best {
                Some((_, top)) if score <= top => {}
                _ => best = Some((entry, score)),
            }
        }
        Ok(best)
    }

    /// First entry whose edit rewrites (subject, relation). The subject may
    /// be given as an entity id or as a display label.
    pub fn lookup_exact(&self, subject: &str, relation: &str) -> Option<&MemoryEntry> {
        let wanted = templates::normalize(subject);
        self.entries.iter().find(|e| {
            e.edit.relation == relation
                && (e.edit.subject == subject || templates::normalize(&e.subject_label) == wanted)
        })
    }
}

/// Client for an external embedding service: JSON over HTTP, request
/// `{"texts": [..]}`, response `{"vectors": [[..]]}`. The declared
/// dimension is validated against every response.
pub struct HttpEmbedder {
    agent: ureq::Agent,
    endpoint: String,
    dim: usize,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: Vec<&'a str>,
}

#[derive(serde::Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, dim: usize, timeout: std::time::Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpEmbedder {
            agent,
            endpoint: endpoint.into(),
            dim,
        }
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let mut response = self
            .agent
            .post(&self.endpoint)
            .send_json(&EmbedRequest { texts: vec![text] })
            .map_err(|e| Error::Transport {
                attempts: 1,
                message: e.to_string(),
            })?;
        let body: EmbedResponse =
            response
                .body_mut()
                .read_json()
                .map_err(|e| Error::CompletionParse {
                    message: format!("embedding response: {e}"),
                    raw: String::new(),
                })?;
        let vector = body
            .vectors
            .into_iter()
            .next()
            .ok_or(Error::EmbeddingDimension {
                declared: self.dim,
                got: 0,
            })?;
        if vector.len() != self.dim {
            return Err(Error::EmbeddingDimension {
                declared: self.dim,
                got: vector.len(),
            });
        }
        Ok(vector)
    }
}

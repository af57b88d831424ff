//! Crate-wide error type. Retriable construction outcomes (counterfactual /
//! temporal rejection reasons) are separate status enums in [`crate::edits`],
//! not errors.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A flat input file (triples, config, memory) could not be parsed.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A relation id that does not resolve in the relation registry.
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    /// An entity id that does not resolve in the graph.
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    /// An entity with no usable human-readable label.
    #[error("missing label for entity `{0}`")]
    MissingLabel(String),

    /// A constraint check needed the class of an entity that has none,
    /// declared or inferable.
    #[error("missing class metadata for entity `{0}`")]
    MissingClassMetadata(String),

    /// A relation whose registry record lacks the template a renderer needs.
    #[error("relation `{relation}` has no usable {which} template")]
    MissingTemplate { relation: String, which: String },

    /// A registry record with a malformed template (wrong placeholder count).
    #[error("relation `{relation}`: {which} template must contain {expected}, got `{template}`")]
    BadTemplate {
        relation: String,
        which: String,
        expected: String,
        template: String,
    },

    /// Two snapshots disagree on the metadata of a relation being compared.
    #[error("registry mismatch between snapshots `{old}` and `{new}` on relation `{relation}`")]
    RegistryMismatch {
        old: String,
        new: String,
        relation: String,
    },

    /// Chain length outside the supported 2..=4 hop range.
    #[error("chain length {0} outside supported range 2..=4")]
    ChainLength(usize),

    /// A chain whose hop i+1 does not start at hop i's object.
    #[error("chain disconnected at position {position}: object does not feed the next subject")]
    Disconnected { position: usize },

    /// A chain offered as valid that violates sampling constraints.
    #[error("chain violates constraints: {}", reasons.join("; "))]
    ChainConstraint { reasons: Vec<String> },

    /// Batch size of zero.
    #[error("batch size must be positive, got {0}")]
    InvalidBatchSize(usize),

    /// The rejection-sampling budget ran out before a valid chain appeared.
    #[error("sampling exhausted after {attempts} attempts")]
    SamplerExhausted { attempts: usize },

    /// `restrict_subgraph` called with a fraction outside (0, 1].
    #[error("top_fraction must be in (0, 1], got {0}")]
    InvalidTopFraction(f64),

    /// Contradictory edits for one (subject, relation) inside a single batch.
    #[error("conflicting edits for ({subject}, {relation}) in batch {batch}")]
    EditConflict {
        subject: String,
        relation: String,
        batch: usize,
    },

    /// An instance file element that does not satisfy the schema.
    #[error("schema violation: {field}, instance {index}")]
    SchemaViolation { field: String, index: usize },

    /// Metric asked to average over nothing.
    #[error("empty edit list")]
    EmptyEdits,

    /// Evaluation asked to run over nothing.
    #[error("empty instance list")]
    EmptyInstances,

    /// A configuration value outside the supported range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A prompt an oracle backend could not map back onto the registry.
    #[error("cannot parse prompt: `{0}`")]
    UnparseablePrompt(String),

    /// A completion the HTTP backend could not interpret. Never guessed at.
    #[error("completion parse error: {message}; raw: `{raw}`")]
    CompletionParse { message: String, raw: String },

    /// Transport-level failure after exhausting retries.
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },

    /// An embedding service that returned vectors of the wrong shape.
    #[error("embedding dimension mismatch: declared {declared}, got {got}")]
    EmbeddingDimension { declared: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

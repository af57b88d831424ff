//! Run configuration: a JSON config file, command-line overrides on top,
//! and built-in defaults underneath. Flags win over the file, the file wins
//! over defaults. The API auth token is deliberately absent here — HTTP
//! backends read it from the environment and it never appears in a config
//! file or in any output.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use hopeval::lm::AnswerMode;
use hopeval::mello::{RetrievalMode, DEFAULT_MAX_HOPS};
use hopeval::metrics::Editor;
use serde::Deserialize;

use crate::{config_error, CliResult};

/// Which base model answers questions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendChoice {
    /// Deterministic graph-backed oracle.
    Oracle,
    /// Oracle whose single-hop recall fails with probability 1 − recall_prob.
    OracleStochastic,
    /// JSON-over-HTTP completion endpoint.
    Http,
}

/// Which editor the evaluation scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditorChoice {
    None,
    HardEdit,
    Mello,
}

impl EditorChoice {
    pub fn to_editor(self) -> Editor {
        match self {
            EditorChoice::None => Editor::None,
            EditorChoice::HardEdit => Editor::HardEdit,
            EditorChoice::Mello => Editor::Mello,
        }
    }
}

/// How the memory loop looks up stored edits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalChoice {
    Cosine,
    Exact,
}

impl RetrievalChoice {
    pub fn to_mode(self) -> RetrievalMode {
        match self {
            RetrievalChoice::Cosine => RetrievalMode::Cosine,
            RetrievalChoice::Exact => RetrievalMode::ExactSubjectRelation,
        }
    }
}

/// Whole-question prompting style.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeChoice {
    Direct,
    Cot,
}

impl ModeChoice {
    pub fn to_mode(self) -> AnswerMode {
        match self {
            ModeChoice::Direct => AnswerMode::Direct,
            ModeChoice::Cot => AnswerMode::Cot,
        }
    }
}

/// The config file: every field optional, unknown keys rejected so typos
/// surface as configuration errors instead of silently applying defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub triples: Option<PathBuf>,
    pub relations: Option<PathBuf>,
    pub new_triples: Option<PathBuf>,
    pub seed: Option<u64>,
    pub hops: Option<Vec<usize>>,
    pub count: Option<usize>,
    pub k: Option<Vec<usize>>,
    pub editor: Option<EditorChoice>,
    pub backend: Option<BackendChoice>,
    pub endpoint: Option<String>,
    pub recall_prob: Option<f64>,
    pub embedding: Option<String>,
    pub out: Option<PathBuf>,
    pub run_id: Option<String>,
    pub max_hops: Option<usize>,
    pub modes: Option<Vec<ModeChoice>>,
    pub retrieval: Option<RetrievalChoice>,
    pub jobs: Option<usize>,
    pub retries: Option<u32>,
    pub timeout_secs: Option<u64>,
    pub backoff_ms: Option<u64>,
    pub chain_retries: Option<usize>,
    pub sample_budget: Option<usize>,
    pub prompts_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| config_error(format!("config {}: {e}", path.display())))
    }
}

/// Command-line overrides, all global so they may follow the subcommand.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    /// Triple TSV for the (old) graph snapshot.
    #[arg(long, global = true)]
    pub triples: Option<PathBuf>,

    /// Relation registry JSON (optionally with declared entities).
    #[arg(long, global = true)]
    pub relations: Option<PathBuf>,

    /// Triple TSV for the new snapshot (`edit --temporal`, `diff`).
    #[arg(long, global = true)]
    pub new_triples: Option<PathBuf>,

    /// Master seed; all randomness flows from it through named sub-streams.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Chain lengths to sample, e.g. 2,3,4.
    #[arg(long, global = true, value_delimiter = ',')]
    pub hops: Option<Vec<usize>>,

    /// Chains requested per hop count.
    #[arg(long, global = true)]
    pub count: Option<usize>,

    /// Batch sizes to evaluate, e.g. 1,100.
    #[arg(short, long, global = true, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,

    /// Editor under evaluation.
    #[arg(long, global = true, value_enum)]
    pub editor: Option<EditorChoice>,

    /// Base model backend.
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendChoice>,

    /// Completion endpoint URL for the http backend.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,

    /// Per-fact recall probability for oracle-stochastic.
    #[arg(long, global = true)]
    pub recall_prob: Option<f64>,

    /// Statement embedding for the edit memory (hashed-tf).
    #[arg(long, global = true)]
    pub embedding: Option<String>,

    /// Output directory; each run writes under a run-id subfolder.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Run-id subfolder name (defaults to command + seed).
    #[arg(long, global = true)]
    pub run_id: Option<String>,

    /// Hop cap for the memory loop.
    #[arg(long, global = true)]
    pub max_hops: Option<usize>,

    /// Question answering modes to score, e.g. direct,cot.
    #[arg(long, global = true, value_delimiter = ',', value_enum)]
    pub modes: Option<Vec<ModeChoice>>,

    /// Memory lookup used by the mello editor.
    #[arg(long, global = true, value_enum)]
    pub retrieval: Option<RetrievalChoice>,

    /// Evaluation worker count (1 = fully sequential).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// HTTP attempt count per request.
    #[arg(long, global = true)]
    pub retries: Option<u32>,

    /// HTTP request timeout in seconds.
    #[arg(long, global = true)]
    pub timeout_secs: Option<u64>,

    /// Initial HTTP retry backoff in milliseconds.
    #[arg(long, global = true)]
    pub backoff_ms: Option<u64>,

    /// Counterfactual draw attempts per chain.
    #[arg(long, global = true)]
    pub chain_retries: Option<usize>,

    /// Sampling attempt budget per requested chain.
    #[arg(long, global = true)]
    pub sample_budget: Option<usize>,

    /// Directory of prompt templates for the http backend.
    #[arg(long, global = true)]
    pub prompts_dir: Option<PathBuf>,
}

/// Fully resolved configuration a command runs with.
#[derive(Debug)]
pub struct RunConfig {
    pub triples: Option<PathBuf>,
    pub relations: Option<PathBuf>,
    pub new_triples: Option<PathBuf>,
    pub seed: Option<u64>,
    pub hops: Vec<usize>,
    pub count: usize,
    pub k: Vec<usize>,
    pub editor: EditorChoice,
    pub backend: BackendChoice,
    pub endpoint: Option<String>,
    pub recall_prob: f64,
    pub embedding: String,
    pub out: PathBuf,
    pub run_id: Option<String>,
    pub max_hops: usize,
    pub modes: Vec<ModeChoice>,
    pub retrieval: RetrievalChoice,
    pub jobs: usize,
    pub retries: u32,
    pub timeout_secs: u64,
    pub backoff_ms: u64,
    pub chain_retries: usize,
    pub sample_budget: usize,
    pub prompts_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Defaults ⟵ config file ⟵ flags, rightmost wins.
    pub fn resolve(file: FileConfig, flags: Overrides) -> CliResult<Self> {
        let cfg = RunConfig {
            triples: flags.triples.or(file.triples),
            relations: flags.relations.or(file.relations),
            new_triples: flags.new_triples.or(file.new_triples),
            seed: flags.seed.or(file.seed),
            hops: flags.hops.or(file.hops).unwrap_or_else(|| vec![2, 3, 4]),
            count: flags.count.or(file.count).unwrap_or(100),
            k: flags.k.or(file.k).unwrap_or_else(|| vec![1]),
            editor: flags.editor.or(file.editor).unwrap_or(EditorChoice::None),
            backend: flags
                .backend
                .or(file.backend)
                .unwrap_or(BackendChoice::Oracle),
            endpoint: flags.endpoint.or(file.endpoint),
            recall_prob: flags.recall_prob.or(file.recall_prob).unwrap_or(0.8),
            embedding: flags
                .embedding
                .or(file.embedding)
                .unwrap_or_else(|| "hashed-tf".to_string()),
            out: flags
                .out
                .or(file.out)
                .unwrap_or_else(|| PathBuf::from("runs")),
            run_id: flags.run_id.or(file.run_id),
            max_hops: flags.max_hops.or(file.max_hops).unwrap_or(DEFAULT_MAX_HOPS),
            modes: flags
                .modes
                .or(file.modes)
                .unwrap_or_else(|| vec![ModeChoice::Direct]),
            retrieval: flags
                .retrieval
                .or(file.retrieval)
                .unwrap_or(RetrievalChoice::Cosine),
            jobs: flags.jobs.or(file.jobs).unwrap_or(1),
            retries: flags.retries.or(file.retries).unwrap_or(3),
            timeout_secs: flags.timeout_secs.or(file.timeout_secs).unwrap_or(30),
            backoff_ms: flags.backoff_ms.or(file.backoff_ms).unwrap_or(250),
            chain_retries: flags.chain_retries.or(file.chain_retries).unwrap_or(25),
            sample_budget: flags.sample_budget.or(file.sample_budget).unwrap_or(400),
            prompts_dir: flags.prompts_dir.or(file.prompts_dir),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        if self.hops.is_empty() {
            return Err(config_error("hops list must not be empty"));
        }
        if self.k.is_empty() {
            return Err(config_error("k list must not be empty"));
        }
        if self.k.contains(&0) {
            return Err(config_error("batch size k must be at least 1"));
        }
        if self.modes.is_empty() {
            return Err(config_error("modes list must not be empty"));
        }
        if self.jobs == 0 {
            return Err(config_error("jobs must be at least 1"));
        }
        if self.max_hops == 0 {
            return Err(config_error("max_hops must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.recall_prob) {
            return Err(config_error("recall_prob must lie in [0, 1]"));
        }
        if self.embedding != "hashed-tf" {
            return Err(config_error(format!(
                "unsupported embedding `{}`; the built-in choice is `hashed-tf`",
                self.embedding
            )));
        }
        Ok(())
    }

    /// The seed, or a configuration error naming the command that needs it.
    pub fn require_seed(&self, command: &str) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| config_error(format!("`{command}` requires a seed (--seed or config)")))
    }
}

//! Language-model capability interface and the built-in backends: a
//! graph-oracle, a hard-edit simulator, a seeded stochastic-recall wrapper,
//! and an HTTP completion client.

pub mod http;
pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::edits::Instance;
use crate::error::Result;

/// Prompting style for whole-question answering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    /// Ask for the answer directly.
    Direct,
    /// Ask for step-by-step reasoning before the answer.
    Cot,
}

/// Gold decomposition context for one benchmark instance: the head entity
/// and the relation ids of the underlying chain, in hop order. Oracle
/// backends use it to decompose without free-text parsing; HTTP backends
/// ignore it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalContext {
    pub head_subject: String,
    pub relations: Vec<String>,
}

impl EvalContext {
    pub fn for_instance(instance: &Instance) -> Self {
        EvalContext {
            head_subject: instance
                .orig_triples
                .first()
                .map(|t| t.subject.clone())
                .unwrap_or_default(),
            relations: instance
                .orig_triples
                .iter()
                .map(|t| t.relation.clone())
                .collect(),
        }
    }
}

/// One completed hop of an in-progress decomposition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptStep {
    pub subquestion: String,
    pub answer: String,
}

/// A proposed next subquestion. `resolved_subject` and `relation` are
/// structured hints the oracle backends attach; free-text backends leave
/// them empty.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subquestion {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
}

/// Decomposition step: either one more subquestion, or the final answer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecompositionStep {
    Subquestion(Subquestion),
    Final(String),
}

/// Outcome of checking a retrieved statement against a tentative answer.
/// `adjusted` carries a replacement answer parsed from free text when the
/// backend supplies one; structured callers fall back to the retrieved
/// edit's new object.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckVerdict {
    Contradicts { adjusted: Option<String> },
    Consistent,
}

/// The capability set every backend provides. All methods take shared
/// references so one backend can serve concurrent evaluation jobs.
pub trait LmBackend: Send + Sync {
    /// Short identifier for traces and reports.
    fn name(&self) -> &str;

    /// Complete a cloze prompt ("The capital city of France is") with the
    /// bare answer text.
    fn answer_cloze(&self, prompt: &str) -> Result<String>;

    /// Answer a composed multi-hop question in one shot.
    fn answer_multihop(
        &self,
        question: &str,
        mode: AnswerMode,
        ctx: Option<&EvalContext>,
    ) -> Result<String>;

    /// Propose the next subquestion (or the final answer) given the original
    /// question and the transcript of hops answered so far.
    fn propose_subquestion(
        &self,
        question: &str,
        transcript: &[TranscriptStep],
        ctx: Option<&EvalContext>,
    ) -> Result<DecompositionStep>;

    /// Answer a single-hop subquestion.
    fn answer_subquestion(&self, subquestion: &str) -> Result<String>;

    /// Judge whether a retrieved statement contradicts the tentative answer
    /// to the subquestion.
    fn check_contradiction(
        &self,
        statement: &str,
        tentative: &str,
        subquestion: &str,
    ) -> Result<CheckVerdict>;
}

//! Memory-based editing loop: decompose the question one subquestion at a
//! time, answer tentatively from the base model, retrieve the closest
//! stored edit, self-check for contradiction, and adjust the running
//! answer — recording a full trace.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lm::oracle::UNKNOWN_ANSWER;
use crate::lm::{CheckVerdict, DecompositionStep, EvalContext, LmBackend, TranscriptStep};
use crate::retrieval::{EditMemory, MemoryEntry};

/// Self-check outcome recorded for one hop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// The retrieved statement contradicts the tentative answer.
    Contradicts,
    /// The retrieved statement does not bear on the tentative answer.
    Consistent,
    /// Nothing retrieved (empty memory or no exact match).
    NoMemory,
}

/// Why the loop stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// The backend proposed a final answer.
    Final,
    /// The hop cap was reached before a final answer.
    HopCap,
    /// A backend call failed; the error is recorded in the trace.
    BackendError,
}

/// One hop of the loop.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MelloStep {
    pub subquestion: String,
    pub tentative_answer: String,
    pub retrieved_statement: Option<String>,
    pub verdict: Verdict,
    /// The answer carried into the next hop: the retrieved edit's new
    /// object on contradiction, the tentative answer otherwise.
    pub intermediate_answer: String,
}

/// Complete record of one run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MelloTrace {
    pub steps: Vec<MelloStep>,
    pub final_answer: String,
    pub terminated: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Serialize)]
struct StepRecord<'a> {
    step: usize,
    #[serde(flatten)]
    body: &'a MelloStep,
}

#[derive(Serialize)]
struct SummaryRecord<'a> {
    final_answer: &'a str,
    terminated: Termination,
    step_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

impl MelloTrace {
    /// One JSON line per step followed by a summary line.
    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for (step, body) in self.steps.iter().enumerate() {
            let line = serde_json::to_string(&StepRecord { step, body })?;
            writeln!(w, "{line}")?;
        }
        let summary = serde_json::to_string(&SummaryRecord {
            final_answer: &self.final_answer,
            terminated: self.terminated,
            step_count: self.steps.len(),
            error: self.error.as_deref(),
        })?;
        writeln!(w, "{summary}")
    }
}

/// How stored edits are looked up per hop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalMode {
    /// Top-1 cosine over statement embeddings, queried with the bare
    /// subquestion text.
    Cosine,
    /// Exact (subject, relation) lookup using the structured hints a
    /// backend attaches to its subquestions; hops without hints retrieve
    /// nothing.
    ExactSubjectRelation,
}

/// Configured runner; shareable across threads along with its memory.
pub struct Mello<'a> {
    lm: &'a dyn LmBackend,
    memory: &'a EditMemory,
    retrieval: RetrievalMode,
    max_hops: usize,
}

pub const DEFAULT_MAX_HOPS: usize = 8;

impl<'a> Mello<'a> {
    pub fn new(lm: &'a dyn LmBackend, memory: &'a EditMemory) -> Self {
        Mello {
            lm,
            memory,
            retrieval: RetrievalMode::Cosine,
            max_hops: DEFAULT_MAX_HOPS,
        }
    }

    pub fn with_retrieval(mut self, mode: RetrievalMode) -> Self {
        self.retrieval = mode;
        self
    }

    pub fn with_max_hops(mut self, max_hops: usize) -> Self {
        assert!(max_hops >= 1, "at least one hop is required");
        self.max_hops = max_hops;
        self
    }

    fn retrieve(
        &self,
        subquestion: &crate::lm::Subquestion,
    ) -> Result<Option<(&'a MemoryEntry, f32)>> {
        match self.retrieval {
            RetrievalMode::Cosine => self.memory.retrieve_top1(&subquestion.text),
            RetrievalMode::ExactSubjectRelation => {
                let hit = subquestion
                    .resolved_subject
                    .as_deref()
                    .zip(subquestion.relation.as_deref())
                    .and_then(|(s, r)| self.memory.lookup_exact(s, r));
                Ok(hit.map(|entry| (entry, 1.0)))
            }
        }
    }

    /// Run the loop on one question. `ctx` supplies the gold decomposition
    /// for oracle backends; free-text backends ignore it. Never panics on
    /// an empty memory; backend failures terminate the trace instead of
    /// propagating.
    pub fn run(&self, question: &str, ctx: Option<&EvalContext>) -> MelloTrace {
        let mut steps: Vec<MelloStep> = Vec::new();
        let mut transcript: Vec<TranscriptStep> = Vec::new();

        let fail = |steps: &[MelloStep], error: String| MelloTrace {
            steps: steps.to_vec(),
            final_answer: steps
                .last()
                .map(|s| s.intermediate_answer.clone())
                .unwrap_or_else(|| UNKNOWN_ANSWER.to_string()),
            terminated: Termination::BackendError,
            error: Some(error),
        };

        for _ in 0..self.max_hops {
            let proposal = match self.lm.propose_subquestion(question, &transcript, ctx) {
                Ok(p) => p,
                Err(e) => return fail(&steps, e.to_string()),
            };
            let subquestion = match proposal {
                DecompositionStep::Final(answer) => {
                    return MelloTrace {
                        steps,
                        final_answer: answer,
                        terminated: Termination::Final,
                        error: None,
                    }
                }
                DecompositionStep::Subquestion(sq) => sq,
            };

            let tentative = match self.lm.answer_subquestion(&subquestion.text) {
                Ok(t) => t,
                Err(e) => return fail(&steps, e.to_string()),
            };

            let retrieved = match self.retrieve(&subquestion) {
                Ok(r) => r,
                Err(e) => return fail(&steps, e.to_string()),
            };

            let (verdict, retrieved_statement, intermediate) = match retrieved {
                None => (Verdict::NoMemory, None, tentative.clone()),
                Some((entry, _score)) => {
                    let statement = entry.statement.as_str().to_string();
                    match self
                        .lm
                        .check_contradiction(&statement, &tentative, &subquestion.text)
                    {
                        Err(e) => return fail(&steps, e.to_string()),
                        Ok(CheckVerdict::Consistent) => {
                            (Verdict::Consistent, Some(statement), tentative.clone())
                        }
                        // The corrected answer comes from the structured
                        // edit carried by the memory entry, not from
                        // re-parsing text.
                        Ok(CheckVerdict::Contradicts { .. }) => (
                            Verdict::Contradicts,
                            Some(statement),
                            entry.new_object_label.clone(),
                        ),
                    }
                }
            };

            steps.push(MelloStep {
                subquestion: subquestion.text.clone(),
                tentative_answer: tentative,
                retrieved_statement,
                verdict,
                intermediate_answer: intermediate.clone(),
            });
            transcript.push(TranscriptStep {
                subquestion: subquestion.text,
                answer: intermediate,
            });
        }

        MelloTrace {
            final_answer: steps
                .last()
                .map(|s| s.intermediate_answer.clone())
                .unwrap_or_else(|| UNKNOWN_ANSWER.to_string()),
            steps,
            terminated: Termination::HopCap,
            error: None,
        }
    }
}

/// One-shot convenience over [`Mello`] with cosine retrieval.
pub fn run_mello(
    lm: &dyn LmBackend,
    memory: &EditMemory,
    question: &str,
    max_hops: usize,
    ctx: Option<&EvalContext>,
) -> MelloTrace {
    Mello::new(lm, memory)
        .with_max_hops(max_hops)
        .run(question, ctx)
}

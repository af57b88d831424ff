//! Deterministic graph-backed backends: a base oracle that answers from the
//! knowledge graph, a hard-edit simulator that recalls edits verbatim on
//! single-hop prompts while traversing stale facts on multi-hop questions,
//! and a seeded wrapper that randomly forgets cloze answers.

use std::collections::BTreeMap;
use std::sync::Mutex;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::edits::Edit;
use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::lm::{
    AnswerMode, CheckVerdict, DecompositionStep, EvalContext, LmBackend, Subquestion,
    TranscriptStep,
};
use crate::templates::{self, normalize};

/// Sentinel answer for facts a backend cannot recall. Compares unequal to
/// every fixture and synthesized label under normalization.
pub const UNKNOWN_ANSWER: &str = "unknown";

fn traverse(g: &KnowledgeGraph, ctx: &EvalContext) -> Option<String> {
    let mut current = ctx.head_subject.clone();
    for relation in &ctx.relations {
        current = g.first_object(&current, relation)?.to_string();
    }
    Some(current)
}

/// Backend that knows the knowledge graph perfectly. Decomposition follows
/// the evaluation context's gold relation chain, isolating the agent loop's
/// control flow from free-text decomposition quality.
pub struct OracleBase<'g> {
    g: &'g KnowledgeGraph,
}

impl<'g> OracleBase<'g> {
    pub fn new(g: &'g KnowledgeGraph) -> Self {
        OracleBase { g }
    }

    pub fn graph(&self) -> &'g KnowledgeGraph {
        self.g
    }
}

impl LmBackend for OracleBase<'_> {
    fn name(&self) -> &str {
        "oracle-base"
    }

    fn answer_cloze(&self, prompt: &str) -> Result<String> {
        let (subject, relation) = templates::parse_cloze(self.g, prompt)?;
        Ok(self
            .g
            .query_objects(&subject, &relation)?
            .first()
            .map(|o| self.g.label(o).to_string())
            .unwrap_or_else(|| UNKNOWN_ANSWER.to_string()))
    }

    fn answer_multihop(
        &self,
        _question: &str,
        _mode: AnswerMode,
        ctx: Option<&EvalContext>,
    ) -> Result<String> {
        Ok(ctx
            .and_then(|c| traverse(self.g, c))
            .map(|tail| self.g.label(&tail).to_string())
            .unwrap_or_else(|| UNKNOWN_ANSWER.to_string()))
    }

    fn propose_subquestion(
        &self,
        question: &str,
        transcript: &[TranscriptStep],
        ctx: Option<&EvalContext>,
    ) -> Result<DecompositionStep> {
        let ctx = ctx.ok_or_else(|| {
            Error::UnparseablePrompt(format!(
                "oracle decomposition requires evaluation context: {question}"
            ))
        })?;
        let hop = transcript.len();
        if hop >= ctx.relations.len() {
            let answer = transcript
                .last()
                .map(|s| s.answer.clone())
                .unwrap_or_else(|| UNKNOWN_ANSWER.to_string());
            return Ok(DecompositionStep::Final(answer));
        }
        let (subject_label, resolved) = if hop == 0 {
            let id = ctx.head_subject.clone();
            let resolved = self.g.contains_entity(&id).then(|| id.clone());
            (self.g.label(&id).to_string(), resolved)
        } else {
            let label = transcript[hop - 1].answer.clone();
            let resolved = self.g.entity_by_label(&label).map(str::to_string);
            (label, resolved)
        };
        let meta = self.g.relation(&ctx.relations[hop])?;
        Ok(DecompositionStep::Subquestion(Subquestion {
            text: meta.question_with(&subject_label),
            resolved_subject: resolved,
            relation: Some(meta.id.clone()),
        }))
    }

    fn answer_subquestion(&self, subquestion: &str) -> Result<String> {
        let parsed = templates::parse_question_loose(self.g, subquestion)?;
        let answer = parsed
            .subject
            .and_then(|s| self.g.first_object(&s, &parsed.relation))
            .map(|o| self.g.label(o).to_string());
        Ok(answer.unwrap_or_else(|| UNKNOWN_ANSWER.to_string()))
    }

    fn check_contradiction(
        &self,
        statement: &str,
        tentative: &str,
        subquestion: &str,
    ) -> Result<CheckVerdict> {
        let st = templates::parse_statement_loose(self.g, statement)?;
        let q = templates::parse_question_loose(self.g, subquestion)?;
        let same_subject = match (&st.subject, &q.subject) {
            (Some(a), Some(b)) => a == b,
            _ => normalize(&st.subject_text) == normalize(&q.subject_text),
        };
        if same_subject
            && st.relation == q.relation
            && normalize(&st.object_text) != normalize(tentative)
        {
            Ok(CheckVerdict::Contradicts {
                adjusted: Some(st.object_text),
            })
        } else {
            Ok(CheckVerdict::Consistent)
        }
    }
}

/// Simulates a weight-edited model: edited facts are recalled verbatim on
/// single-hop cloze prompts, but multi-hop traversal still follows the
/// unedited graph — the failure mode that motivates memory-based editing.
pub struct OracleHardEdit<'g> {
    base: OracleBase<'g>,
    edited: BTreeMap<(String, String), String>,
}

impl<'g> OracleHardEdit<'g> {
    /// Later edits to the same (subject, relation) pair override earlier
    /// ones, matching sequential-injection semantics.
    pub fn new(g: &'g KnowledgeGraph, edits: &[Edit]) -> Self {
        let edited = edits
            .iter()
            .map(|e| ((e.subject.clone(), e.relation.clone()), e.new.clone()))
            .collect();
        OracleHardEdit {
            base: OracleBase::new(g),
            edited,
        }
    }
}

impl LmBackend for OracleHardEdit<'_> {
    fn name(&self) -> &str {
        "oracle-hard-edit"
    }

    fn answer_cloze(&self, prompt: &str) -> Result<String> {
        let g = self.base.graph();
        let (subject, relation) = templates::parse_cloze(g, prompt)?;
        if let Some(new) = self.edited.get(&(subject.clone(), relation.clone())) {
            return Ok(g.label(new).to_string());
        }
        Ok(g.query_objects(&subject, &relation)?
            .first()
            .map(|o| g.label(o).to_string())
            .unwrap_or_else(|| UNKNOWN_ANSWER.to_string()))
    }

    fn answer_multihop(
        &self,
        question: &str,
        mode: AnswerMode,
        ctx: Option<&EvalContext>,
    ) -> Result<String> {
        self.base.answer_multihop(question, mode, ctx)
    }

    fn propose_subquestion(
        &self,
        question: &str,
        transcript: &[TranscriptStep],
        ctx: Option<&EvalContext>,
    ) -> Result<DecompositionStep> {
        self.base.propose_subquestion(question, transcript, ctx)
    }

    fn answer_subquestion(&self, subquestion: &str) -> Result<String> {
        self.base.answer_subquestion(subquestion)
    }

    fn check_contradiction(
        &self,
        statement: &str,
        tentative: &str,
        subquestion: &str,
    ) -> Result<CheckVerdict> {
        self.base
            .check_contradiction(statement, tentative, subquestion)
    }
}

/// Wraps a backend so each cloze recall independently fails with
/// probability `1 - recall_prob`, drawing from a seeded stream. All other
/// capabilities pass through unchanged.
pub struct StochasticRecall<B> {
    inner: B,
    recall_prob: f64,
    rng: Mutex<ChaCha8Rng>,
    name: String,
}

impl<B: LmBackend> StochasticRecall<B> {
    pub fn new(inner: B, recall_prob: f64, rng: ChaCha8Rng) -> Self {
        assert!(
            (0.0..=1.0).contains(&recall_prob),
            "recall probability must lie in [0, 1]"
        );
        let name = format!("stochastic({})", inner.name());
        StochasticRecall {
            inner,
            recall_prob,
            rng: Mutex::new(rng),
            name,
        }
    }
}

impl<B: LmBackend> LmBackend for StochasticRecall<B> {
    fn name(&self) -> &str {
        &self.name
    }

    fn answer_cloze(&self, prompt: &str) -> Result<String> {
        let recalled = self.rng.lock().expect("rng mutex").gen::<f64>() < self.recall_prob;
        if recalled {
            self.inner.answer_cloze(prompt)
        } else {
            Ok(UNKNOWN_ANSWER.to_string())
        }
    }

    fn answer_multihop(
        &self,
        question: &str,
        mode: AnswerMode,
        ctx: Option<&EvalContext>,
    ) -> Result<String> {
        self.inner.answer_multihop(question, mode, ctx)
    }

    fn propose_subquestion(
        &self,
        question: &str,
        transcript: &[TranscriptStep],
        ctx: Option<&EvalContext>,
    ) -> Result<DecompositionStep> {
        self.inner.propose_subquestion(question, transcript, ctx)
    }

    fn answer_subquestion(&self, subquestion: &str) -> Result<String> {
        self.inner.answer_subquestion(subquestion)
    }

    fn check_contradiction(
        &self,
        statement: &str,
        tentative: &str,
        subquestion: &str,
    ) -> Result<CheckVerdict> {
        self.inner
            .check_contradiction(statement, tentative, subquestion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{EntityClass, EntityRecord, RelationMeta, Triple};
    use crate::rng::sub_stream;
    use crate::templates::render_cloze;

    fn rel(id: &str, cloze: &str, question: &str, statement: &str) -> RelationMeta {
        RelationMeta {
            id: id.into(),
            label: id.into(),
            object_class: EntityClass::Other,
            subject_class_constraint: None,
            cloze_template: cloze.into(),
            question_template: question.into(),
            statement_template: statement.into(),
            phrase: None,
        }
    }

    fn fixture() -> KnowledgeGraph {
        let relations = vec![
            rel(
                "P6",
                "The Prime Minister of the {subject} is",
                "Who is the head of government of {subject}?",
                "The head of government of {subject} is {object}.",
            ),
            rel(
                "P26",
                "The spouse of {subject} is",
                "Who is {subject}'s spouse?",
                "{subject} is married to {object}.",
            ),
            rel(
                "P27",
                "{subject} is a citizen of",
                "What is the country of citizenship of {subject}?",
                "{subject} is a citizen of {object}.",
            ),
            rel(
                "P36",
                "The capital city of {subject} is",
                "What is the capital city of {subject}?",
                "The capital city of {subject} is {object}.",
            ),
        ];
        let entities = vec![EntityRecord {
            id: "United Kingdom".into(),
            label: None,
            class: Some(EntityClass::Country),
        }];
        let triples = vec![
            Triple::new("United Kingdom", "P6", "Boris Johnson"),
            Triple::new("Boris Johnson", "P26", "Carrie Johnson"),
            Triple::new("Rishi Sunak", "P26", "Akshata Murty"),
            Triple::new("Ivanka Trump", "P26", "Jared Kushner"),
            Triple::new("Jared Kushner", "P27", "United States"),
            Triple::new("United States", "P36", "Washington DC"),
            Triple::new("Canada", "P36", "Ottawa"),
        ];
        KnowledgeGraph::from_parts("test", relations, entities, triples).unwrap()
    }

    #[test]
    fn cloze_answers_come_from_the_graph() {
        let g = fixture();
        let oracle = OracleBase::new(&g);
        assert_eq!(
            oracle
                .answer_cloze("The Prime Minister of the United Kingdom is")
                .unwrap(),
            "Boris Johnson"
        );
        assert!(matches!(
            oracle.answer_cloze("Complete this differently"),
            Err(Error::UnparseablePrompt(_))
        ));
    }

    #[test]
    fn every_in_graph_cloze_is_recalled() {
        let g = fixture();
        let oracle = OracleBase::new(&g);
        for t in g.triples() {
            let prompt = render_cloze(&g, &t.relation, &t.subject).unwrap();
            let got = oracle.answer_cloze(prompt.as_str()).unwrap();
            assert_eq!(normalize(&got), normalize(g.label(&t.object)));
        }
    }

    #[test]
    fn multihop_traverses_only_with_context() {
        let g = fixture();
        let oracle = OracleBase::new(&g);
        let ctx = EvalContext {
            head_subject: "United Kingdom".into(),
            relations: vec!["P6".into(), "P26".into()],
        };
        let q = "Who is married to the British Prime Minister?";
        assert_eq!(
            oracle
                .answer_multihop(q, AnswerMode::Direct, Some(&ctx))
                .unwrap(),
            "Carrie Johnson"
        );
        assert_eq!(
            oracle.answer_multihop(q, AnswerMode::Cot, None).unwrap(),
            UNKNOWN_ANSWER
        );
    }

    #[test]
    fn decomposition_walks_the_context_relations() {
        let g = fixture();
        let oracle = OracleBase::new(&g);
        let ctx = EvalContext {
            head_subject: "United Kingdom".into(),
            relations: vec!["P6".into(), "P26".into()],
        };
        let q = "Who is married to the British Prime Minister?";

        let step = oracle.propose_subquestion(q, &[], Some(&ctx)).unwrap();
        let DecompositionStep::Subquestion(sq) = step else {
            panic!("expected a subquestion")
        };
        assert_eq!(sq.text, "Who is the head of government of United Kingdom?");
        assert_eq!(sq.resolved_subject.as_deref(), Some("United Kingdom"));
        assert_eq!(sq.relation.as_deref(), Some("P6"));

        let transcript = vec![TranscriptStep {
            subquestion: sq.text,
            answer: "Boris Johnson".into(),
        }];
        let step = oracle
            .propose_subquestion(q, &transcript, Some(&ctx))
            .unwrap();
        let DecompositionStep::Subquestion(sq) = step else {
            panic!("expected a subquestion")
        };
        assert_eq!(sq.text, "Who is Boris Johnson's spouse?");
        assert_eq!(sq.resolved_subject.as_deref(), Some("Boris Johnson"));

        let transcript = vec![
            TranscriptStep {
                subquestion: "q1".into(),
                answer: "Boris Johnson".into(),
            },
            TranscriptStep {
                subquestion: sq.text,
                answer: "Carrie Johnson".into(),
            },
        ];
        let step = oracle
            .propose_subquestion(q, &transcript, Some(&ctx))
            .unwrap();
        assert_eq!(step, DecompositionStep::Final("Carrie Johnson".into()));

        assert!(matches!(
            oracle.propose_subquestion(q, &[], None),
            Err(Error::UnparseablePrompt(_))
        ));
    }

    #[test]
    fn subquestions_resolve_one_hop() {
        let g = fixture();
        let oracle = OracleBase::new(&g);
        assert_eq!(
            oracle
                .answer_subquestion("Who is Boris Johnson's spouse?")
                .unwrap(),
            "Carrie Johnson"
        );
        // Structurally valid question about an entity outside the graph.
        assert_eq!(
            oracle
                .answer_subquestion("Who is Angela Merkel's spouse?")
                .unwrap(),
            UNKNOWN_ANSWER
        );
        assert!(matches!(
            oracle.answer_subquestion("Why is the sky blue?"),
            Err(Error::UnparseablePrompt(_))
        ));
    }

    #[test]
    fn matching_pair_with_differing_object_contradicts() {
        let g = fixture();
        let oracle = OracleBase::new(&g);
        let verdict = oracle
            .check_contradiction(
                "Jared Kushner is a citizen of Canada.",
                "United States",
                "What is the country of citizenship of Jared Kushner?",
            )
            .unwrap();
        assert_eq!(
            verdict,
            CheckVerdict::Contradicts {
                adjusted: Some("Canada".into())
            }
        );
    }

    #[test]
    fn unrelated_statement_is_consistent() {
        let g = fixture();
        let oracle = OracleBase::new(&g);
        let verdict = oracle
            .check_contradiction(
                "David Cameron is married to Samantha Cameron.",
                "Jared Kushner",
                "Who is Ivanka Trump's spouse?",
            )
            .unwrap();
        assert_eq!(verdict, CheckVerdict::Consistent);
    }

    #[test]
    fn agreeing_object_is_consistent() {
        let g = fixture();
        let oracle = OracleBase::new(&g);
        let verdict = oracle
            .check_contradiction(
                "Jared Kushner is a citizen of Canada.",
                "Canada",
                "What is the country of citizenship of Jared Kushner?",
            )
            .unwrap();
        assert_eq!(verdict, CheckVerdict::Consistent);
    }

    #[test]
    fn hard_edit_recalls_edits_but_traverses_stale_facts() {
        let g = fixture();
        let edits = vec![Edit {
            subject: "United Kingdom".into(),
            relation: "P6".into(),
            old: "Boris Johnson".into(),
            new: "Rishi Sunak".into(),
        }];
        let hard = OracleHardEdit::new(&g, &edits);
        assert_eq!(
            hard.answer_cloze("The Prime Minister of the United Kingdom is")
                .unwrap(),
            "Rishi Sunak"
        );
        let ctx = EvalContext {
            head_subject: "United Kingdom".into(),
            relations: vec!["P6".into(), "P26".into()],
        };
        assert_eq!(
            hard.answer_multihop(
                "Who is married to the British Prime Minister?",
                AnswerMode::Direct,
                Some(&ctx)
            )
            .unwrap(),
            "Carrie Johnson"
        );
    }

    #[test]
    fn hard_edit_differs_from_base_on_exactly_the_edited_pairs() {
        let g = fixture();
        let edits = vec![
            Edit {
                subject: "United Kingdom".into(),
                relation: "P6".into(),
                old: "Boris Johnson".into(),
                new: "Rishi Sunak".into(),
            },
            Edit {
                subject: "United States".into(),
                relation: "P36".into(),
                old: "Washington DC".into(),
                new: "Seattle".into(),
            },
        ];
        let base = OracleBase::new(&g);
        let hard = OracleHardEdit::new(&g, &edits);
        let edited_keys: std::collections::BTreeSet<(String, String)> = edits
            .iter()
            .map(|e| (e.subject.clone(), e.relation.clone()))
            .collect();
        for t in g.triples() {
            let prompt = render_cloze(&g, &t.relation, &t.subject).unwrap();
            let b = base.answer_cloze(prompt.as_str()).unwrap();
            let h = hard.answer_cloze(prompt.as_str()).unwrap();
            let key = (t.subject.clone(), t.relation.clone());
            if edited_keys.contains(&key) {
                assert_ne!(b, h, "edited pair {key:?} must differ");
            } else {
                assert_eq!(b, h, "unedited pair {key:?} must agree");
            }
        }
    }

    #[test]
    fn stochastic_recall_hits_the_configured_rate() {
        let g = fixture();
        let wrapped = StochasticRecall::new(OracleBase::new(&g), 0.8, sub_stream(7, "recall"));
        let prompt = "The Prime Minister of the United Kingdom is";
        let trials = 4000;
        let recalled = (0..trials)
            .filter(|_| wrapped.answer_cloze(prompt).unwrap() == "Boris Johnson")
            .count();
        let rate = recalled as f64 / trials as f64;
        assert!((rate - 0.8).abs() < 0.03, "recall rate {rate}");

        let again = StochasticRecall::new(OracleBase::new(&g), 0.8, sub_stream(7, "recall"));
        let replay: Vec<String> = (0..50)
            .map(|_| again.answer_cloze(prompt).unwrap())
            .collect();
        let first = StochasticRecall::new(OracleBase::new(&g), 0.8, sub_stream(7, "recall"));
        let original: Vec<String> = (0..50)
            .map(|_| first.answer_cloze(prompt).unwrap())
            .collect();
        assert_eq!(replay, original);

        let always = StochasticRecall::new(OracleBase::new(&g), 1.0, sub_stream(7, "recall"));
        for _ in 0..100 {
            assert_eq!(always.answer_cloze(prompt).unwrap(), "Boris Johnson");
        }
    }
}

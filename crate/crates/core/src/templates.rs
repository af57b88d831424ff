//! Deterministic text rendering: cloze prompts, single-hop questions,
//! composed multi-hop question paraphrases, and edit statements — plus the
//! answer normalization used by every string comparison downstream.

use icu_normalizer::ComposingNormalizer;
use serde::{Deserialize, Serialize};

use crate::edits::Edit;
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, RelationMeta, OBJECT_SLOT, SUBJECT_SLOT};
use crate::sampler::FactChain;

/// Canonical answer form: lowercase, Unicode NFKC, leading articles
/// ("the"/"a"/"an") dropped, whitespace collapsed, terminal punctuation
/// trimmed. All answer equality downstream compares normalized forms.
pub fn normalize(text: &str) -> String {
    let lower = text.to_lowercase();
    let folded = ComposingNormalizer::new_nfkc()
        .normalize(&lower)
        .into_owned();
    let mut tokens: Vec<&str> = folded.split_whitespace().collect();
    while let Some(first) = tokens.first() {
        if matches!(*first, "the" | "a" | "an") {
            tokens.remove(0);
        } else {
            break;
        }
    }
    let mut joined = tokens.join(" ");
    while joined
        .chars()
        .last()
        .is_some_and(|c| matches!(c, '.' | ',' | '!' | '?' | ';' | ':'))
    {
        joined.pop();
    }
    joined.trim_end().to_string()
}

/// True when a candidate answer matches the gold answer or any alias,
/// after normalization.
pub fn answers_match(candidate: &str, gold: &str, aliases: &[String]) -> bool {
    let got = normalize(candidate);
    if got == normalize(gold) {
        return true;
    }
    aliases.iter().any(|a| normalize(a) == got)
}

/// What a rendered string is for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderKind {
    Cloze,
    Question,
    Statement,
    MultihopQuestion,
}

/// A fully substituted piece of text; no placeholder markers remain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedText {
    pub text: String,
    pub kind: RenderKind,
}

impl RenderedText {
    fn new(kind: RenderKind, text: String) -> Self {
        debug_assert!(!text.trim().is_empty(), "rendered text must be non-empty");
        debug_assert!(
            !text.contains(SUBJECT_SLOT) && !text.contains(OBJECT_SLOT),
            "rendered text must contain no unreplaced placeholders: {text}"
        );
        RenderedText { text, kind }
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn into_text(self) -> String {
        self.text
    }
}

impl std::fmt::Display for RenderedText {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.text)
    }
}

impl AsRef<str> for RenderedText {
    fn as_ref(&self) -> &str {
        &self.text
    }
}

impl RelationMeta {
    /// Cloze prompt for a subject label.
    pub fn cloze_with(&self, subject_label: &str) -> String {
        self.cloze_template.replace(SUBJECT_SLOT, subject_label)
    }

    /// Single-hop question for a subject label.
    pub fn question_with(&self, subject_label: &str) -> String {
        self.question_template.replace(SUBJECT_SLOT, subject_label)
    }

    /// Declarative statement for a (subject, object) label pair.
    pub fn statement_with(&self, subject_label: &str, object_label: &str) -> String {
        self.statement_template
            .replace(SUBJECT_SLOT, subject_label)
            .replace(OBJECT_SLOT, object_label)
    }
}

fn subject_label<'g>(g: &'g KnowledgeGraph, subject: &'g str) -> Result<&'g str> {
    if !g.contains_entity(subject) {
        return Err(Error::MissingLabel(subject.to_string()));
    }
    Ok(g.label(subject))
}

/// Cloze prompt for (relation, subject), e.g.
/// "The Prime Minister of the United Kingdom is".
pub fn render_cloze(g: &KnowledgeGraph, relation: &str, subject: &str) -> Result<RenderedText> {
    let meta = g.relation(relation)?;
    let label = subject_label(g, subject)?;
    Ok(RenderedText::new(RenderKind::Cloze, meta.cloze_with(label)))
}

/// Single-hop question for (relation, subject).
pub fn render_question(g: &KnowledgeGraph, relation: &str, subject: &str) -> Result<RenderedText> {
    let meta = g.relation(relation)?;
    let label = subject_label(g, subject)?;
    Ok(RenderedText::new(
        RenderKind::Question,
        meta.question_with(label),
    ))
}

/// Declarative statement asserting (subject, relation, object). The object
/// may be absent from the graph (freshly introduced values); its id then
/// doubles as its label.
pub fn render_statement(
    g: &KnowledgeGraph,
    relation: &str,
    subject: &str,
    object: &str,
) -> Result<RenderedText> {
    let meta = g.relation(relation)?;
    let slabel = subject_label(g, subject)?;
    Ok(RenderedText::new(
        RenderKind::Statement,
        meta.statement_with(slabel, g.label(object)),
    ))
}

/// Statement form of an edit, always asserting the NEW object.
pub fn render_edit_statement(g: &KnowledgeGraph, edit: &Edit) -> Result<RenderedText> {
    render_statement(g, &edit.relation, &edit.subject, &edit.new)
}

/// Three deterministic paraphrases of the question "starting from the chain
/// head, what entity does the whole chain resolve to?". No intermediate
/// entity is ever mentioned — only the head label and relation phrases.
pub fn render_multihop_questions(
    g: &KnowledgeGraph,
    chain: &FactChain,
) -> Result<[RenderedText; 3]> {
    let n = chain.len();
    if !(2..=4).contains(&n) {
        return Err(Error::ChainLength(n));
    }
    let head = subject_label(g, chain.head())?;
    let phrases: Vec<&str> = chain
        .relations()
        .map(|r| g.relation(r).map(RelationMeta::phrase))
        .collect::<Result<_>>()?;

    // Innermost clause possessive: "Ivanka Trump's spouse".
    let possessive = wrap_of_chain(&phrases[1..], format!("{head}'s {}", phrases[0]));
    // Innermost clause with "of": "the spouse of Ivanka Trump".
    let of_form = wrap_of_chain(&phrases[1..], format!("the {} of {head}", phrases[0]));

    let q1 = format!("What is {possessive}?");
    let q2 = format!("What is {of_form}?");
    let mut inverted: String = of_form;
    if let Some(first) = inverted.get(..1) {
        let upper = first.to_uppercase();
        inverted.replace_range(..1, &upper);
    }
    let q3 = format!("{inverted} is what?");

    Ok([
        RenderedText::new(RenderKind::MultihopQuestion, q1),
        RenderedText::new(RenderKind::MultihopQuestion, q2),
        RenderedText::new(RenderKind::MultihopQuestion, q3),
    ])
}

fn wrap_of_chain(outer_phrases: &[&str], innermost: String) -> String {
    outer_phrases.iter().fold(innermost, |inner, phrase| {
        format!("the {phrase} of {inner}")
    })
}

/// Invert a composed multi-hop question back into (head entity id, relation
/// ids in hop order). Accepts all three paraphrase shapes produced by
/// [`render_multihop_questions`]. The head must resolve to a graph entity.
pub fn parse_composed_question(
    g: &KnowledgeGraph,
    question: &str,
) -> Result<(String, Vec<String>)> {
    let q = question.trim();
    let body = q
        .strip_prefix("What is the ")
        .and_then(|b| b.strip_suffix('?'))
        .or_else(|| {
            q.strip_prefix("The ")
                .and_then(|b| b.strip_suffix(" is what?"))
        })
        .ok_or_else(|| Error::UnparseablePrompt(question.to_string()))?;

    // Longest phrase first so "country of citizenship" wins over any
    // shorter phrase that happens to be its prefix.
    let mut phrases: Vec<(&str, &str)> =
        g.relations().map(|m| (m.phrase(), m.id.as_str())).collect();
    phrases.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(b.1)));

    let (rels_outer_first, head_label) = parse_chain(g, &phrases, body)
        .ok_or_else(|| Error::UnparseablePrompt(question.to_string()))?;
    let head_id = g
        .entity_by_label(head_label)
        .ok_or_else(|| Error::UnparseablePrompt(question.to_string()))?;

    let relations = rels_outer_first.into_iter().rev().collect();
    Ok((head_id.to_string(), relations))
}

/// Recursive descent over `PHRASE " of " ("the " chain | tail)` where
/// `tail = HEAD "'s " PHRASE | HEAD`. Returns relations outermost-first.
fn parse_chain<'a>(
    g: &KnowledgeGraph,
    phrases: &[(&str, &str)],
    rem: &'a str,
) -> Option<(Vec<String>, &'a str)> {
    for (phrase, rid) in phrases {
        let Some(rest) = rem
            .strip_prefix(phrase)
            .and_then(|r| r.strip_prefix(" of "))
        else {
            continue;
        };
        if let Some(deeper) = rest.strip_prefix("the ") {
            if let Some((mut rels, head)) = parse_chain(g, phrases, deeper) {
                rels.insert(0, (*rid).to_string());
                return Some((rels, head));
            }
        }
        if let Some(pos) = rest.rfind("'s ") {
            let (head, last_phrase) = (&rest[..pos], &rest[pos + 3..]);
            if let Some((_, inner_rid)) = phrases.iter().find(|(p, _)| *p == last_phrase) {
                if g.entity_by_label(head).is_some() {
                    return Some((vec![(*rid).to_string(), (*inner_rid).to_string()], head));
                }
            }
        }
        if g.entity_by_label(rest).is_some() {
            return Some((vec![(*rid).to_string()], rest));
        }
    }
    None
}

/// Relations ordered so the most specific template is tried first: longer
/// literal text wins, ties break on relation id for determinism.
fn relations_by_literal_len(
    g: &KnowledgeGraph,
    literal: impl Fn(&RelationMeta) -> &str,
) -> Vec<&RelationMeta> {
    let mut metas: Vec<&RelationMeta> = g.relations().collect();
    metas.sort_by(|a, b| {
        literal(b)
            .len()
            .cmp(&literal(a).len())
            .then(a.id.cmp(&b.id))
    });
    metas
}

/// Match `text` against a one-slot template, returning the slot filler.
fn match_single_slot<'t>(template: &str, text: &'t str) -> Option<&'t str> {
    let slot = template.find(SUBJECT_SLOT)?;
    let (prefix, suffix) = (&template[..slot], &template[slot + SUBJECT_SLOT.len()..]);
    let middle = text.strip_prefix(prefix)?.strip_suffix(suffix)?;
    if middle.is_empty() {
        None
    } else {
        Some(middle)
    }
}

/// A single-hop question or cloze inverted back to its parts. `subject` is
/// the resolved entity id when the written subject matches a graph entity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedQuestion {
    pub subject_text: String,
    pub subject: Option<String>,
    pub relation: String,
}

/// A declarative statement inverted back to its parts. Subjects and objects
/// of edit statements may name entities absent from this snapshot, so both
/// are kept as written; `subject` resolves when possible.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedStatement {
    pub subject_text: String,
    pub subject: Option<String>,
    pub relation: String,
    pub object_text: String,
}

fn parse_single_slot(
    g: &KnowledgeGraph,
    text: &str,
    literal: impl Fn(&RelationMeta) -> &str,
) -> Option<ParsedQuestion> {
    let mut shape_only: Option<ParsedQuestion> = None;
    for meta in relations_by_literal_len(g, &literal) {
        let Some(label) = match_single_slot(literal(meta), text) else {
            continue;
        };
        if let Some(id) = g.entity_by_label(label) {
            return Some(ParsedQuestion {
                subject_text: label.to_string(),
                subject: Some(id.to_string()),
                relation: meta.id.clone(),
            });
        }
        if shape_only.is_none() {
            shape_only = Some(ParsedQuestion {
                subject_text: label.to_string(),
                subject: None,
                relation: meta.id.clone(),
            });
        }
    }
    shape_only
}

/// Invert a cloze prompt into (subject entity id, relation id).
pub fn parse_cloze(g: &KnowledgeGraph, prompt: &str) -> Result<(String, String)> {
    parse_single_slot(g, prompt, |m| &m.cloze_template)
        .and_then(|p| Some((p.subject?, p.relation)))
        .ok_or_else(|| Error::UnparseablePrompt(prompt.to_string()))
}

/// Invert a single-hop question into (subject entity id, relation id).
pub fn parse_question(g: &KnowledgeGraph, question: &str) -> Result<(String, String)> {
    parse_single_slot(g, question, |m| &m.question_template)
        .and_then(|p| Some((p.subject?, p.relation)))
        .ok_or_else(|| Error::UnparseablePrompt(question.to_string()))
}

/// Like [`parse_question`] but tolerates subjects that are not graph
/// entities, as produced when an edited answer names a new entity.
pub fn parse_question_loose(g: &KnowledgeGraph, question: &str) -> Result<ParsedQuestion> {
    parse_single_slot(g, question, |m| &m.question_template)
        .ok_or_else(|| Error::UnparseablePrompt(question.to_string()))
}

/// Invert a declarative statement; the subject must resolve to a graph
/// entity. The object is returned as written, since edit statements may
/// name objects absent from this snapshot.
pub fn parse_statement(g: &KnowledgeGraph, statement: &str) -> Result<(String, String, String)> {
    let parsed = parse_statement_loose(g, statement)?;
    match parsed.subject {
        Some(id) => Ok((id, parsed.relation, parsed.object_text)),
        None => Err(Error::UnparseablePrompt(statement.to_string())),
    }
}

/// Invert a declarative statement, tolerating unresolvable subjects.
pub fn parse_statement_loose(g: &KnowledgeGraph, statement: &str) -> Result<ParsedStatement> {
    let mut shape_only: Option<ParsedStatement> = None;
    for meta in relations_by_literal_len(g, |m| &m.statement_template) {
        let template = &meta.statement_template;
        let (Some(s_pos), Some(o_pos)) = (template.find(SUBJECT_SLOT), template.find(OBJECT_SLOT))
        else {
            continue;
        };
        let subject_first = s_pos < o_pos;
        let (first_pos, first_len, second_pos, second_len) = if subject_first {
            (s_pos, SUBJECT_SLOT.len(), o_pos, OBJECT_SLOT.len())
        } else {
            (o_pos, OBJECT_SLOT.len(), s_pos, SUBJECT_SLOT.len())
        };
        let prefix = &template[..first_pos];
        let mid = &template[first_pos + first_len..second_pos];
        let suffix = &template[second_pos + second_len..];

        let Some(core) = statement
            .strip_prefix(prefix)
            .and_then(|t| t.strip_suffix(suffix))
        else {
            continue;
        };
        // The separator may occur inside a label; try each split point,
        // keeping the first where the subject resolves and remembering the
        // first structurally valid split as a fallback.
        for (idx, _) in core.match_indices(mid) {
            let (first, second) = (&core[..idx], &core[idx + mid.len()..]);
            if first.is_empty() || second.is_empty() {
                continue;
            }
            let (subject, object) = if subject_first {
                (first, second)
            } else {
                (second, first)
            };
            let resolved = g.entity_by_label(subject);
            if resolved.is_some() || shape_only.is_none() {
                let parsed = ParsedStatement {
                    subject_text: subject.to_string(),
                    subject: resolved.map(str::to_string),
                    relation: meta.id.clone(),
                    object_text: object.to_string(),
                };
                if parsed.subject.is_some() {
                    return Ok(parsed);
                }
                shape_only = Some(parsed);
            }
        }
    }
    shape_only.ok_or_else(|| Error::UnparseablePrompt(statement.to_string()))
}

//! Shared fixtures for unit tests: a layered workplace graph large enough
//! to sample hundreds of constraint-clean chains, and a corpus builder on
//! top of it.

use crate::edits::{self, Instance};
use crate::kg::{EntityClass, KnowledgeGraph, RelationMeta, Triple};
use crate::rng::sub_stream;
use crate::sampler;

pub fn rel(
    id: &str,
    cls: EntityClass,
    cloze: &str,
    question: &str,
    statement: &str,
) -> RelationMeta {
    RelationMeta {
        id: id.into(),
        label: id.into(),
        object_class: cls,
        subject_class_constraint: None,
        cloze_template: cloze.into(),
        question_template: question.into(),
        statement_template: statement.into(),
        phrase: None,
    }
}

/// Works → makers → shops → towns → zones. Every layer fans in, so each
/// relation has several candidate objects and 2–4-hop chains satisfy all
/// sampling constraints.
pub fn corpus_graph() -> KnowledgeGraph {
    let relations = vec![
        rel(
            "made_by",
            EntityClass::Person,
            "The maker of {subject} is",
            "Who is the maker of {subject}?",
            "The maker of {subject} is {object}.",
        ),
        rel(
            "works_at",
            EntityClass::Organization,
            "The employer of {subject} is",
            "Who is the employer of {subject}?",
            "The employer of {subject} is {object}.",
        ),
        rel(
            "based_in",
            EntityClass::Location,
            "The home city of {subject} is",
            "What is the home city of {subject}?",
            "The home city of {subject} is {object}.",
        ),
        rel(
            "district_of",
            EntityClass::Location,
            "The district of {subject} is",
            "What is the district of {subject}?",
            "The district of {subject} is {object}.",
        ),
    ];
    let mut triples = Vec::new();
    for i in 0..14 {
        triples.push(Triple::new(
            format!("item{i:02}"),
            "made_by",
            format!("maker{:02}", i % 9),
        ));
    }
    for i in 0..9 {
        triples.push(Triple::new(
            format!("maker{i:02}"),
            "works_at",
            format!("shop{:02}", i % 6),
        ));
    }
    for i in 0..6 {
        triples.push(Triple::new(
            format!("shop{i:02}"),
            "based_in",
            format!("town{:02}", i % 5),
        ));
    }
    for i in 0..5 {
        triples.push(Triple::new(
            format!("town{i:02}"),
            "district_of",
            format!("zone{:02}", i % 4),
        ));
    }
    KnowledgeGraph::from_parts("corpus", relations, vec![], triples).unwrap()
}

/// A deterministic instance corpus over [`corpus_graph`], mixing 2–4-hop
/// chains; at least 40 instances.
pub fn corpus_instances(seed: u64) -> (KnowledgeGraph, Vec<Instance>) {
    let g = corpus_graph();
    let mut chains = Vec::new();
    let mut rng = sub_stream(seed, "testkit-chains");
    for hops in 2..=4 {
        let (mut found, _) = sampler::sample_unique_chains(&g, hops, 40, &mut rng, 60_000).unwrap();
        chains.append(&mut found);
    }
    assert!(chains.len() >= 60, "expected a healthy chain corpus");
    let mut rng = sub_stream(seed, "testkit-edits");
    let (instances, _) = edits::build_instances(&g, &chains, &mut rng, 25).unwrap();
    assert!(instances.len() >= 40, "expected a healthy instance corpus");
    (g, instances)
}

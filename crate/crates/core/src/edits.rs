//! Benchmark-instance construction: counterfactual edit sets over sampled
//! chains, temporal instances from snapshot diffs, and batching of
//! instances into shared edit memories.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Triple};
use crate::sampler::FactChain;
use crate::templates;

/// One fact update: (subject, relation) changes object `old` → `new`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edit {
    pub subject: String,
    pub relation: String,
    pub old: String,
    pub new: String,
}

impl Edit {
    /// The (subject, relation) pair this edit rewrites.
    pub fn key(&self) -> (&str, &str) {
        (&self.subject, &self.relation)
    }
}

fn default_schema_version() -> String {
    "1".to_string()
}

/// A complete benchmark instance: the edit set, three question paraphrases,
/// the pre-edit and post-edit answers with optional aliases, and both the
/// original and rewired fact chains. Unknown serialized fields survive a
/// load/save round trip via `extra`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub edits: Vec<Edit>,
    pub questions: Vec<String>,
    pub answer: String,
    #[serde(default)]
    pub answer_aliases: Vec<String>,
    pub new_answer: String,
    #[serde(default)]
    pub new_answer_aliases: Vec<String>,
    pub orig_triples: Vec<Triple>,
    pub new_triples: Vec<Triple>,
    pub hops: usize,
    pub id: String,
    #[serde(default = "default_schema_version")]
    pub schema_version: String,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// Construction outcome: either a product or a retriable rejection reason.
/// Hard errors (unknown ids, template problems) surface as [`Error`] instead.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BuildOutcome<T, F> {
    Built(T),
    Rejected(F),
}

impl<T, F> BuildOutcome<T, F> {
    pub fn into_built(self) -> Option<T> {
        match self {
            BuildOutcome::Built(t) => Some(t),
            BuildOutcome::Rejected(_) => None,
        }
    }
}

/// Why a counterfactual draw was rejected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CounterfactualFailure {
    /// The relation has no alternative object to swap in.
    NoCandidateObject { relation: String },
    /// The rewired walk hit a subject with no object for the hop's relation.
    BrokenChain { position: usize },
    /// The rewired chain lands on the original answer.
    UnchangedAnswer,
}

impl CounterfactualFailure {
    pub fn key(&self) -> &'static str {
        match self {
            CounterfactualFailure::NoCandidateObject { .. } => "no-candidate-object",
            CounterfactualFailure::BrokenChain { .. } => "broken-chain",
            CounterfactualFailure::UnchangedAnswer => "unchanged-answer",
        }
    }
}

/// Why a chain could not become a temporal instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TemporalFailure {
    /// No chain position's (subject, relation) appears in the diff.
    NoMatchingEdit,
    /// More than one position matches; temporal instances carry one edit.
    MultipleMatchingEdits,
    /// The rewired walk broke in the new snapshot.
    BrokenChain { position: usize },
    /// Both snapshots resolve the chain to the same answer.
    UnchangedAnswer,
}

impl TemporalFailure {
    pub fn key(&self) -> &'static str {
        match self {
            TemporalFailure::NoMatchingEdit => "no-matching-edit",
            TemporalFailure::MultipleMatchingEdits => "multiple-matching-edits",
            TemporalFailure::BrokenChain { .. } => "broken-chain",
            TemporalFailure::UnchangedAnswer => "unchanged-answer",
        }
    }
}

/// Raw product of a counterfactual draw before question rendering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CounterfactualDraft {
    pub edits: Vec<Edit>,
    pub new_triples: Vec<Triple>,
    /// Tail entity id of the rewired chain.
    pub tail: String,
}

/// Walk the chain from its head, swapping in chosen objects at `positions`
/// and resolving every other hop: a hop whose subject is unchanged keeps the
/// chain's own object; a rewired hop resolves canonically in `g`.
fn rebuild_chain(
    g: &KnowledgeGraph,
    chain: &FactChain,
    positions: &BTreeSet<usize>,
    mut choose: impl FnMut(usize, &str, &[String]) -> Option<String>,
) -> std::result::Result<CounterfactualDraft, CounterfactualFailure> {
    let mut cur = chain.head().to_string();
    let mut edits = Vec::new();
    let mut new_triples = Vec::with_capacity(chain.len());
    for (i, t) in chain.triples().iter().enumerate() {
        let old = if cur == t.subject {
            t.object.clone()
        } else {
            match g.first_object(&cur, &t.relation) {
                Some(o) => o.to_string(),
                None => return Err(CounterfactualFailure::BrokenChain { position: i }),
            }
        };
        if positions.contains(&i) {
            let pool: Vec<String> = g
                .objects_of_relation(&t.relation)
                .iter()
                .filter(|o| **o != old)
                .cloned()
                .collect();
            let chosen = choose(i, &t.relation, &pool).ok_or_else(|| {
                CounterfactualFailure::NoCandidateObject {
                    relation: t.relation.clone(),
                }
            })?;
            edits.push(Edit {
                subject: cur.clone(),
                relation: t.relation.clone(),
                old,
                new: chosen.clone(),
            });
            new_triples.push(Triple::new(cur.clone(), t.relation.clone(), chosen.clone()));
            cur = chosen;
        } else {
            new_triples.push(Triple::new(cur.clone(), t.relation.clone(), old.clone()));
            cur = old;
        }
    }
    if templates::normalize(g.label(chain.tail())) == templates::normalize(g.label(&cur)) {
        return Err(CounterfactualFailure::UnchangedAnswer);
    }
    Ok(CounterfactualDraft {
        edits,
        new_triples,
        tail: cur,
    })
}

/// Draw a counterfactual edit set for a chain: the number of edited
/// positions is uniform in 1..=N, the positions are drawn without
/// replacement, and each replacement object is drawn uniformly from the
/// relation's object pool minus the value being replaced.
pub fn sample_counterfactual(
    g: &KnowledgeGraph,
    chain: &FactChain,
    rng: &mut impl Rng,
) -> BuildOutcome<CounterfactualDraft, CounterfactualFailure> {
    let n = chain.len();
    let t = rng.gen_range(1..=n);
    let all: Vec<usize> = (0..n).collect();
    let positions: BTreeSet<usize> = all.choose_multiple(rng, t).copied().collect();
    let result = rebuild_chain(g, chain, &positions, |_, _, pool| pool.choose(rng).cloned());
    match result {
        Ok(draft) => BuildOutcome::Built(draft),
        Err(f) => BuildOutcome::Rejected(f),
    }
}

/// Deterministic counterfactual: replace exactly the given positions with
/// the given objects. A forced object missing from the relation's candidate
/// pool rejects with `no-candidate-object`.
///
/// Panics if a position is out of range for the chain.
pub fn apply_counterfactual(
    g: &KnowledgeGraph,
    chain: &FactChain,
    forced: &BTreeMap<usize, String>,
) -> BuildOutcome<CounterfactualDraft, CounterfactualFailure> {
    assert!(
        forced.keys().all(|&i| i < chain.len()),
        "edit position out of range"
    );
    let positions: BTreeSet<usize> = forced.keys().copied().collect();
    let result = rebuild_chain(g, chain, &positions, |i, _, pool| {
        forced
            .get(&i)
            .filter(|o| pool.iter().any(|p| p == *o))
            .cloned()
    });
    match result {
        Ok(draft) => BuildOutcome::Built(draft),
        Err(f) => BuildOutcome::Rejected(f),
    }
}

/// Stable instance id: truncated content hash of the chain and edit set.
pub fn instance_id(orig_triples: &[Triple], edits: &[Edit]) -> String {
    let mut hasher = Sha256::new();
    for t in orig_triples {
        hasher.update(t.subject.as_bytes());
        hasher.update(b"\t");
        hasher.update(t.relation.as_bytes());
        hasher.update(b"\t");
        hasher.update(t.object.as_bytes());
        hasher.update(b"\n");
    }
    hasher.update(b"edits\n");
    for e in edits {
        hasher.update(e.subject.as_bytes());
        hasher.update(b"\t");
        hasher.update(e.relation.as_bytes());
        hasher.update(b"\t");
        hasher.update(e.old.as_bytes());
        hasher.update(b"\t");
        hasher.update(e.new.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())[..32].to_string()
}

fn assemble_instance(
    question_graph: &KnowledgeGraph,
    answer_graph: &KnowledgeGraph,
    chain: &FactChain,
    draft: CounterfactualDraft,
) -> Result<Instance> {
    let questions = templates::render_multihop_questions(question_graph, chain)?
        .into_iter()
        .map(|q| q.into_text())
        .collect();
    let id = instance_id(chain.triples(), &draft.edits);
    Ok(Instance {
        questions,
        answer: question_graph.label(chain.tail()).to_string(),
        answer_aliases: Vec::new(),
        new_answer: answer_graph.label(&draft.tail).to_string(),
        new_answer_aliases: Vec::new(),
        orig_triples: chain.triples().to_vec(),
        new_triples: draft.new_triples,
        hops: chain.len(),
        id,
        schema_version: default_schema_version(),
        edits: draft.edits,
        extra: BTreeMap::new(),
    })
}

/// Build one counterfactual instance from a chain: draw edits, rewire the
/// chain, and render the three question paraphrases.
pub fn build_instance(
    g: &KnowledgeGraph,
    chain: &FactChain,
    rng: &mut impl Rng,
) -> Result<BuildOutcome<Instance, CounterfactualFailure>> {
    match sample_counterfactual(g, chain, rng) {
        BuildOutcome::Rejected(f) => Ok(BuildOutcome::Rejected(f)),
        BuildOutcome::Built(draft) => {
            Ok(BuildOutcome::Built(assemble_instance(g, g, chain, draft)?))
        }
    }
}

/// Counters for corpus construction. Every rejected draw and every dropped
/// chain is accounted for under a reason key.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BuildStats {
    pub built: usize,
    pub rejected: BTreeMap<String, usize>,
}

impl BuildStats {
    fn reject(&mut self, reason: &str) {
        *self.rejected.entry(reason.to_string()).or_default() += 1;
    }
}

/// Build a conflict-free corpus: draw counterfactuals per chain (up to
/// `retries_per_chain` attempts each) and keep an instance only if none of
/// its edits assigns a different new object to a (subject, relation) pair
/// an earlier instance already rewrote. This keeps any batch drawn from the
/// corpus free of intra-batch conflicts.
pub fn build_instances(
    g: &KnowledgeGraph,
    chains: &[FactChain],
    rng: &mut impl Rng,
    retries_per_chain: usize,
) -> Result<(Vec<Instance>, BuildStats)> {
    let mut committed: BTreeMap<(String, String), String> = BTreeMap::new();
    let mut instances = Vec::new();
    let mut stats = BuildStats::default();
    for chain in chains {
        'attempts: for _ in 0..retries_per_chain.max(1) {
            match build_instance(g, chain, rng)? {
                BuildOutcome::Rejected(f) => {
                    stats.reject(f.key());
                }
                BuildOutcome::Built(instance) => {
                    for e in &instance.edits {
                        let key = (e.subject.clone(), e.relation.clone());
                        if committed.get(&key).is_some_and(|new| *new != e.new) {
                            stats.reject("edit-conflict");
                            continue 'attempts;
                        }
                    }
                    for e in &instance.edits {
                        committed.insert((e.subject.clone(), e.relation.clone()), e.new.clone());
                    }
                    instances.push(instance);
                    stats.built += 1;
                    break 'attempts;
                }
            }
        }
    }
    Ok((instances, stats))
}

/// Build a temporal instance: the chain must cross exactly one diff entry;
/// that entry becomes the single edit and the rewired tail is resolved in
/// the new snapshot.
pub fn build_temporal_instance(
    old_g: &KnowledgeGraph,
    new_g: &KnowledgeGraph,
    chain: &FactChain,
    diff: &[Edit],
) -> Result<BuildOutcome<Instance, TemporalFailure>> {
    let diff_map: BTreeMap<(&str, &str), &Edit> = diff.iter().map(|e| (e.key(), e)).collect();
    let matches: Vec<usize> = chain
        .triples()
        .iter()
        .enumerate()
        .filter(|(_, t)| diff_map.contains_key(&(t.subject.as_str(), t.relation.as_str())))
        .map(|(i, _)| i)
        .collect();
    let pos = match matches.as_slice() {
        [] => return Ok(BuildOutcome::Rejected(TemporalFailure::NoMatchingEdit)),
        [single] => *single,
        _ => {
            return Ok(BuildOutcome::Rejected(
                TemporalFailure::MultipleMatchingEdits,
            ))
        }
    };
    let edit = (*diff_map[&(
        chain.triples()[pos].subject.as_str(),
        chain.triples()[pos].relation.as_str(),
    )])
        .clone();

    let mut cur = chain.head().to_string();
    let mut new_triples = Vec::with_capacity(chain.len());
    for (i, t) in chain.triples().iter().enumerate() {
        let object = if i == pos {
            edit.new.clone()
        } else if cur == t.subject {
            t.object.clone()
        } else {
            match new_g.first_object(&cur, &t.relation) {
                Some(o) => o.to_string(),
                None => {
                    return Ok(BuildOutcome::Rejected(TemporalFailure::BrokenChain {
                        position: i,
                    }))
                }
            }
        };
        new_triples.push(Triple::new(cur.clone(), t.relation.clone(), object.clone()));
        cur = object;
    }

    let answer = old_g.label(chain.tail()).to_string();
    let new_answer = new_g.label(&cur).to_string();
    if templates::normalize(&answer) == templates::normalize(&new_answer) {
        return Ok(BuildOutcome::Rejected(TemporalFailure::UnchangedAnswer));
    }

    let draft = CounterfactualDraft {
        edits: vec![edit],
        new_triples,
        tail: cur,
    };
    Ok(BuildOutcome::Built(assemble_instance(
        old_g, new_g, chain, draft,
    )?))
}

/// A consecutive group of instances evaluated under one shared edit memory.
#[derive(Clone, Debug, PartialEq)]
pub struct EditBatch {
    /// Index of this batch in the partition.
    pub index: usize,
    pub instances: Vec<Instance>,
    /// Union of member edits, deduplicated on (subject, relation) with
    /// first-occurrence order preserved.
    pub edits: Vec<Edit>,
}

/// Partition instances into consecutive batches of `k` (final batch may be
/// short) and compute each batch's edit union. Two member edits assigning
/// different new objects to one (subject, relation) pair are a conflict.
pub fn build_edit_batch(instances: &[Instance], k: usize) -> Result<Vec<EditBatch>> {
    if k == 0 {
        return Err(Error::InvalidBatchSize(0));
    }
    let mut batches = Vec::new();
    for (index, group) in instances.chunks(k).enumerate() {
        let mut order: Vec<Edit> = Vec::new();
        let mut seen: BTreeMap<(String, String), String> = BTreeMap::new();
        for inst in group {
            for e in &inst.edits {
                let key = (e.subject.clone(), e.relation.clone());
                match seen.get(&key) {
                    None => {
                        seen.insert(key, e.new.clone());
                        order.push(e.clone());
                    }
                    Some(existing) if *existing == e.new => {}
                    Some(_) => {
                        return Err(Error::EditConflict {
                            subject: e.subject.clone(),
                            relation: e.relation.clone(),
                            batch: index,
                        })
                    }
                }
            }
        }
        batches.push(EditBatch {
            index,
            instances: group.to_vec(),
            edits: order,
        });
    }
    Ok(batches)
}

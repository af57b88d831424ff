//! Chain sampling: uniform random walks over the graph, accepted only when
//! they satisfy the seven structural constraints, plus recallability
//! filtering against a language-model backend.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kg::{EntityClass, KnowledgeGraph, Triple};
use crate::lm::LmBackend;
use crate::templates;

/// Default rejection-sampling retry budget for one chain.
pub const DEFAULT_RETRY_BUDGET: usize = 1000;

/// A connected 2–4 hop chain of facts: each hop's object is the next hop's
/// subject. Construction validates length, connectivity, and all seven
/// structural constraints against the source graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactChain {
    triples: Vec<Triple>,
}

impl FactChain {
    pub fn new(g: &KnowledgeGraph, triples: Vec<Triple>) -> Result<Self> {
        let n = triples.len();
        if !(2..=4).contains(&n) {
            return Err(Error::ChainLength(n));
        }
        for i in 1..n {
            if triples[i].subject != triples[i - 1].object {
                return Err(Error::Disconnected { position: i });
            }
        }
        let report = check_constraints(g, &triples)?;
        if !report.ok() {
            return Err(Error::ChainConstraint {
                reasons: report
                    .violations
                    .into_iter()
                    .map(|v| format!("rule {}: {}", v.rule, v.reason))
                    .collect(),
            });
        }
        Ok(FactChain { triples })
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// The chain's starting entity s₁.
    pub fn head(&self) -> &str {
        &self.triples[0].subject
    }

    /// The chain's final object — the unedited answer entity.
    pub fn tail(&self) -> &str {
        &self.triples[self.triples.len() - 1].object
    }

    /// Relation ids in hop order.
    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.triples.iter().map(|t| t.relation.as_str())
    }

    /// Entities in visit order: s₁, o₁, …, o_N.
    pub fn visited(&self) -> Vec<&str> {
        let mut seen = vec![self.triples[0].subject.as_str()];
        seen.extend(self.triples.iter().map(|t| t.object.as_str()));
        seen
    }
}

/// One violated structural rule with its 1-based rule number.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: u8,
    pub reason: String,
}

/// Outcome of checking a candidate chain: every violated rule is reported,
/// not just the first.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConstraintReport {
    pub violations: Vec<Violation>,
}

impl ConstraintReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    /// Distinct violated rule numbers, ascending.
    pub fn rules(&self) -> Vec<u8> {
        let set: BTreeSet<u8> = self.violations.iter().map(|v| v.rule).collect();
        set.into_iter().collect()
    }
}

/// Classes attributable to the object of a hop: whatever the graph knows
/// about the entity, plus the typing the relation itself imposes.
fn object_classes(
    g: &KnowledgeGraph,
    entity: &str,
    relation_class: EntityClass,
) -> BTreeSet<EntityClass> {
    let mut set = g.entity_classes(entity).cloned().unwrap_or_default();
    set.insert(relation_class);
    set
}

/// Evaluate the seven structural rules on a candidate chain:
/// 1. no entity repeats along the visited sequence;
/// 2. no relation repeats;
/// 3. a country-valued hop may appear only in the last two positions;
/// 4. at most three distinct object classes;
/// 5. person-valued hops are consecutive, and location-valued hops are
///    consecutive;
/// 6. a relation restricted to organization-like subjects gets one;
/// 7. a relation restricted to country subjects gets one.
pub fn check_constraints(g: &KnowledgeGraph, triples: &[Triple]) -> Result<ConstraintReport> {
    let n = triples.len();
    let metas = triples
        .iter()
        .map(|t| g.relation(&t.relation))
        .collect::<Result<Vec<_>>>()?;
    let mut violations = Vec::new();

    // Rule 1: the visited entity sequence must be duplicate-free.
    let mut seen = BTreeSet::new();
    seen.insert(triples[0].subject.as_str());
    for t in triples {
        if !seen.insert(t.object.as_str()) {
            violations.push(Violation {
                rule: 1,
                reason: format!("entity `{}` visited twice", t.object),
            });
        }
    }

    // Rule 2: all relations distinct.
    let mut rels = BTreeSet::new();
    for t in triples {
        if !rels.insert(t.relation.as_str()) {
            violations.push(Violation {
                rule: 2,
                reason: format!("relation `{}` used twice", t.relation),
            });
        }
    }

    // Rule 3: country objects only in the last two hops.
    for (i, (t, meta)) in triples.iter().zip(&metas).enumerate() {
        if i + 2 < n
            && object_classes(g, &t.object, meta.object_class).contains(&EntityClass::Country)
        {
            violations.push(Violation {
                rule: 3,
                reason: format!(
                    "country-valued hop {} only allowed in the last two positions",
                    i + 1
                ),
            });
        }
    }

    // Rule 4: at most three distinct object classes across hops.
    let distinct: BTreeSet<EntityClass> = metas.iter().map(|m| m.object_class).collect();
    if distinct.len() > 3 {
        violations.push(Violation {
            rule: 4,
            reason: format!("{} distinct object classes, max 3", distinct.len()),
        });
    }

    // Rule 5: person-valued hop indices contiguous; likewise location-valued.
    for class in [EntityClass::Person, EntityClass::Location] {
        let idx: Vec<usize> = metas
            .iter()
            .enumerate()
            .filter(|(_, m)| m.object_class == class)
            .map(|(i, _)| i)
            .collect();
        if let (Some(first), Some(last)) = (idx.first(), idx.last()) {
            if last - first + 1 != idx.len() {
                violations.push(Violation {
                    rule: 5,
                    reason: format!("{class:?}-valued hops not consecutive"),
                });
            }
        }
    }

    // Rules 6 and 7: subject-class restrictions declared on the relation.
    for (i, (t, meta)) in triples.iter().zip(&metas).enumerate() {
        let Some(required) = meta.subject_class_constraint else {
            continue;
        };
        let mut classes = g.entity_classes(&t.subject).cloned().unwrap_or_default();
        if i > 0 && t.subject == triples[i - 1].object {
            classes.insert(metas[i - 1].object_class);
        }
        if classes.is_empty() {
            return Err(Error::MissingClassMetadata(t.subject.clone()));
        }
        if !classes.contains(&required) {
            let rule = if required == EntityClass::Country {
                7
            } else {
                6
            };
            violations.push(Violation {
                rule,
                reason: format!(
                    "relation `{}` requires a {required:?} subject, `{}` is not one",
                    t.relation, t.subject
                ),
            });
        }
    }

    Ok(ConstraintReport { violations })
}

/// Counters for a sampling run. `attempts` always equals `accepted` plus the
/// sum over `rejected`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SampleStats {
    pub attempts: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<String, usize>,
}

impl SampleStats {
    fn reject(&mut self, reason: &str) {
        *self.rejected.entry(reason.to_string()).or_default() += 1;
    }

    /// Fold another run's counters into this one.
    pub fn absorb(&mut self, other: &SampleStats) {
        self.attempts += other.attempts;
        self.accepted += other.accepted;
        for (k, v) in &other.rejected {
            *self.rejected.entry(k.clone()).or_default() += v;
        }
    }
}

enum WalkOutcome {
    Chain(Vec<Triple>),
    DeadEnd,
}

fn random_walk(g: &KnowledgeGraph, heads: &[&str], n: usize, rng: &mut impl Rng) -> WalkOutcome {
    let mut cur = heads[rng.gen_range(0..heads.len())].to_string();
    let mut triples = Vec::with_capacity(n);
    for _ in 0..n {
        let options = g.outgoing(&cur);
        if options.is_empty() {
            return WalkOutcome::DeadEnd;
        }
        let (r, o) = options[rng.gen_range(0..options.len())];
        let (r, o) = (r.to_string(), o.to_string());
        triples.push(Triple::new(cur.clone(), r, o.clone()));
        cur = o;
    }
    WalkOutcome::Chain(triples)
}

/// Sample one valid n-hop chain by rejection sampling with the default
/// retry budget.
pub fn sample_chain(g: &KnowledgeGraph, n: usize, rng: &mut impl Rng) -> Result<FactChain> {
    sample_chain_with_budget(g, n, rng, DEFAULT_RETRY_BUDGET).map(|(chain, _)| chain)
}

/// Sample one valid n-hop chain, reporting per-reason rejection counters.
pub fn sample_chain_with_budget(
    g: &KnowledgeGraph,
    n: usize,
    rng: &mut impl Rng,
    budget: usize,
) -> Result<(FactChain, SampleStats)> {
    if !(2..=4).contains(&n) {
        return Err(Error::ChainLength(n));
    }
    let heads: Vec<&str> = g.entity_ids().collect();
    if heads.is_empty() {
        return Err(Error::SamplerExhausted { attempts: 0 });
    }
    let mut stats = SampleStats::default();
    while stats.attempts < budget {
        stats.attempts += 1;
        let triples = match random_walk(g, &heads, n, rng) {
            WalkOutcome::Chain(t) => t,
            WalkOutcome::DeadEnd => {
                stats.reject("dead-end");
                continue;
            }
        };
        let report = check_constraints(g, &triples)?;
        match report.rules().first() {
            None => {
                stats.accepted += 1;
                return Ok((FactChain { triples }, stats));
            }
            Some(rule) => stats.reject(&format!("rule-{rule}")),
        }
    }
    Err(Error::SamplerExhausted {
        attempts: stats.attempts,
    })
}

/// Sample up to `count` distinct n-hop chains within a total attempt budget.
/// Returns however many it found; the caller decides whether a shortfall is
/// an error or a warning.
pub fn sample_unique_chains(
    g: &KnowledgeGraph,
    n: usize,
    count: usize,
    rng: &mut impl Rng,
    total_budget: usize,
) -> Result<(Vec<FactChain>, SampleStats)> {
    if !(2..=4).contains(&n) {
        return Err(Error::ChainLength(n));
    }
    let heads: Vec<&str> = g.entity_ids().collect();
    let mut stats = SampleStats::default();
    let mut chains = Vec::new();
    let mut seen: BTreeSet<Vec<Triple>> = BTreeSet::new();
    if heads.is_empty() {
        return Ok((chains, stats));
    }
    while chains.len() < count && stats.attempts < total_budget {
        stats.attempts += 1;
        let triples = match random_walk(g, &heads, n, rng) {
            WalkOutcome::Chain(t) => t,
            WalkOutcome::DeadEnd => {
                stats.reject("dead-end");
                continue;
            }
        };
        let report = check_constraints(g, &triples)?;
        if let Some(rule) = report.rules().first() {
            stats.reject(&format!("rule-{rule}"));
            continue;
        }
        if !seen.insert(triples.clone()) {
            stats.reject("duplicate");
            continue;
        }
        stats.accepted += 1;
        chains.push(FactChain { triples });
    }
    Ok((chains, stats))
}

/// True iff the backend recalls every fact of the chain: for each hop, the
/// normalized cloze completion equals the object's label.
pub fn filter_recallable(
    g: &KnowledgeGraph,
    chain: &FactChain,
    lm: &dyn LmBackend,
) -> Result<bool> {
    for t in chain.triples() {
        let prompt = templates::render_cloze(g, &t.relation, &t.subject)?;
        let answer = lm.answer_cloze(prompt.as_str())?;
        if templates::normalize(&answer) != templates::normalize(g.label(&t.object)) {
            return Ok(false);
        }
    }
    Ok(true)
}

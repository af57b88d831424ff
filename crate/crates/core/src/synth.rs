//! Synthetic world generation: a layered knowledge graph large enough for
//! statistically meaningful evaluation runs, a corpus builder on top of it,
//! and a snapshot perturber for exercising the diff/reconcile path.
//!
//! The world has five entity layers — creative works, persons,
//! organizations, cities, countries — wired by twelve single-valued
//! relations. Same-layer relations (`mentor`, `parent_org`, `twin_city`)
//! exist so that 4-hop chains can stay within three object classes while
//! keeping person- and location-valued hops contiguous.
//!
//! Entity labels are two-token names mined so that every token in the
//! world — label tokens and template words alike — hashes to its own
//! embedding bucket. That makes the default hashed bag-of-words retrieval
//! exact over this corpus: scores reduce to true token overlap, so looking
//! up an edited fact cannot be derailed by bucket collisions from hundreds
//! of co-resident edits.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::edits::{self, BuildStats, Edit, Instance};
use crate::error::{Error, Result};
use crate::kg::{EntityClass, EntityRecord, KnowledgeGraph, RelationMeta, Triple};
use crate::retrieval::{fnv1a64, tokenize, DEFAULT_DIM};
use crate::rng::sub_stream;
use crate::sampler::{self, SampleStats};

/// Layer sizes. The defaults give ≈5,300 entities and ≈14,800 triples —
/// sparse enough that a batch of a few hundred random edits rarely lands on
/// any particular instance's reasoning path.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SynthConfig {
    pub works: usize,
    pub persons: usize,
    pub orgs: usize,
    pub places: usize,
    pub countries: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            works: 2000,
            persons: 1500,
            orgs: 800,
            places: 900,
            countries: 150,
        }
    }
}

impl SynthConfig {
    /// A small world for fast tests: ≈180 entities, ≈500 triples.
    pub fn small() -> Self {
        SynthConfig {
            works: 60,
            persons: 50,
            orgs: 30,
            places: 30,
            countries: 10,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, n) in [
            ("works", self.works),
            ("persons", self.persons),
            ("orgs", self.orgs),
            ("places", self.places),
            ("countries", self.countries),
        ] {
            if n < 2 {
                return Err(Error::InvalidConfig(format!(
                    "synthetic layer `{name}` needs at least 2 entities, got {n}"
                )));
            }
        }
        Ok(())
    }
}

fn rel(
    id: &str,
    object_class: EntityClass,
    subject_class_constraint: Option<EntityClass>,
    phrase: &str,
    question_word: &str,
) -> RelationMeta {
    RelationMeta {
        id: id.to_string(),
        label: phrase.to_string(),
        object_class,
        subject_class_constraint,
        cloze_template: format!("The {phrase} of {{subject}} is"),
        question_template: format!("{question_word} is the {phrase} of {{subject}}?"),
        statement_template: format!("The {phrase} of {{subject}} is {{object}}."),
        phrase: Some(phrase.to_string()),
    }
}

fn relation_set() -> Vec<RelationMeta> {
    use EntityClass::*;
    vec![
        rel("created_by", Person, None, "creator", "Who"),
        rel("performed_by", Person, None, "performer", "Who"),
        rel("published_by", Organization, None, "publisher", "What"),
        rel("mentor", Person, None, "mentor", "Who"),
        rel("employer", Organization, None, "employer", "What"),
        rel("birth_city", Location, None, "birth city", "What"),
        rel("founded_by", Person, None, "founder", "Who"),
        rel(
            "headquarters_city",
            Location,
            None,
            "headquarters city",
            "What",
        ),
        rel(
            "parent_org",
            Organization,
            None,
            "parent organization",
            "What",
        ),
        rel("twin_city", Location, None, "twin city", "What"),
        rel("in_country", Country, None, "country", "What"),
        rel(
            "capital_city",
            Location,
            Some(Country),
            "capital city",
            "What",
        ),
    ]
}

fn ids(stem: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{stem}{i:04}")).collect()
}

fn bucket(token: &str) -> usize {
    fnv1a64(token.as_bytes()) as usize % DEFAULT_DIM
}

/// Smallest vocabulary size whose unordered token pairs cover `n` entities.
fn tokens_for(n: usize) -> usize {
    let mut m = 2;
    while m * (m - 1) / 2 < n {
        m += 1;
    }
    m
}

/// Mine `count` tokens of the form `{stem}{salt}` whose hash buckets are
/// pairwise distinct and avoid everything already in `used`. Once all
/// buckets are taken (worlds far beyond the default sizes) further tokens
/// accept whatever bucket they land in.
fn mine_tokens(stem: &str, count: usize, used: &mut BTreeSet<usize>) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    let mut salt = 0usize;
    while out.len() < count {
        let token = format!("{stem}{salt}");
        salt += 1;
        if used.len() < DEFAULT_DIM && !used.insert(bucket(&token)) {
            continue;
        }
        out.push(token);
    }
    out
}

/// Two-token entity labels over a bucket-disjoint vocabulary. With every
/// token in the world occupying its own hash bucket, bag-of-words cosine
/// over the default embedding is exact: a retrieval query always scores the
/// entry about its own subject strictly above every other entry, no matter
/// how many edits share the batch.
fn labels(stem: &str, n: usize, used: &mut BTreeSet<usize>) -> Vec<String> {
    let tokens = mine_tokens(stem, tokens_for(n), used);
    let mut out = Vec::with_capacity(n);
    'outer: for i in 0..tokens.len() {
        for j in (i + 1)..tokens.len() {
            if out.len() == n {
                break 'outer;
            }
            out.push(format!("{} {}", tokens[i], tokens[j]));
        }
    }
    out
}

/// Buckets of every word appearing in the relation templates (plus the
/// placeholder words, which cost two spare buckets and no special casing).
fn reserved_buckets(relations: &[RelationMeta]) -> BTreeSet<usize> {
    let mut used = BTreeSet::new();
    for meta in relations {
        for text in [
            &meta.cloze_template,
            &meta.question_template,
            &meta.statement_template,
        ] {
            for token in tokenize(text) {
                used.insert(bucket(&token));
            }
        }
    }
    used
}

fn pick(rng: &mut ChaCha8Rng, pool: &[String]) -> String {
    pool.choose(rng)
        .expect("pool never empty after validation")
        .clone()
}

fn pick_other(rng: &mut ChaCha8Rng, pool: &[String], not: &str) -> String {
    loop {
        let candidate = pick(rng, pool);
        if candidate != not {
            return candidate;
        }
    }
}

/// Generate the synthetic world. Every subject carries exactly one object
/// per applicable relation, so the graph is functional and snapshot diffs
/// are exact. Same seed, same graph.
pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<KnowledgeGraph> {
    cfg.validate()?;
    let relations = relation_set();
    let mut rng = sub_stream(seed, "synth-graph");
    let works = ids("work", cfg.works);
    let persons = ids("pers", cfg.persons);
    let orgs = ids("orgn", cfg.orgs);
    let places = ids("loct", cfg.places);
    let countries = ids("ctry", cfg.countries);
    let mut used = reserved_buckets(&relations);
    let work_labels = labels("workx", cfg.works, &mut used);
    let person_labels = labels("persx", cfg.persons, &mut used);
    let org_labels = labels("orgx", cfg.orgs, &mut used);
    let place_labels = labels("loctx", cfg.places, &mut used);
    let country_labels = labels("ctryx", cfg.countries, &mut used);

    let mut triples = Vec::new();
    for w in &works {
        triples.push(Triple::new(w, "created_by", pick(&mut rng, &persons)));
        triples.push(Triple::new(w, "performed_by", pick(&mut rng, &persons)));
        triples.push(Triple::new(w, "published_by", pick(&mut rng, &orgs)));
    }
    for p in &persons {
        triples.push(Triple::new(p, "mentor", pick_other(&mut rng, &persons, p)));
        triples.push(Triple::new(p, "employer", pick(&mut rng, &orgs)));
        triples.push(Triple::new(p, "birth_city", pick(&mut rng, &places)));
    }
    for o in &orgs {
        triples.push(Triple::new(o, "founded_by", pick(&mut rng, &persons)));
        triples.push(Triple::new(o, "headquarters_city", pick(&mut rng, &places)));
        triples.push(Triple::new(o, "parent_org", pick_other(&mut rng, &orgs, o)));
    }
    for l in &places {
        triples.push(Triple::new(
            l,
            "twin_city",
            pick_other(&mut rng, &places, l),
        ));
        triples.push(Triple::new(l, "in_country", pick(&mut rng, &countries)));
    }
    for c in &countries {
        triples.push(Triple::new(c, "capital_city", pick(&mut rng, &places)));
    }

    let mut entities = Vec::new();
    for (pool, names, class) in [
        (&works, &work_labels, EntityClass::Other),
        (&persons, &person_labels, EntityClass::Person),
        (&orgs, &org_labels, EntityClass::Organization),
        (&places, &place_labels, EntityClass::Location),
        (&countries, &country_labels, EntityClass::Country),
    ] {
        for (id, name) in pool.iter().zip(names.iter()) {
            entities.push(EntityRecord {
                id: id.clone(),
                label: Some(name.clone()),
                class: Some(class),
            });
        }
    }

    KnowledgeGraph::from_parts("synthetic", relations, entities, triples)
}

/// Where a corpus came from: sampling counters per hop count plus the
/// edit-attachment counters.
#[derive(Clone, Debug, Default, Serialize)]
pub struct CorpusReport {
    pub requested_per_hop: usize,
    pub chain_stats: BTreeMap<usize, SampleStats>,
    pub build_stats: BuildStats,
    pub instances: usize,
}

/// Sample `per_hop` unique chains for each hop count in 2..=4 and attach
/// conflict-free counterfactual edits. Randomness flows through the
/// `sampler` and `edits` sub-streams of `seed`.
pub fn build_corpus(
    g: &KnowledgeGraph,
    per_hop: usize,
    seed: u64,
) -> Result<(Vec<Instance>, CorpusReport)> {
    let mut report = CorpusReport {
        requested_per_hop: per_hop,
        ..CorpusReport::default()
    };
    let mut chains = Vec::new();
    let mut rng = sub_stream(seed, "sampler");
    for hops in 2..=4 {
        let (mut found, stats) =
            sampler::sample_unique_chains(g, hops, per_hop, &mut rng, per_hop.saturating_mul(400))?;
        report.chain_stats.insert(hops, stats);
        chains.append(&mut found);
    }
    let mut rng = sub_stream(seed, "edits");
    let (instances, build_stats) = edits::build_instances(g, &chains, &mut rng, 25)?;
    report.build_stats = build_stats;
    report.instances = instances.len();
    Ok((instances, report))
}

/// Rewrite up to `count` randomly chosen facts to a different object drawn
/// from the same relation's object pool, returning the new snapshot and the
/// exact edits applied. Facts whose relation has only one possible object
/// are skipped, so fewer than `count` edits may come back.
pub fn perturb(g: &KnowledgeGraph, count: usize, seed: u64) -> Result<(KnowledgeGraph, Vec<Edit>)> {
    let mut rng = sub_stream(seed, "perturb");
    let indices: Vec<usize> = (0..g.triple_count()).collect();
    let chosen: Vec<usize> = indices
        .choose_multiple(&mut rng, count.min(g.triple_count()))
        .copied()
        .collect();
    let mut edits = Vec::new();
    for i in chosen {
        let t = &g.triples()[i];
        let pool: Vec<String> = g
            .objects_of_relation(&t.relation)
            .iter()
            .filter(|o| **o != t.object)
            .cloned()
            .collect();
        if pool.is_empty() {
            continue;
        }
        edits.push(Edit {
            subject: t.subject.clone(),
            relation: t.relation.clone(),
            old: t.object.clone(),
            new: pick(&mut rng, &pool),
        });
    }
    edits.sort_by(|a, b| (&a.subject, &a.relation).cmp(&(&b.subject, &b.relation)));
    let perturbed = g.apply_edits(&edits)?;
    Ok((perturbed, edits))
}

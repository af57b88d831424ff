//! Immutable knowledge-graph store: tab-separated triples plus a JSON
//! relation registry, with forward indexes, degree-based subgraph
//! restriction, and snapshot diffing.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::edits::Edit;
use crate::error::{Error, Result};
use crate::templates;

pub const SUBJECT_SLOT: &str = "{subject}";
pub const OBJECT_SLOT: &str = "{object}";

/// Coarse entity/object taxonomy used by the chain constraints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityClass {
    Person,
    Location,
    Country,
    Organization,
    Other,
}

/// One (subject, relation, object) assertion. Fields hold ids; labels live
/// in the owning graph.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl Triple {
    pub fn new(
        subject: impl Into<String>,
        relation: impl Into<String>,
        object: impl Into<String>,
    ) -> Self {
        Triple {
            subject: subject.into(),
            relation: relation.into(),
            object: object.into(),
        }
    }
}

/// Registry record for one relation: identity, typing, and the natural
/// language templates every renderer draws from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationMeta {
    pub id: String,
    pub label: String,
    pub object_class: EntityClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_class_constraint: Option<EntityClass>,
    /// Cloze prompt with one `{subject}` slot, e.g. "The capital city of {subject} is".
    pub cloze_template: String,
    /// Question with one `{subject}` slot, e.g. "What is the capital city of {subject}?".
    pub question_template: String,
    /// Declarative statement with `{subject}` and `{object}` slots.
    pub statement_template: String,
    /// Noun fragment used when composing multi-hop questions ("capital city").
    /// Defaults to the label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrase: Option<String>,
}

impl RelationMeta {
    pub fn phrase(&self) -> &str {
        self.phrase.as_deref().unwrap_or(&self.label)
    }
}

/// Optional declared metadata for an entity; anything undeclared defaults to
/// label = id and an inferred class set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<EntityClass>,
}

/// The registry file is either a bare array of relations or an object with
/// `relations` and optional `entities`.
#[derive(Deserialize)]
#[serde(untagged)]
enum RegistryFile {
    Flat(Vec<RelationMeta>),
    Full {
        relations: Vec<RelationMeta>,
        #[serde(default)]
        entities: Vec<EntityRecord>,
    },
}

/// Immutable snapshot of a knowledge graph with prebuilt indexes.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    snapshot: String,
    triples: Vec<Triple>,
    relations: BTreeMap<String, RelationMeta>,
    entities: BTreeSet<String>,
    declared_labels: BTreeMap<String, String>,
    declared_classes: BTreeMap<String, EntityClass>,
    /// subject -> relation -> lexicographically ordered objects
    forward: BTreeMap<String, BTreeMap<String, Vec<String>>>,
    /// relation -> all distinct objects appearing with it (counterfactual pool)
    relation_objects: BTreeMap<String, Vec<String>>,
    classes: BTreeMap<String, BTreeSet<EntityClass>>,
    degrees: BTreeMap<String, usize>,
    /// normalized label -> entity id (lowest id wins on collision)
    label_index: BTreeMap<String, String>,
}

fn validate_template(
    relation: &str,
    which: &str,
    template: &str,
    object_slots: usize,
) -> Result<()> {
    if template.trim().is_empty() {
        return Err(Error::MissingTemplate {
            relation: relation.to_string(),
            which: which.to_string(),
        });
    }
    let subjects = template.matches(SUBJECT_SLOT).count();
    let objects = template.matches(OBJECT_SLOT).count();
    if subjects != 1 || objects != object_slots {
        let expected = if object_slots == 0 {
            format!("exactly one {SUBJECT_SLOT} slot")
        } else {
            format!("exactly one {SUBJECT_SLOT} and one {OBJECT_SLOT} slot")
        };
        return Err(Error::BadTemplate {
            relation: relation.to_string(),
            which: which.to_string(),
            expected,
            template: template.to_string(),
        });
    }
    Ok(())
}

impl KnowledgeGraph {
    /// Load a graph from a triple TSV (`s \t r \t o`, UTF-8, one per line,
    /// duplicate lines collapse) and a relation-registry JSON file.
    pub fn load(triples_path: &Path, registry_path: &Path, snapshot: &str) -> Result<Self> {
        let registry_text = std::fs::read_to_string(registry_path)?;
        let registry: RegistryFile =
            serde_json::from_str(&registry_text).map_err(|e| Error::Parse {
                path: registry_path.to_path_buf(),
                line: e.line(),
                message: e.to_string(),
            })?;
        let (relations, entities) = match registry {
            RegistryFile::Flat(relations) => (relations, Vec::new()),
            RegistryFile::Full {
                relations,
                entities,
            } => (relations, entities),
        };

        let text = std::fs::read_to_string(triples_path)?;
        let mut triples = Vec::new();
        let known: BTreeSet<&str> = relations.iter().map(|r| r.id.as_str()).collect();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
                return Err(Error::Parse {
                    path: triples_path.to_path_buf(),
                    line: line_no,
                    message: format!("expected 3 tab-separated fields, got {}", fields.len()),
                });
            }
            if !known.contains(fields[1]) {
                return Err(Error::Parse {
                    path: triples_path.to_path_buf(),
                    line: line_no,
                    message: format!("unknown relation `{}`", fields[1]),
                });
            }
            triples.push(Triple::new(fields[0], fields[1], fields[2]));
        }

        Self::from_parts(snapshot, relations, entities, triples)
    }

    /// Build a graph from in-memory parts (fixtures, synthetic generation).
    pub fn from_parts(
        snapshot: &str,
        relations: Vec<RelationMeta>,
        entities: Vec<EntityRecord>,
        triples: Vec<Triple>,
    ) -> Result<Self> {
        let mut registry = BTreeMap::new();
        for meta in relations {
            validate_template(&meta.id, "cloze", &meta.cloze_template, 0)?;
            validate_template(&meta.id, "question", &meta.question_template, 0)?;
            validate_template(&meta.id, "statement", &meta.statement_template, 1)?;
            let id = meta.id.clone();
            if registry.insert(id.clone(), meta).is_some() {
                return Err(Error::Parse {
                    path: "<registry>".into(),
                    line: 0,
                    message: format!("duplicate relation id `{id}`"),
                });
            }
        }

        let mut set: BTreeSet<Triple> = BTreeSet::new();
        for t in triples {
            if !registry.contains_key(&t.relation) {
                return Err(Error::UnknownRelation(t.relation));
            }
            set.insert(t);
        }
        let triples: Vec<Triple> = set.into_iter().collect();

        let mut declared_labels = BTreeMap::new();
        let mut declared_classes = BTreeMap::new();
        let mut entity_set = BTreeSet::new();
        for rec in entities {
            if let Some(label) = rec.label {
                declared_labels.insert(rec.id.clone(), label);
            }
            if let Some(class) = rec.class {
                declared_classes.insert(rec.id.clone(), class);
            }
            entity_set.insert(rec.id);
        }

        let mut forward: BTreeMap<String, BTreeMap<String, Vec<String>>> = BTreeMap::new();
        let mut relation_objects: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut degrees: BTreeMap<String, usize> = BTreeMap::new();
        let mut classes: BTreeMap<String, BTreeSet<EntityClass>> = BTreeMap::new();
        for (id, class) in &declared_classes {
            classes.entry(id.clone()).or_default().insert(*class);
        }
        for t in &triples {
            entity_set.insert(t.subject.clone());
            entity_set.insert(t.object.clone());
            forward
                .entry(t.subject.clone())
                .or_default()
                .entry(t.relation.clone())
                .or_default()
                .push(t.object.clone());
            relation_objects
                .entry(t.relation.clone())
                .or_default()
                .insert(t.object.clone());
            *degrees.entry(t.subject.clone()).or_default() += 1;
            if t.object != t.subject {
                *degrees.entry(t.object.clone()).or_default() += 1;
            }
            let object_class = registry[&t.relation].object_class;
            classes
                .entry(t.object.clone())
                .or_default()
                .insert(object_class);
        }
        for rels in forward.values_mut() {
            for objects in rels.values_mut() {
                objects.sort();
                objects.dedup();
            }
        }

        let mut label_index = BTreeMap::new();
        for id in &entity_set {
            let label = declared_labels.get(id).unwrap_or(id);
            label_index
                .entry(templates::normalize(label))
                .or_insert_with(|| id.clone());
        }

        Ok(KnowledgeGraph {
            snapshot: snapshot.to_string(),
            triples,
            relations: registry,
            entities: entity_set,
            declared_labels,
            declared_classes,
            forward,
            relation_objects: relation_objects
                .into_iter()
                .map(|(r, objs)| (r, objs.into_iter().collect()))
                .collect(),
            classes,
            degrees,
            label_index,
        })
    }

    pub fn snapshot(&self) -> &str {
        &self.snapshot
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = &str> {
        self.entities.iter().map(String::as_str)
    }

    pub fn contains_entity(&self, id: &str) -> bool {
        self.entities.contains(id)
    }

    pub fn relation(&self, id: &str) -> Result<&RelationMeta> {
        self.relations
            .get(id)
            .ok_or_else(|| Error::UnknownRelation(id.to_string()))
    }

    pub fn relations(&self) -> impl Iterator<Item = &RelationMeta> {
        self.relations.values()
    }

    /// Human-readable label; defaults to the id itself.
    pub fn label<'a>(&'a self, id: &'a str) -> &'a str {
        self.declared_labels
            .get(id)
            .map(String::as_str)
            .unwrap_or(id)
    }

    /// Entity id for a label, matched after normalization.
    pub fn entity_by_label(&self, label: &str) -> Option<&str> {
        self.label_index
            .get(&templates::normalize(label))
            .map(String::as_str)
    }

    /// Declared plus inferred classes (an entity gains the object class of
    /// every relation it appears under as an object).
    pub fn entity_classes(&self, id: &str) -> Option<&BTreeSet<EntityClass>> {
        self.classes.get(id)
    }

    /// Number of triples incident to the entity (popularity proxy).
    pub fn degree(&self, id: &str) -> usize {
        self.degrees.get(id).copied().unwrap_or(0)
    }

    /// Ordered objects for (s, r); errors on ids that do not resolve.
    pub fn query_objects(&self, subject: &str, relation: &str) -> Result<&[String]> {
        if !self.relations.contains_key(relation) {
            return Err(Error::UnknownRelation(relation.to_string()));
        }
        if !self.entities.contains(subject) {
            return Err(Error::UnknownEntity(subject.to_string()));
        }
        Ok(self.objects(subject, relation))
    }

    /// Like [`query_objects`](Self::query_objects) but total: unknown ids
    /// yield an empty slice. For callers holding ids taken from this graph.
    pub fn objects(&self, subject: &str, relation: &str) -> &[String] {
        self.forward
            .get(subject)
            .and_then(|rels| rels.get(relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Canonical (lexicographically first) object for (s, r), if any.
    pub fn first_object(&self, subject: &str, relation: &str) -> Option<&str> {
        self.objects(subject, relation).first().map(String::as_str)
    }

    /// All outgoing (relation, object) links of a subject, in deterministic
    /// (relation, object) order.
    pub fn outgoing(&self, subject: &str) -> Vec<(&str, &str)> {
        self.forward
            .get(subject)
            .map(|rels| {
                rels.iter()
                    .flat_map(|(r, objs)| objs.iter().map(move |o| (r.as_str(), o.as_str())))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Distinct objects appearing anywhere with this relation (the draw pool
    /// for counterfactual objects).
    pub fn objects_of_relation(&self, relation: &str) -> &[String] {
        self.relation_objects
            .get(relation)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Keep only triples whose relation is selected and whose endpoints both
    /// rank within the top ⌈top_fraction · |entities|⌉ by degree (ties broken
    /// by lexicographic id). The result may be empty; callers should warn.
    pub fn restrict_subgraph(&self, relations: &[String], top_fraction: f64) -> Result<Self> {
        if !(top_fraction > 0.0 && top_fraction <= 1.0) {
            return Err(Error::InvalidTopFraction(top_fraction));
        }
        let selected: BTreeSet<&str> = relations
            .iter()
            .map(|r| self.relation(r).map(|meta| meta.id.as_str()))
            .collect::<Result<_>>()?;

        let mut ranked: Vec<&String> = self.entities.iter().collect();
        ranked.sort_by(|a, b| self.degree(b).cmp(&self.degree(a)).then_with(|| a.cmp(b)));
        let keep_n =
            ((top_fraction * self.entities.len() as f64).ceil() as usize).min(self.entities.len());
        let kept: BTreeSet<&str> = ranked[..keep_n].iter().map(|s| s.as_str()).collect();

        let triples: Vec<Triple> = self
            .triples
            .iter()
            .filter(|t| {
                selected.contains(t.relation.as_str())
                    && kept.contains(t.subject.as_str())
                    && kept.contains(t.object.as_str())
            })
            .cloned()
            .collect();

        let entities = self
            .declared_records()
            .into_iter()
            .filter(|rec| kept.contains(rec.id.as_str()))
            .collect();
        Self::from_parts(
            &self.snapshot,
            self.relations.values().cloned().collect(),
            entities,
            triples,
        )
    }

    /// Fact updates between two snapshots: for every (s, r) over the selected
    /// relations present in both graphs whose canonical object changed, emit
    /// an edit old → new, sorted by (s, r). Pairs present in only one
    /// snapshot are skipped.
    pub fn diff_snapshots(&self, new: &KnowledgeGraph, relations: &[String]) -> Result<Vec<Edit>> {
        let mut selected = BTreeSet::new();
        for r in relations {
            let old_meta = self.relation(r)?;
            let new_meta = new.relation(r)?;
            if old_meta != new_meta {
                return Err(Error::RegistryMismatch {
                    old: self.snapshot.clone(),
                    new: new.snapshot.clone(),
                    relation: r.clone(),
                });
            }
            selected.insert(r.as_str());
        }

        let mut edits = Vec::new();
        for (subject, rels) in &self.forward {
            for (relation, objects) in rels {
                if !selected.contains(relation.as_str()) {
                    continue;
                }
                let old_object = &objects[0];
                if let Some(new_object) = new.first_object(subject, relation) {
                    if new_object != old_object {
                        edits.push(Edit {
                            subject: subject.clone(),
                            relation: relation.clone(),
                            old: old_object.clone(),
                            new: new_object.to_string(),
                        });
                    }
                }
            }
        }
        Ok(edits)
    }

    /// A copy of this graph with each edit applied by replacing the triple
    /// (s, r, old) with (s, r, new).
    pub fn apply_edits(&self, edits: &[Edit]) -> Result<Self> {
        let mut set: BTreeSet<Triple> = self.triples.iter().cloned().collect();
        for e in edits {
            self.relation(&e.relation)?;
            set.remove(&Triple::new(&e.subject, &e.relation, &e.old));
            set.insert(Triple::new(&e.subject, &e.relation, &e.new));
        }
        Self::from_parts(
            &self.snapshot,
            self.relations.values().cloned().collect(),
            self.declared_records(),
            set.into_iter().collect(),
        )
    }

    fn declared_records(&self) -> Vec<EntityRecord> {
        let ids: BTreeSet<&String> = self
            .declared_labels
            .keys()
            .chain(self.declared_classes.keys())
            .collect();
        ids.into_iter()
            .map(|id| EntityRecord {
                id: id.clone(),
                label: self.declared_labels.get(id).cloned(),
                class: self.declared_classes.get(id).copied(),
            })
            .collect()
    }
}
